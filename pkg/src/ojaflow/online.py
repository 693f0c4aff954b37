"""Stochastic online iterations driven by sampled data streams.

Two update modes: the first-order per-column rule (orthogonality tracked but
not enforced) and the exact rule that re-orthonormalizes after every rank-one
push.  Column j's update reads only columns 1..j of the previous iterate, so
a run with fewer columns reproduces the leading columns of a wider run on
the same stream bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    ConfigError,
    DivergenceError,
    RankDeficiencyError,
    ShapeError,
    SigmaAmbiguityError,
)
from .flows import StiefelPoint
from .linalg import SpectralMatrix, as_matrix, orthonormalize
from .stable_manifold import predict_limit

MODES = ("sga", "gso")


class SampleStream:
    """Seeded bounded-support stream with covariance exactly ``a``.

    Draws x = V (s * sqrt(lambda)) with the components of s independent
    uniform on [-sqrt(3), sqrt(3)] (unit variance), so E[x x^T] = A exactly
    and ||x|| never exceeds the support radius sqrt(3 tr A).  Each stream
    owns its generator; identical (a, seed) pairs replay the same samples.
    """

    def __init__(self, a: SpectralMatrix, seed: int):
        self.a = a
        self.seed = int(seed)
        self.rng = np.random.default_rng(self.seed)
        self.count = 0
        self._scale = np.sqrt(a.eigenvalues)

    @property
    def n(self):
        return self.a.dimension

    @property
    def support_radius(self):
        return math.sqrt(3.0 * float(np.sum(self.a.eigenvalues)))

    def draw(self):
        s = self.rng.uniform(-math.sqrt(3.0), math.sqrt(3.0), size=self.n)
        self.count += 1
        return self.a.vectors @ (s * self._scale)


@dataclass(frozen=True)
class LearningSchedule:
    """Step-size rule eta_k, k >= 1.

    Rules: "constant" (eta = base), "inverse-k" (base / (offset + k)), and
    "inverse-k-power" (base / (offset + k)^exponent).  The divergent-sum /
    convergent-square-sum conditions hold for the inverse rules when the
    exponent lies in (1/2, 1].  ``floor`` clips from below.
    """

    rule: str = "inverse-k"
    base: float = 0.05
    exponent: float = 1.0
    offset: float = 100.0
    floor: float = 0.0

    def __post_init__(self):
        if self.rule not in ("constant", "inverse-k", "inverse-k-power"):
            raise ConfigError(f"unknown schedule rule {self.rule!r}")
        if self.base <= 0:
            raise ConfigError("base rate must be positive")
        if self.rule == "inverse-k-power" and not 0.5 < self.exponent <= 1.0:
            raise ConfigError("exponent must lie in (1/2, 1]")
        if self.offset < 0 or self.floor < 0:
            raise ConfigError("offset and floor must be non-negative")

    @classmethod
    def default_for(cls, a: SpectralMatrix):
        """base = 0.5 / lambda_1 over (100 + k)."""
        return cls(rule="inverse-k", base=0.5 / float(a.eigenvalues[0]), offset=100.0)

    def rate(self, k):
        if k < 1:
            raise ConfigError("steps are counted from 1")
        if self.rule == "constant":
            eta = self.base
        elif self.rule == "inverse-k":
            eta = self.base / (self.offset + k)
        else:
            eta = self.base / (self.offset + k) ** self.exponent
        return max(eta, self.floor)

    def max_rate(self):
        return self.rate(1) if self.rule != "constant" else self.base

    def validate_against(self, support_radius):
        """Boundedness safeguard: eta_k * M^2 < 1/2 for every step."""
        worst = self.max_rate() * support_radius**2
        if worst >= 0.5:
            raise ConfigError(
                f"largest step {self.max_rate():.3e} times squared support radius "
                f"gives {worst:.3f} >= 0.5; shrink the base rate"
            )


@dataclass(frozen=True)
class EstimatorState:
    """Iterate and step count of an online run."""

    w: np.ndarray
    k: int = 0

    def __post_init__(self):
        m = as_matrix(self.w, "iterate")
        if m.shape[1] > m.shape[0]:
            raise ShapeError("iterate cannot have more columns than rows")
        object.__setattr__(self, "w", m)
        self.w.setflags(write=False)

    @property
    def n(self):
        return self.w.shape[0]

    @property
    def p(self):
        return self.w.shape[1]

    def orthogonality_defect(self):
        return float(np.linalg.norm(self.w.T @ self.w - np.eye(self.p)))


def sga_step(state: EstimatorState, x, eta):
    """One first-order update: column j moves by
    eta (x . w_j) [x - (x . w_j) w_j - 2 sum_{i<j} (x . w_i) w_i].

    Columns are produced strictly left to right from the previous iterate,
    each computed on contiguous per-column vectors, so the arithmetic for
    column j is identical no matter how many columns follow: a truncated run
    reproduces the leading columns of a wider run bit for bit.
    """
    w = state.w
    xv = np.ascontiguousarray(x, dtype=float)
    if xv.shape != (w.shape[0],):
        raise ShapeError(f"sample shape {xv.shape} does not match iterate rows {w.shape[0]}")
    if not np.all(np.isfinite(xv)):
        raise DivergenceError(f"non-finite sample at eta={eta:.3e}", state.k)
    cols = [np.ascontiguousarray(w[:, j]) for j in range(w.shape[1])]
    y = [float(xv @ c) for c in cols]
    out = np.empty_like(w)
    with np.errstate(over="ignore", invalid="ignore"):
        for j, cj in enumerate(cols):
            direction = xv - y[j] * cj
            for i in range(j):
                direction = direction - (2.0 * y[i]) * cols[i]
            out[:, j] = cj + (eta * y[j]) * direction
    if not np.all(np.isfinite(out)):
        raise DivergenceError(
            f"non-finite update (eta={eta:.3e}, |x|={np.linalg.norm(xv):.3e})", state.k
        )
    return EstimatorState(out, state.k + 1)


def gso_step(state: EstimatorState, x, eta):
    """One exact update: rank-one push then full re-orthonormalization."""
    w = state.w
    xv = np.asarray(x, dtype=float)
    if xv.shape != (w.shape[0],):
        raise ShapeError(f"sample shape {xv.shape} does not match iterate rows {w.shape[0]}")
    pushed = w + eta * np.outer(xv, xv @ w)
    try:
        ortho = orthonormalize(pushed)
    except RankDeficiencyError as exc:
        raise DivergenceError(f"rank collapse after the rank-one push: {exc}", state.k) from None
    return EstimatorState(ortho, state.k + 1)


@dataclass(frozen=True)
class OnlineDiagnostics:
    """Per-stride series recorded during a run (angles in radians)."""

    ks: np.ndarray
    etas: np.ndarray
    angles: np.ndarray  # shape (samples, p)
    orth_defects: np.ndarray
    targets: tuple

    def write_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("k,eta,col,angle_rad,orth_defect\n")
            for row in range(self.ks.shape[0]):
                for col in range(self.angles.shape[1]):
                    fh.write(
                        f"{int(self.ks[row])},{self.etas[row]:.17g},{col + 1},"
                        f"{self.angles[row, col]:.17g},{self.orth_defects[row]:.17g}\n"
                    )


def alignment_targets(w0, a: SpectralMatrix):
    """Which eigen-direction each column is headed to: the sigma-scan
    prediction (applied in the eigenbasis of ``a``) for square starts,
    identity targets otherwise or when the scan is ambiguous."""
    m = np.asarray(getattr(w0, "w", getattr(w0, "q", w0)), dtype=float)
    n, p = m.shape
    if p == n:
        try:
            pred = predict_limit(StiefelPoint(a.vectors.T @ m))
        except (ShapeError, SigmaAmbiguityError):
            return tuple(range(1, p + 1))
        targets = [0] * n
        for direction, col in enumerate(pred.sigma, start=1):
            targets[col - 1] = direction
        return tuple(targets)
    return tuple(range(1, p + 1))


def alignment_error(w, a: SpectralMatrix, targets=None):
    """Sign-agnostic angle between each column and its target eigenvector
    line; columns are normalized first, so the measure tolerates the
    orthogonality drift of the first-order mode."""
    m = np.asarray(getattr(w, "w", getattr(w, "q", w)), dtype=float)
    n, p = m.shape
    if targets is None:
        targets = tuple(range(1, p + 1))
    if len(targets) != p:
        raise ShapeError("one target per column required")
    v = a.vectors
    angles = np.empty(p)
    for j in range(p):
        col = m[:, j]
        norm = np.linalg.norm(col)
        if norm == 0.0 or not math.isfinite(norm):
            angles[j] = math.pi / 2.0
            continue
        cosine = abs(col @ v[:, targets[j] - 1]) / norm
        angles[j] = math.acos(min(1.0, cosine))
    return angles


def run_online(stream, schedule, w0, steps, mode="sga", *, stride=100, targets=None):
    """Drive one seeded run; returns (final state, diagnostics).

    The iterate, schedule, and stream fully determine the run.  Alignment is
    recorded every ``stride`` steps against ``targets`` (defaulting to the
    sigma-scan prediction of the start for square starts, identity columns
    otherwise).
    """
    if mode not in MODES:
        raise ConfigError(f"mode {mode!r} not one of {MODES}")
    if steps < 0:
        raise ConfigError("steps must be non-negative")
    point = w0 if isinstance(w0, StiefelPoint) else StiefelPoint(w0)
    if point.n != stream.n:
        raise ShapeError("start frame rows do not match the stream dimension")
    schedule.validate_against(stream.support_radius)
    if targets is None:
        targets = alignment_targets(point.q, stream.a)
    state = EstimatorState(point.q, 0)
    step_fn = sga_step if mode == "sga" else gso_step
    ks, etas, angles, defects = [], [], [], []

    def record(eta):
        ks.append(state.k)
        etas.append(eta)
        angles.append(alignment_error(state.w, stream.a, targets))
        defects.append(state.orthogonality_defect())

    record(0.0)
    for k in range(1, steps + 1):
        x = stream.draw()
        eta = schedule.rate(k)
        state = step_fn(state, x, eta)
        if k % stride == 0 or k == steps:
            if float(np.max(np.linalg.norm(state.w, axis=0))) > 4.0:
                raise DivergenceError("a column norm left the bounded regime", state.k)
            record(eta)
    diagnostics = OnlineDiagnostics(
        ks=np.asarray(ks, dtype=int),
        etas=np.asarray(etas),
        angles=np.asarray(angles),
        orth_defects=np.asarray(defects),
        targets=tuple(targets),
    )
    return state, diagnostics
