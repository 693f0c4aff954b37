"""Rank analysis of the initial frame: which column converges where.

For an invertible matrix, a recursive leading-minor scan produces a
permutation sigma and nested determinant ratios z_m.  Column sigma_m of the
flow started at Q0 converges to sgn(z_m) e_m, the permutation is constant
along trajectories, and spectral gaps give per-column exponential rates.
All row/column labels on this surface are 1-based.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, SigmaAmbiguityError
from .flows import StiefelPoint
from .linalg import SpectralMatrix, as_matrix, lu_determinant

SIGMA_TOL = 1e-9


def _column_scales(m):
    norms = np.linalg.norm(m, axis=0)
    return np.maximum(norms, np.finfo(float).tiny)


def _require_invertible(m, tol):
    scales = _column_scales(m)
    d = lu_determinant(m)
    if abs(d) <= tol * float(np.prod(scales)):
        raise ShapeError(
            f"matrix is numerically singular (relative determinant {abs(d) / float(np.prod(scales)):.3e})"
        )
    return scales


def sigma_permutation(q, tol=SIGMA_TOL):
    """The recursive first-nonzero-minor permutation of an invertible matrix.

    Stage m picks the smallest unused column label k for which the
    determinant of rows 1..m against the previously chosen columns plus k is
    nonzero.  "Nonzero" means |det| above ``tol`` times the product of the
    participating columns' Euclidean norms, which keeps the test invariant
    under column scaling; if no candidate at some stage clears the
    threshold, a SigmaAmbiguityError reports that stage.
    """
    m = as_matrix(q, "matrix")
    n = m.shape[0]
    if m.shape[1] != n:
        raise ShapeError("square matrix required")
    scales = _require_invertible(m, tol)
    chosen: list[int] = []
    for stage in range(1, n + 1):
        rows = np.arange(stage)
        best = 0.0
        found = None
        for k in range(1, n + 1):
            if k in chosen:
                continue
            cols = np.array(chosen + [k]) - 1
            d = lu_determinant(m[np.ix_(rows, cols)])
            ratio = abs(d) / float(np.prod(scales[cols]))
            if ratio > tol:
                found = k
                break
            best = max(best, ratio)
        if found is None:
            raise SigmaAmbiguityError(stage, best)
        chosen.append(found)
    return tuple(chosen)


def _prefixes(sigma):
    return tuple(tuple(sorted(sigma[:m])) for m in range(1, len(sigma) + 1))


def z_values(q, tol=SIGMA_TOL):
    """Nested subdeterminant ratios z_1..z_n attached to the sigma scan.

    z_1 is the first-row pivot entry itself; z_m divides the minor on rows
    1..m and the ascending sorted column prefix i_m by the previous minor.
    All values are nonzero whenever sigma is computable.
    """
    m = as_matrix(q, "matrix")
    sigma = sigma_permutation(m, tol)
    prefixes = _prefixes(sigma)
    n = len(sigma)
    z = np.empty(n)
    z[0] = m[0, sigma[0] - 1]
    prev = z[0]
    for k in range(2, n + 1):
        cols = np.array(prefixes[k - 1]) - 1
        minor = lu_determinant(m[np.ix_(np.arange(k), cols)])
        z[k - 1] = minor / prev
        prev = minor
    return z


@dataclass(frozen=True)
class LimitPrediction:
    """Predicted limit of the flow from one initial frame.

    ``sigma`` maps eigen-direction m to the 1-based column sigma[m-1] that
    converges to it; ``signs[m-1]`` fixes the orientation; ``limit`` is the
    realized signed permutation matrix with column sigma[m-1] equal to
    signs[m-1] times the m-th basis vector.
    """

    sigma: tuple
    prefixes: tuple
    z: np.ndarray
    signs: tuple
    limit: np.ndarray

    def __post_init__(self):
        n = len(self.sigma)
        if sorted(self.sigma) != list(range(1, n + 1)):
            raise ShapeError("sigma must be a bijection on 1..n")
        if np.any(self.z == 0.0):
            raise ShapeError("all z values must be nonzero")
        for m in range(1, n + 1):
            if self.prefixes[m - 1] != tuple(sorted(self.sigma[:m])):
                raise ShapeError("prefixes must be ascending sorts of sigma prefixes")
        self.z.setflags(write=False)
        self.limit.setflags(write=False)

    def as_dict(self):
        return {
            "sigma": list(self.sigma),
            "z": [float(v) for v in self.z],
            "signs": list(self.signs),
            "limit": [[float(v) for v in row] for row in self.limit],
        }


def predict_limit(q0, tol=SIGMA_TOL):
    """Limit frame of the flow started at an orthogonal Q0 (no integration)."""
    point = q0 if isinstance(q0, StiefelPoint) else StiefelPoint(q0)
    if not point.is_square:
        raise ShapeError("limit prediction needs the square case")
    m = point.q
    sigma = sigma_permutation(m, tol)
    z = z_values(m, tol)
    signs = tuple(1 if v > 0 else -1 for v in z)
    n = len(sigma)
    limit = np.zeros((n, n))
    for mm in range(1, n + 1):
        limit[mm - 1, sigma[mm - 1] - 1] = signs[mm - 1]
    return LimitPrediction(sigma, _prefixes(sigma), z, signs, limit)


def rank_identity_check(q, m, j, *, rank_tol=1e-9, tol=SIGMA_TOL):
    """Verify rank(Q[1..m; 1..j]) + #{k <= m : sigma_k(Q) > j} == m.

    Rank is measured by singular values above ``rank_tol`` times the largest
    one.
    """
    mat = as_matrix(q, "matrix")
    n = mat.shape[0]
    if not (1 <= m <= n and 1 <= j <= n):
        raise ShapeError(f"(m, j) = ({m}, {j}) out of range 1..{n}")
    sigma = sigma_permutation(mat, tol)
    sub = mat[:m, :j]
    svals = np.linalg.svd(sub, compute_uv=False)
    rank = int(np.sum(svals > rank_tol * max(svals[0], np.finfo(float).tiny)))
    excess = sum(1 for k in range(m) if sigma[k] > j)
    return rank + excess == m


def is_stable_basin(q0, tol=SIGMA_TOL):
    """Whether every leading principal minor of Q0 is (robustly) nonzero,
    i.e. the start lies in the attraction region of a diagonal-sign limit."""
    m = _point_as_array_square(q0)
    scales = _column_scales(m)
    for k in range(1, m.shape[0] + 1):
        d = lu_determinant(m[:k, :k])
        if abs(d) <= tol * float(np.prod(scales[:k])):
            return False
    return True


def _point_as_array_square(q):
    m = q.q if isinstance(q, StiefelPoint) else as_matrix(q, "matrix")
    if m.shape[0] != m.shape[1]:
        raise ShapeError("square matrix required")
    return m


@dataclass(frozen=True)
class RateVector:
    """Per-column exponential rates: running minima of the spectral gaps."""

    nu: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.nu, dtype=float)
        if v.ndim != 1 or v.size < 2:
            raise ShapeError("rate vector needs at least two entries")
        if np.any(v <= 0.0):
            raise ShapeError("rates must be positive")
        if np.any(v[1:-1] > v[:-2]):
            raise ShapeError("rates must be non-increasing")
        if v[-1] != v[-2]:
            raise ShapeError("last rate must repeat the second-to-last")
        object.__setattr__(self, "nu", v)
        self.nu.setflags(write=False)

    def bound_for_entry(self, i, j):
        """Slope bound -2 nu_{min(i, j)} for entry (i, j), 1-based."""
        return -2.0 * float(self.nu[min(i, j) - 1])


def convergence_rates(a, *, min_gap=1e-8):
    """nu_k = min of the first k spectral gaps, with the last rate repeated."""
    if not isinstance(a, SpectralMatrix):
        a = SpectralMatrix.from_symmetric(a)
    lam = a.eigenvalues
    if lam.size < 2:
        raise ShapeError("rates need at least two eigenvalues")
    gaps = lam[:-1] - lam[1:]
    if gaps.min() < min_gap:
        raise ShapeError(f"spectral gap {gaps.min():.3e} below minimum {min_gap:.1e}")
    nu = np.minimum.accumulate(gaps)
    return RateVector(np.append(nu, nu[-1]))


@dataclass(frozen=True)
class EntryRateReport:
    """Fitted decay of one squared-entry residual against its bound."""

    i: int
    j: int
    slope: float
    bound: float
    verdict: str  # "pass" | "fail" | "floor"


@dataclass(frozen=True)
class RateVerification:
    entries: tuple
    window: tuple

    @property
    def all_pass(self):
        return all(e.verdict in ("pass", "floor") for e in self.entries)

    def failures(self):
        return [e for e in self.entries if e.verdict == "fail"]


def verify_exponential(
    traj,
    rates: RateVector,
    window=None,
    *,
    slack=0.1,
    floor=1e-12,
    min_samples=10,
    settle_residual=1e-3,
):
    """Check every entry's squared residual |q_{ij}^2 - delta_{ij}| decays at
    least as fast as its spectral-gap bound.

    The fit window defaults to the last half of the samples recorded after
    the energy comes within ``settle_residual`` of its final value.  Entries
    whose residual stays below ``floor`` in the window are reported as
    "floor"; otherwise the least-squares slope of log residual must not
    exceed ``bound * (1 - slack)``.
    """
    times = np.asarray(traj.times, dtype=float)
    states = np.asarray(traj.states, dtype=float)
    if window is None:
        energy = np.asarray(traj.energy, dtype=float)
        settled = np.nonzero(energy[-1] - energy < settle_residual)[0]
        if settled.size == 0:
            raise ShapeError("trajectory never settles; cannot choose a window")
        start = settled[0]
        start = start + (times.size - start) // 2
        window = (float(times[start]), float(times[-1]))
    lo, hi = window
    mask = (times >= lo) & (times <= hi)
    if int(mask.sum()) < min_samples:
        raise ShapeError(
            f"window [{lo:.3g}, {hi:.3g}] holds {int(mask.sum())} samples; need {min_samples}"
        )
    tw = times[mask]
    sw = states[mask]
    n = states.shape[1]
    entries = []
    for i in range(1, n + 1):
        for j in range(1, n + 1):
            delta = 1.0 if i == j else 0.0
            resid = np.abs(sw[:, i - 1, j - 1] ** 2 - delta)
            bound = rates.bound_for_entry(i, j)
            above = resid >= floor
            if int(above.sum()) < 3:
                entries.append(EntryRateReport(i, j, math.nan, bound, "floor"))
                continue
            slope = float(np.polyfit(tw[above], np.log(resid[above]), 1)[0])
            verdict = "pass" if slope <= bound * (1.0 - slack) else "fail"
            entries.append(EntryRateReport(i, j, slope, bound, verdict))
    return RateVerification(tuple(entries), (float(lo), float(hi)))


@dataclass(frozen=True)
class SigmaInvarianceReport:
    """Outcome of confirming the start's sigma at every trajectory sample."""

    ok: bool
    reference: tuple
    first_violation_time: float | None
    indeterminate_times: tuple

    def __bool__(self):
        return self.ok


def _confirm_sigma(m, reference, tol):
    """Classify one state against a reference permutation.

    "match": every stage's defining pivot clears the threshold and no
    earlier candidate does.  "violation": a candidate the reference skips is
    confidently nonzero.  "indeterminate": a defining pivot sits below the
    threshold, so the state neither confirms nor refutes the reference.
    """
    scales = _column_scales(m)
    chosen: list[int] = []
    for stage, target in enumerate(reference, start=1):
        rows = np.arange(stage)
        for k in range(1, target + 1):
            if k in chosen:
                continue
            cols = np.array(chosen + [k]) - 1
            d = lu_determinant(m[np.ix_(rows, cols)])
            ratio = abs(d) / float(np.prod(scales[cols]))
            if k == target:
                if ratio <= tol:
                    return "indeterminate"
                chosen.append(k)
            elif ratio > tol:
                return "violation"
    return "match"


def sigma_invariance_check(traj, tol=SIGMA_TOL, reference=None):
    """Confirm the sigma permutation never changes along a trajectory.

    Each sample is checked against ``reference`` (default: the scan of the
    first sample).  Samples whose defining pivots fall below tolerance are
    recorded as indeterminate with their times rather than failed; a sample
    whose pivots confidently select a different permutation fails the check
    and reports the first such time.
    """
    times = np.asarray(traj.times, dtype=float)
    states = np.asarray(traj.states, dtype=float)
    if reference is None:
        reference = sigma_permutation(states[0], tol)
    indeterminate = []
    for t, q in zip(times, states):
        verdict = _confirm_sigma(q, reference, tol)
        if verdict == "indeterminate":
            indeterminate.append(float(t))
        elif verdict == "violation":
            return SigmaInvarianceReport(False, reference, float(t), tuple(indeterminate))
    return SigmaInvarianceReport(True, reference, None, tuple(indeterminate))
