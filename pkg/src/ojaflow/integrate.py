"""Fixed-step structure-aware integration of the matrix flows.

Classical RK4 (optionally with periodic Gram-Schmidt projection back onto
the orthonormal frames) drives any of the fields in :mod:`ojaflow.flows`,
recording per-sample diagnostics and stopping early once the field norm
drops below a convergence threshold.  Runs are deterministic: fixed step,
no adaptivity, bit-reproducible for a given configuration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import IntegrationError, ShapeError
from .flows import equilibrium_distance, nearest_signed_permutation
from .linalg import orthonormalize

METHODS = ("rk4", "rk4-projected", "euler")

#: Orthogonality drift above which a run is aborted as structurally lost.
DEFECT_ABORT = 1e-4


@dataclass(frozen=True)
class IntegratorConfig:
    """Fixed-step integration settings.

    ``max_time`` may be left unset and supplied by rate-aware drivers
    (100 / slowest-rate by default at the call sites that know the
    spectrum).
    """

    method: str = "rk4-projected"
    dt: float = 0.01
    projection_interval: int = 10
    max_time: float = 50.0
    convergence_threshold: float = 1e-9
    sample_stride: int = 10

    def __post_init__(self):
        if self.method not in METHODS:
            raise ShapeError(f"method {self.method!r} not one of {METHODS}")
        if not (self.dt > 0.0 and math.isfinite(self.dt)):
            raise ShapeError("dt must be positive and finite")
        if self.projection_interval < 1:
            raise ShapeError("projection interval must be >= 1")
        if not (self.max_time > 0.0 and math.isfinite(self.max_time)):
            raise ShapeError("max time must be positive and finite")
        if self.convergence_threshold <= 0.0:
            raise ShapeError("convergence threshold must be positive")
        if self.sample_stride < 1:
            raise ShapeError("sample stride must be >= 1")


@dataclass
class Trajectory:
    """Sampled states with diagnostics; times are strictly increasing."""

    times: np.ndarray
    states: np.ndarray
    energy: np.ndarray
    orth_defect: np.ndarray
    field_norm: np.ndarray
    converged: bool
    steps: int

    def __len__(self):
        return self.times.shape[0]

    @property
    def final_state(self):
        return self.states[-1]

    @property
    def final_time(self):
        return float(self.times[-1])

    def write_csv(self, path):
        """Delimited dump: t, q_1_1 ... q_n_p (row major), energy,
        orth_defect, field_norm; 17 significant digits per float."""
        n, p = self.states.shape[1], self.states.shape[2]
        header = ["t"] + [f"q_{i}_{j}" for i in range(1, n + 1) for j in range(1, p + 1)]
        header += ["energy", "orth_defect", "field_norm"]
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(",".join(header) + "\n")
            for k in range(len(self)):
                row = [self.times[k], *self.states[k].reshape(-1)]
                row += [self.energy[k], self.orth_defect[k], self.field_norm[k]]
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def _orth_defect(q):
    return float(np.linalg.norm(q.T @ q - np.eye(q.shape[1])))


def _rk4_step(f, q, dt):
    k1 = f(q)
    k2 = f(q + (0.5 * dt) * k1)
    k3 = f(q + (0.5 * dt) * k2)
    k4 = f(q + dt * k3)
    return q + (dt / 6.0) * (k1 + 2.0 * (k2 + k3) + k4), k1


def integrate(field: Callable, q0, cfg: IntegratorConfig, energy: Callable, *, extra_stop=None):
    """March the field from q0, sampling every ``sample_stride`` steps.

    ``field`` maps a state matrix to its rate; ``energy`` maps a state to
    the scalar recorded in the diagnostics.  Terminates early once the field
    norm at a sample drops below the convergence threshold (and, when given,
    ``extra_stop(state)`` holds too); aborts on non-finite states or an
    orthogonality defect above 1e-4.
    """
    q = np.array(getattr(q0, "q", q0), dtype=float)
    dt = cfg.dt
    total_steps = max(1, int(round(cfg.max_time / dt)))
    times, states, energies, defects, fnorms = [], [], [], [], []
    converged = False

    def record(t, state, fnorm):
        times.append(t)
        states.append(state.copy())
        energies.append(float(energy(state)))
        defects.append(_orth_defect(state))
        fnorms.append(fnorm)

    def stop_here(state, fnorm):
        if fnorm >= cfg.convergence_threshold:
            return False
        return extra_stop is None or bool(extra_stop(state))

    fnorm0 = float(np.linalg.norm(field(q)))
    record(0.0, q, fnorm0)
    if stop_here(q, fnorm0):
        return _finish(times, states, energies, defects, fnorms, True, 0)

    step = 0
    while step < total_steps:
        if cfg.method == "euler":
            rate = field(q)
            q = q + dt * rate
            fnorm = float(np.linalg.norm(rate))
        else:
            q, k1 = _rk4_step(field, q, dt)
            fnorm = float(np.linalg.norm(k1))
        step += 1
        if cfg.method == "rk4-projected" and step % cfg.projection_interval == 0:
            q = orthonormalize(q)
        if not np.all(np.isfinite(q)):
            raise IntegrationError(f"non-finite state at step {step} (t={step * dt:.6g})")
        sample_due = step % cfg.sample_stride == 0 or step == total_steps
        if sample_due:
            defect = _orth_defect(q)
            if defect > DEFECT_ABORT:
                raise IntegrationError(
                    f"orthogonality defect {defect:.3e} exceeded {DEFECT_ABORT:.1e} "
                    f"at step {step} (t={step * dt:.6g})"
                )
            fnorm_now = float(np.linalg.norm(field(q)))
            record(step * dt, q, fnorm_now)
            if stop_here(q, fnorm_now):
                converged = True
                break
    return _finish(times, states, energies, defects, fnorms, converged, step)


def _finish(times, states, energies, defects, fnorms, converged, steps):
    return Trajectory(
        times=np.asarray(times),
        states=np.asarray(states),
        energy=np.asarray(energies),
        orth_defect=np.asarray(defects),
        field_norm=np.asarray(fnorms),
        converged=converged,
        steps=steps,
    )


@dataclass(frozen=True)
class LimitResult:
    """Converged endpoint of a run, snapped to the nearest signed
    permutation when within snapping distance."""

    state: np.ndarray
    snapped: np.ndarray | None
    distance: float
    time: float
    converged: bool


def integrate_to_limit(
    field: Callable,
    q0,
    cfg: IntegratorConfig,
    energy: Callable,
    *,
    snap_tol=1e-6,
):
    """Integrate until the field norm is below threshold and the state is
    within ``snap_tol`` of a signed permutation; returns (LimitResult,
    Trajectory).  Exhausting max_time yields an unconverged result with
    ``snapped=None`` rather than an exception.
    """
    traj = integrate(
        field, q0, cfg, energy, extra_stop=lambda s: equilibrium_distance(s) < snap_tol
    )
    state = traj.final_state
    dist = equilibrium_distance(state)
    if traj.converged and dist < snap_tol:
        target, _, _ = nearest_signed_permutation(state)
        return LimitResult(state, target, dist, traj.final_time, True), traj
    return LimitResult(state, None, dist, traj.final_time, False), traj


@dataclass
class RiccatiTrajectory:
    """Sampled symmetric states of the Riccati evolution."""

    times: np.ndarray
    states: np.ndarray
    field_norm: np.ndarray
    identity_defect: np.ndarray

    def __len__(self):
        return self.times.shape[0]

    @property
    def final_state(self):
        return self.states[-1]

    def write_csv(self, path):
        n = self.states.shape[1]
        header = ["t"] + [f"p_{i}_{j}" for i in range(1, n + 1) for j in range(1, n + 1)]
        header += ["identity_defect", "field_norm"]
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(",".join(header) + "\n")
            for k in range(len(self)):
                row = [self.times[k], *self.states[k].reshape(-1)]
                row += [self.identity_defect[k], self.field_norm[k]]
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def integrate_riccati(a, p0, cfg: IntegratorConfig):
    """RK4 march of dP/dt = AP + PA - 2PAP from a symmetric start."""
    from .flows import _riccati, _square_matrix_of

    amat = _square_matrix_of(a)
    p = np.array(getattr(p0, "matrix", p0), dtype=float)
    if p.shape != amat.shape:
        raise ShapeError("P0 shape does not match the matrix")

    def f(m):
        return _riccati(amat, m)

    dt = cfg.dt
    total_steps = max(1, int(round(cfg.max_time / dt)))
    eye = np.eye(p.shape[0])
    times, states, fnorms, defects = [], [], [], []

    def record(t, state, fnorm):
        times.append(t)
        states.append(state.copy())
        fnorms.append(fnorm)
        defects.append(float(np.linalg.norm(state - eye)))

    record(0.0, p, float(np.linalg.norm(f(p))))
    for step in range(1, total_steps + 1):
        p, k1 = _rk4_step(f, p, dt)
        p = 0.5 * (p + p.T)
        if not np.all(np.isfinite(p)):
            raise IntegrationError(f"non-finite state at step {step}")
        if step % cfg.sample_stride == 0 or step == total_steps:
            record(step * dt, p, float(np.linalg.norm(f(p))))
    return RiccatiTrajectory(
        times=np.asarray(times),
        states=np.asarray(states),
        field_norm=np.asarray(fnorms),
        identity_defect=np.asarray(defects),
    )


def rate_aware_max_time(rates, *, horizon=100.0):
    """Default time budget 100 / (slowest rate)."""
    slowest = float(np.min(np.asarray(getattr(rates, "nu", rates), dtype=float)))
    if slowest <= 0:
        raise ShapeError("rates must be positive")
    return horizon / slowest
