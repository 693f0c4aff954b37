"""Vector fields on the orthogonal group and their supporting geometry.

The central objects: the antisymmetrized bracket Sigma(A, Q), the
orthogonality-preserving field F(Q) = Q Sigma(A, Q), the weighted-trace
gradient flow AQN - QNQ^T AQ, dissipative/Hamiltonian combinations of the
two under either the Euclidean metric or the Lyapunov-compatible metric, and
the matrix Riccati equation governing QQ^T off the manifold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Callable

import numpy as np

from .errors import (
    ConditioningError,
    MetricDegeneracyError,
    PivotError,
    ShapeError,
)
from .linalg import (
    SpectralMatrix,
    as_matrix,
    check_symmetric,
    cholesky_lower,
)

FLOW_NAMES = ("sga", "brockett", "llg-tildeg", "llg-euclid")


def frobenius_inner(x, y):
    return float(np.sum(np.asarray(x) * np.asarray(y)))


def _square_matrix_of(a, name="matrix"):
    """Accept a SpectralMatrix or a symmetric ndarray."""
    if isinstance(a, SpectralMatrix):
        return a.matrix
    return check_symmetric(a, name=name)


@dataclass(frozen=True)
class StiefelPoint:
    """An n-by-p matrix with orthonormal columns (p = n is the square case)."""

    q: np.ndarray
    orth_tol: float = 1e-8

    def __post_init__(self):
        m = as_matrix(self.q, "Stiefel point")
        n, p = m.shape
        if p > n:
            raise ShapeError(f"need p <= n, got shape {m.shape}")
        defect = np.linalg.norm(m.T @ m - np.eye(p))
        if defect > self.orth_tol:
            raise ShapeError(
                f"columns are not orthonormal: defect {defect:.3e} > {self.orth_tol:.1e}"
            )
        object.__setattr__(self, "q", m)
        self.q.setflags(write=False)

    @property
    def n(self):
        return self.q.shape[0]

    @property
    def p(self):
        return self.q.shape[1]

    @property
    def is_square(self):
        return self.q.shape[0] == self.q.shape[1]

    def orthogonality_defect(self):
        return float(np.linalg.norm(self.q.T @ self.q - np.eye(self.p)))


def _point_matrix(q, *, square=None):
    m = q.q if isinstance(q, StiefelPoint) else as_matrix(q, "Stiefel point")
    if square is True and m.shape[0] != m.shape[1]:
        raise ShapeError(f"square orthogonal matrix required, got shape {m.shape}")
    return m


@dataclass(frozen=True)
class WeightVector:
    """Strictly decreasing positive weights defining the diagonal weight matrix."""

    weights: np.ndarray
    min_gap: float = 1e-12

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or w.size == 0:
            raise ShapeError("weights must be a non-empty vector")
        if w.size > 1 and np.min(w[:-1] - w[1:]) < self.min_gap:
            raise ShapeError(
                f"weights must decrease by at least {self.min_gap:.1e} per step"
            )
        object.__setattr__(self, "weights", w)
        self.weights.setflags(write=False)

    @classmethod
    def default(cls, n):
        """Integer weights n, n-1, ..., 1."""
        return cls(np.arange(n, 0, -1, dtype=float))

    @property
    def n(self):
        return self.weights.shape[0]

    def matrix(self):
        return np.diag(self.weights)


def _weights_of(n_weights, dim):
    if n_weights is None:
        return WeightVector.default(dim).weights
    if isinstance(n_weights, WeightVector):
        w = n_weights.weights
    else:
        w = WeightVector(np.asarray(n_weights, dtype=float)).weights
    if w.shape[0] != dim:
        raise ShapeError(f"weight length {w.shape[0]} does not match dimension {dim}")
    return w


@dataclass(frozen=True)
class TangentVector:
    """A matrix X tangent to the orthogonal group at the base point Q,
    i.e. Q^T X is skew-symmetric."""

    point: StiefelPoint
    matrix: np.ndarray
    tangency_tol: float = 1e-10

    def __post_init__(self):
        x = as_matrix(self.matrix, "tangent matrix")
        q = self.point.q
        if x.shape != q.shape:
            raise ShapeError("tangent matrix shape differs from base point shape")
        s = q.T @ x
        defect = np.linalg.norm(s + s.T)
        if defect > self.tangency_tol * max(1.0, np.linalg.norm(x)):
            raise ShapeError(f"not tangent at the base point: defect {defect:.3e}")
        object.__setattr__(self, "matrix", x)
        self.matrix.setflags(write=False)

    def norm(self):
        return float(np.linalg.norm(self.matrix))


@dataclass(frozen=True)
class SkewFieldSpec:
    """A caller-supplied map Q -> S(Q) with S skew-symmetric.

    Skewness is verified on every evaluation; smoothness is declared by the
    caller, not checked.  The callable must be state-free (safe to invoke
    concurrently).
    """

    rule: Callable[[np.ndarray], np.ndarray]
    smooth: bool = True

    def __call__(self, q):
        s = as_matrix(self.rule(np.asarray(q, dtype=float)), "skew field value")
        defect = np.linalg.norm(s + s.T)
        if defect > 1e-12 * max(1.0, np.linalg.norm(s)):
            raise ShapeError(f"skew field value is not skew-symmetric: defect {defect:.3e}")
        return s

    @classmethod
    def zero(cls):
        return cls(rule=lambda q: np.zeros_like(q))

    @classmethod
    def constant(cls, s0):
        m = as_matrix(s0, "constant skew matrix")
        if np.linalg.norm(m + m.T) > 1e-12 * max(1.0, np.linalg.norm(m)):
            raise ShapeError("constant skew matrix is not skew-symmetric")
        return cls(rule=lambda q, _m=m: _m)


# ---------------------------------------------------------------------------
# raw field kernels (plain ndarrays; hot path for the integrator)
# ---------------------------------------------------------------------------


def _sigma(amat, q):
    m = q.T @ (amat @ q)
    return np.tril(m, -1) - np.triu(m, 1)


def _sga(amat, q):
    return q @ _sigma(amat, q)


def _sga_semidecoupled(amat, q):
    # AQ - Q T(Q): the triangular representation of the same field.  Unlike
    # Q Sigma(A, Q), it never expresses a structurally zero entry as a
    # cancelling sum, so exact zero patterns of the start (the invariants
    # that select a non-generic limit) survive floating-point integration.
    aq = amat @ q
    m = q.T @ aq
    t = np.diag(np.diagonal(m)) + 2.0 * np.triu(m, 1)
    return aq - q @ t


def _brockett(amat, nvec, q):
    aq = amat @ q
    return aq * nvec - q @ ((nvec[:, None] * q.T) @ aq)


def _free_energy_derivative(amat, nvec, q):
    # Derivative of the free energy (the negated weighted trace objective).
    return -2.0 * (amat @ q) * nvec


def _llg_tildeg(amat, nvec, skew, q):
    f = _sga(amat, q)
    s = skew(q)
    qs = q @ s
    aq = amat @ q
    c1 = 2.0 * float(np.sum(nvec * np.einsum("ij,ij->j", aq, f)))
    m = q.T @ aq
    c2 = 2.0 * float(np.sum(nvec * np.einsum("ij,ji->i", m, s)))
    return (c1 * qs - c2 * f) + f


def _llg_euclid(amat, nvec, skew, q):
    b = _brockett(amat, nvec, q)
    s = skew(q)
    qs = q @ s
    c1 = float(np.sum(b * b))
    c2 = float(np.sum(b * qs))
    return (c1 * qs - c2 * b) + b


def _riccati(amat, p):
    ap = amat @ p
    r = ap + ap.T - 2.0 * (p @ ap)
    return 0.5 * (r + r.T)


def make_flow(name, a, weights=None, skew=None):
    """Raw-array evaluator for one of the named flows.

    Returns a callable mapping a square orthogonal matrix to its rate of
    change; used by the integrator and the command-line driver.
    """
    amat = _square_matrix_of(a)
    if name == "sga":
        return lambda q: _sga_semidecoupled(amat, q)
    nvec = _weights_of(weights, amat.shape[0])
    if name == "brockett":
        return lambda q: _brockett(amat, nvec, q)
    s = skew if skew is not None else SkewFieldSpec.zero()
    if name == "llg-tildeg":
        return lambda q: _llg_tildeg(amat, nvec, s, q)
    if name == "llg-euclid":
        return lambda q: _llg_euclid(amat, nvec, s, q)
    raise ShapeError(f"unknown flow {name!r}; expected one of {FLOW_NAMES}")


# ---------------------------------------------------------------------------
# equilibrium set helpers
# ---------------------------------------------------------------------------


def nearest_signed_permutation(q):
    """Signed permutation matrix closest in Frobenius norm to ``q``.

    Returns ``(matrix, permutation, signs)`` where ``permutation[j]`` is the
    1-based row carrying the nonzero of column j.  Uses an optimal
    assignment, so it is meaningful even far from the equilibrium set.
    """
    from scipy.optimize import linear_sum_assignment

    m = _point_matrix(q, square=True)
    n = m.shape[0]
    rows, cols = linear_sum_assignment(-np.abs(m))
    perm = np.empty(n, dtype=int)
    perm[cols] = rows
    signs = np.sign(m[perm, np.arange(n)])
    signs[signs == 0] = 1.0
    out = np.zeros_like(m)
    out[perm, np.arange(n)] = signs
    return out, tuple(int(i) + 1 for i in perm), tuple(int(s) for s in signs)


def equilibrium_distance(q):
    """Frobenius distance from ``q`` to the nearest signed permutation."""
    m = _point_matrix(q, square=True)
    target, _, _ = nearest_signed_permutation(m)
    return float(np.linalg.norm(m - target))


def is_equilibrium(q, a=None, tol=1e-9):
    """Whether ``q`` sits within ``tol`` of the equilibrium set.

    For n <= 5 this is the nearest-element distance test (the column-wise
    argmax candidate coincides with the true nearest signed permutation at
    these distances).  For larger n it switches to the O(n^2) criterion
    ``off-diagonal of Q^T A Q below tol`` and then requires ``a``.
    """
    m = _point_matrix(q, square=True)
    n = m.shape[0]
    if n <= 5:
        picks = np.argmax(np.abs(m), axis=0)
        if len(set(picks.tolist())) != n:
            return False
        cand = np.zeros_like(m)
        sign = np.sign(m[picks, np.arange(n)])
        sign[sign == 0] = 1.0
        cand[picks, np.arange(n)] = sign
        return float(np.linalg.norm(m - cand)) <= tol
    if a is None:
        raise ShapeError("equilibrium test for n > 5 needs the spectral matrix")
    amat = _square_matrix_of(a)
    w = m.T @ (amat @ m)
    np.fill_diagonal(w, 0.0)
    return float(np.linalg.norm(w)) <= tol


# ---------------------------------------------------------------------------
# typed operations
# ---------------------------------------------------------------------------


def sigma_bracket(a, q):
    """Antisymmetrized triangle split of M = Q^T A Q.

    Equals strict-lower-triangle(M) minus strict-upper-triangle(M); skew with
    zero diagonal whenever A is symmetric.
    """
    amat = _square_matrix_of(a)
    m = as_matrix(q, "Q")
    if m.shape[0] != amat.shape[0]:
        raise ShapeError(
            f"row count {m.shape[0]} does not match matrix dimension {amat.shape[0]}"
        )
    return _sigma(amat, m)


def sga_field(a, q):
    """The orthogonality-preserving field F(Q) = Q Sigma(A, Q).

    Zero exactly at signed permutations of the eigenbasis.  Square Q only;
    use :func:`componentwise_field` for fewer columns than rows.
    """
    point = q if isinstance(q, StiefelPoint) else StiefelPoint(q)
    if not point.is_square:
        raise ShapeError("square case only; use componentwise_field for p < n")
    amat = _square_matrix_of(a)
    return TangentVector(point, _sga(amat, point.q))


def componentwise_field(a, q):
    """Per-column field: column j gets A q_j - (q_j . A q_j) q_j
    - 2 sum_{i<j} (q_i . A q_j) q_i.

    Columns are accumulated strictly left to right, so the leading p' columns
    of the output are bit-identical for any p >= p' (the semi-decoupled
    structure).  For square orthogonal input this equals ``sga_field``.
    """
    m = _point_matrix(q)
    amat = _square_matrix_of(a)
    if m.shape[0] != amat.shape[0]:
        raise ShapeError("column dimension does not match the matrix")
    n, p = m.shape
    out = np.empty_like(m)
    for j in range(p):
        qj = m[:, j]
        aqj = amat @ qj
        col = aqj - (qj @ aqj) * qj
        for i in range(j):
            col = col - 2.0 * (m[:, i] @ aqj) * m[:, i]
        out[:, j] = col
    return out


def sga_update_field(lam, q):
    """Full update field G(L, Q) = LQ - QQ^T L Q + Q Sigma(L, Q).

    ``lam`` may be any symmetric matrix, including rank-one sample outer
    products; on exactly orthonormal Q the first two terms cancel and the
    result matches :func:`componentwise_field`.
    """
    lmat = check_symmetric(lam, name="update matrix")
    m = as_matrix(q, "iterate")
    if m.shape[0] != lmat.shape[0]:
        raise ShapeError("iterate rows do not match the update matrix")
    lq = lmat @ m
    return lq - m @ (m.T @ lq) + m @ _sigma(lmat, m)


def t_matrix(a, q):
    """Upper triangular T(Q) with diagonal q_k . A q_k and strict upper part
    2 (Q^T A Q)_{jk}; satisfies AQ - Q T(Q) = F(Q) on the orthogonal group."""
    point = _point_matrix(q, square=True)
    amat = _square_matrix_of(a)
    m = point.T @ (amat @ point)
    return np.diag(np.diagonal(m)) + 2.0 * np.triu(m, 1)


def brockett_field(a, n, q):
    """Weighted-trace gradient field AQN - QNQ^T AQ with N = diag(weights)."""
    point = q if isinstance(q, StiefelPoint) else StiefelPoint(q)
    if not point.is_square:
        raise ShapeError("square case only")
    amat = _square_matrix_of(a)
    nvec = _weights_of(n, amat.shape[0])
    return TangentVector(point, _brockett(amat, nvec, point.q))


def tangent_projection(m, q):
    """Project an arbitrary matrix onto the tangent space at Q:
    (M - Q M^T Q) / 2."""
    point = q if isinstance(q, StiefelPoint) else StiefelPoint(q)
    if not point.is_square:
        raise ShapeError("tangent projection is defined on the square case")
    mat = as_matrix(m, "matrix")
    if mat.shape != point.q.shape:
        raise ShapeError("matrix shape differs from base point shape")
    qq = point.q
    return TangentVector(point, 0.5 * (mat - qq @ mat.T @ qq))


def hamiltonian_hat(grad, m1, inner):
    """Energy-conserving companion of a tangent field:
    ||grad||^2 m1 - <grad, m1> grad, inner products taken in ``inner``.

    The result is tangent at the shared base point and orthogonal to ``grad``
    under ``inner``, so it neither creates nor destroys the energy whose
    gradient is ``grad``.
    """
    if not isinstance(grad, TangentVector) or not isinstance(m1, TangentVector):
        raise ShapeError("hamiltonian_hat expects TangentVector operands")
    if not np.array_equal(grad.point.q, m1.point.q):
        raise ShapeError("operands are tangent at different base points")
    g, x = grad.matrix, m1.matrix
    gg = float(inner(g, g))
    gx = float(inner(g, x))
    return TangentVector(grad.point, gg * x - gx * g)


@dataclass(frozen=True)
class LLGField:
    """Evaluated dissipative-plus-Hamiltonian field.

    ``degenerate`` marks evaluations at (numerical) equilibria, where the
    Lyapunov-based metric underlying the construction is undefined and the
    returned vector is exactly zero.
    """

    vector: TangentVector
    degenerate: bool = False


def llg_field_tildeg(a, n, skew, q, *, equilibrium_tol=1e-9):
    """Field of the Lyapunov-metric evolution: the pure field F(Q) plus the
    energy-conserving part 2 tr(N Q^T A F) QS - 2 tr(N Q^T A Q S) F.

    With the zero skew field this returns F(Q) bit-for-bit.
    """
    point = q if isinstance(q, StiefelPoint) else StiefelPoint(q)
    if not point.is_square:
        raise ShapeError("square case only")
    amat = _square_matrix_of(a)
    nvec = _weights_of(n, amat.shape[0])
    if is_equilibrium(point.q, amat, tol=equilibrium_tol):
        return LLGField(TangentVector(point, np.zeros_like(point.q)), degenerate=True)
    s = skew if skew is not None else SkewFieldSpec.zero()
    return LLGField(TangentVector(point, _llg_tildeg(amat, nvec, s, point.q)))


def llg_field_euclid(a, n, skew, q, *, equilibrium_tol=1e-9):
    """Euclidean-metric sibling of :func:`llg_field_tildeg` built on the
    weighted-trace gradient; the zero skew field recovers ``brockett_field``
    bit-for-bit."""
    point = q if isinstance(q, StiefelPoint) else StiefelPoint(q)
    if not point.is_square:
        raise ShapeError("square case only")
    amat = _square_matrix_of(a)
    nvec = _weights_of(n, amat.shape[0])
    if is_equilibrium(point.q, amat, tol=equilibrium_tol):
        return LLGField(TangentVector(point, np.zeros_like(point.q)), degenerate=True)
    s = skew if skew is not None else SkewFieldSpec.zero()
    return LLGField(TangentVector(point, _llg_euclid(amat, nvec, s, point.q)))


def metric_tildeg(x, y, a, n, q, *, degeneracy_tol=1e-12):
    """Lyapunov-compatible inner product of two tangent vectors at Q.

    Defined off the equilibrium set where the pairing of the free-energy
    derivative with F(Q) is strictly negative; inside the degeneracy
    threshold a MetricDegeneracyError is raised.  Satisfies the
    compatibility identity <F, X> = -<E', X>_F.
    """
    point = _point_matrix(q, square=True)
    amat = _square_matrix_of(a)
    nvec = _weights_of(n, amat.shape[0])
    xm = x.matrix if isinstance(x, TangentVector) else as_matrix(x, "X")
    ym = y.matrix if isinstance(y, TangentVector) else as_matrix(y, "Y")
    f = _sga(amat, point)
    eprime = _free_energy_derivative(amat, nvec, point)
    pairing = frobenius_inner(eprime, f)
    floor = degeneracy_tol * np.linalg.norm(eprime) * np.linalg.norm(f)
    if pairing >= -floor:
        raise MetricDegeneracyError(
            f"metric undefined: gradient/field pairing {pairing:.3e} is not "
            f"negative beyond the threshold {-floor:.3e}"
        )
    ex = frobenius_inner(eprime, xm)
    ey = frobenius_inner(eprime, ym)
    x0 = xm - (ex / pairing) * f
    y0 = ym - (ey / pairing) * f
    return frobenius_inner(x0, y0) - ex * ey / pairing


def riccati_field(a, p):
    """Right-hand side AP + PA - 2 PAP of the Riccati evolution of QQ^T."""
    amat = _square_matrix_of(a)
    pm = check_symmetric(p, name="P")
    if pm.shape != amat.shape:
        raise ShapeError("P shape does not match the matrix")
    return _riccati(amat, pm)


def _riccati_leg(a, pm, t):
    """One direct evaluation of the Riccati solution formula."""
    lam, v = a.eigenvalues, a.vectors
    n = a.dimension
    pb = v.T @ pm @ v
    eye = np.eye(n)
    try:
        cholesky_lower(pm)
        definite = True
    except PivotError:
        definite = False
    try:
        if definite:
            # P0 [P0 + e^{-2At}(I - P0)]^{-1} between e^{+-At}: only decaying
            # exponentials and the bounded difference grid appear
            decay = np.exp(-2.0 * lam * t)
            inner = pb + decay[:, None] * (eye - pb)
            core = np.linalg.solve(inner.T, pb.T).T  # P0 inner^{-1}
            grid = np.exp(np.subtract.outer(lam, lam) * t)
            res = core * grid
        else:
            grow = np.exp(2.0 * lam * t) - 1.0
            inner = eye + grow[:, None] * pb
            up = np.exp(lam * t)
            core = np.linalg.solve(inner.T, (up[:, None] * pb).T).T
            res = core * up[None, :]
    except np.linalg.LinAlgError as exc:
        raise ConditioningError(f"inner matrix singular: invalid P0 ({exc})") from None
    out = v @ res @ v.T
    return 0.5 * (out + out.T)


def riccati_closed_form(a, p0, t, *, leg_exponent=15.0):
    """Exact solution of the Riccati evolution from symmetric PSD P(0):
    e^{At} P0 [I + (e^{2At} - I) P0]^{-1} e^{At}, evaluated in the eigenbasis
    of A.

    Long horizons are evaluated by composing the flow map over legs with
    eigenvalue-spread exponent at most ``leg_exponent``; the map contracts
    toward the identity, so the composition does not accumulate error.
    Positive definite starts use the equivalent all-decaying-exponentials
    form of each leg.
    """
    if not isinstance(a, SpectralMatrix):
        a = SpectralMatrix.from_symmetric(a)
    pm = check_symmetric(p0, name="P0")
    if pm.shape != a.matrix.shape:
        raise ShapeError("P0 shape does not match the matrix")
    if not math.isfinite(t):
        raise ShapeError("time must be finite")
    if t == 0.0:
        return pm.copy()
    if t < 0.0:
        if 2.0 * float(a.eigenvalues[0]) * abs(t) > math.log(np.finfo(float).max):
            raise ConditioningError(
                "backward evaluation would overflow double precision",
                advised_max=-math.log(np.finfo(float).max) / (2.0 * float(a.eigenvalues[0])),
            )
        return _riccati_leg(a, pm, t)
    legs = 1
    if a.spread() > 0:
        legs = max(legs, math.ceil(a.spread() * t / leg_exponent))
    # the indefinite branch also exponentiates 2 lambda_1 t directly
    legs = max(legs, math.ceil(2.0 * float(a.eigenvalues[0]) * t / 500.0))
    if legs > 100000:
        raise ConditioningError("horizon too long to compose", advised_max=None)
    dt = t / legs
    out = pm
    for _ in range(legs):
        out = _riccati_leg(a, out, dt)
    return out
