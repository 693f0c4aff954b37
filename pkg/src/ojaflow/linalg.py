"""Dense symmetric/orthogonal linear algebra kernels.

Everything here targets small dense matrices (n up to a few dozen): a cyclic
Jacobi eigensolver, spectral matrix exponentials, an upper-times-transpose
(UL) Cholesky variant, modified Gram-Schmidt, and order-sensitive
subdeterminants.  All functions are pure; inputs are never mutated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConditioningError,
    ConvergenceError,
    PivotError,
    RankDeficiencyError,
    ShapeError,
    SymmetryError,
)

# Largest exponent x such that e^x is finite in float64.
_EXP_OVERFLOW = math.log(np.finfo(float).max)

# Conditioning budget for forming Q0^T e^{-2At} Q0: the exponent
# 2(lambda_1 - lambda_n) t may not exceed this.
UL_EXPONENT_BUDGET = 60.0


def as_matrix(a, name="matrix"):
    """Coerce to a 2-d float64 ndarray with finite entries."""
    m = np.asarray(a, dtype=float)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-dimensional, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ShapeError(f"{name} contains non-finite entries")
    return m


def check_symmetric(s, rel_tol=1e-12, name="matrix"):
    """Return ``s`` as an ndarray, raising SymmetryError if it is not
    symmetric within ``rel_tol`` relative to its Frobenius norm."""
    m = as_matrix(s, name)
    if m.shape[0] != m.shape[1]:
        raise ShapeError(f"{name} must be square, got shape {m.shape}")
    scale = np.linalg.norm(m)
    defect = np.linalg.norm(m - m.T)
    if defect > rel_tol * max(scale, 1.0):
        raise SymmetryError(f"{name} is not symmetric", defect / max(scale, 1.0))
    return m


def sym_eigendecomposition(s, *, sweep_cap=100, rel_tol=1e-12):
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns ``(eigenvalues, vectors)`` with eigenvalues sorted descending and
    eigenvectors as the corresponding columns of an orthogonal matrix.
    Rotations sweep the strict upper triangle row by row until the
    off-diagonal Frobenius mass drops below ``1e-14 * ||s||_F``; more than
    ``sweep_cap`` sweeps raises ConvergenceError.
    """
    a = check_symmetric(s, rel_tol).copy()
    n = a.shape[0]
    v = np.eye(n)
    if n == 1:
        return a.diagonal().copy(), v

    scale = np.linalg.norm(a)
    threshold = 1e-14 * max(scale, np.finfo(float).tiny)

    def offdiag_norm():
        # summed directly over off-diagonal entries; the difference-of-sums
        # form cancels catastrophically once the mass is below sqrt(eps)
        off = a.copy()
        np.fill_diagonal(off, 0.0)
        return float(np.linalg.norm(off))

    converged = False
    for _ in range(sweep_cap):
        if offdiag_norm() <= threshold:
            converged = True
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= threshold / n:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.hypot(theta, 1.0))
                c = 1.0 / math.hypot(t, 1.0)
                sn = t * c
                # Two-sided rotation in the (p, q) plane.
                rp, rq = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * rp - sn * rq
                a[q, :] = sn * rp + c * rq
                cp, cq = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * cp - sn * cq
                a[:, q] = sn * cp + c * cq
                a[p, q] = 0.0
                a[q, p] = 0.0
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vp - sn * vq
                v[:, q] = sn * vp + c * vq
    else:
        converged = offdiag_norm() <= threshold
    if not converged:
        raise ConvergenceError(
            f"Jacobi sweep cap {sweep_cap} exhausted with off-diagonal mass "
            f"{offdiag_norm():.3e}"
        )

    order = np.argsort(a.diagonal())[::-1]
    return a.diagonal()[order].copy(), v[:, order].copy()


@dataclass(frozen=True)
class SpectralMatrix:
    """A symmetric matrix with strictly descending positive eigenvalues.

    ``matrix`` = V diag(eigenvalues) V^T with orthonormal columns in
    ``vectors``.  Construction enforces positivity, a minimum spectral gap,
    orthonormality of V, and the factorization residual.
    """

    matrix: np.ndarray
    eigenvalues: np.ndarray
    vectors: np.ndarray
    min_gap: float = 1e-8

    def __post_init__(self):
        a = check_symmetric(self.matrix, name="spectral matrix")
        lam = np.asarray(self.eigenvalues, dtype=float)
        v = as_matrix(self.vectors, "eigenvector matrix")
        n = a.shape[0]
        if lam.shape != (n,) or v.shape != (n, n):
            raise ShapeError("eigendecomposition shapes do not match the matrix")
        if lam[-1] <= 0.0:
            raise ShapeError(f"eigenvalues must be positive, got smallest {lam[-1]:.3e}")
        gaps = lam[:-1] - lam[1:]
        if n > 1 and gaps.min() < self.min_gap:
            raise ShapeError(
                f"eigenvalue gap {gaps.min():.3e} below minimum gap {self.min_gap:.3e}"
            )
        if np.linalg.norm(v.T @ v - np.eye(n)) > 1e-12 * n:
            raise ShapeError("eigenvector matrix is not orthonormal")
        residual = np.linalg.norm(v @ np.diag(lam) @ v.T - a)
        if residual > 1e-10 * max(np.linalg.norm(a), 1.0):
            raise ShapeError(f"factorization residual {residual:.3e} too large")
        object.__setattr__(self, "matrix", a)
        object.__setattr__(self, "eigenvalues", lam)
        object.__setattr__(self, "vectors", v)
        self.matrix.setflags(write=False)
        self.eigenvalues.setflags(write=False)
        self.vectors.setflags(write=False)

    @classmethod
    def from_symmetric(cls, a, *, min_gap=1e-8):
        lam, v = sym_eigendecomposition(a)
        return cls(as_matrix(a), lam, v, min_gap)

    @classmethod
    def from_eigenvalues(cls, eigenvalues, *, min_gap=1e-8):
        """Diagonal matrix with the given (descending, positive) spectrum."""
        lam = np.asarray(eigenvalues, dtype=float)
        n = lam.shape[0]
        return cls(np.diag(lam), lam, np.eye(n), min_gap)

    @property
    def dimension(self):
        return self.matrix.shape[0]

    def spread(self):
        """lambda_1 - lambda_n."""
        return float(self.eigenvalues[0] - self.eigenvalues[-1])


def matrix_exp_scaled(a: SpectralMatrix, t):
    """e^{At} through the eigendecomposition: V diag(e^{lambda_i t}) V^T.

    Raises ConditioningError when the largest exponent would overflow
    float64, advising the largest usable |t|.
    """
    if not math.isfinite(t):
        raise ShapeError("time must be finite")
    exponents = a.eigenvalues * t
    peak = float(exponents.max())
    if peak > _EXP_OVERFLOW:
        advised = _EXP_OVERFLOW / float(a.eigenvalues[0]) if t > 0 else None
        raise ConditioningError(
            f"exponent {peak:.3g} overflows double precision", advised_max=advised
        )
    return (a.vectors * np.exp(exponents)) @ a.vectors.T


@dataclass(frozen=True)
class UpperTriangularFactor:
    """Upper triangular matrix with strictly positive diagonal."""

    matrix: np.ndarray

    def __post_init__(self):
        m = as_matrix(self.matrix, "triangular factor")
        if m.shape[0] != m.shape[1]:
            raise ShapeError("triangular factor must be square")
        if np.any(np.tril(m, -1) != 0.0):
            raise ShapeError("strict lower triangle must be zero")
        if np.any(m.diagonal() <= 0.0):
            raise ShapeError("diagonal entries must be strictly positive")
        object.__setattr__(self, "matrix", m)
        self.matrix.setflags(write=False)

    @property
    def dimension(self):
        return self.matrix.shape[0]

    def diagonal(self):
        return self.matrix.diagonal().copy()


def cholesky_lower(b, *, name="matrix"):
    """Left-looking lower Cholesky, b = L L^T.

    Raises PivotError with the 1-based pivot index on loss of positive
    definiteness, so conditioning failures are attributable.
    """
    a = check_symmetric(b, name=name)
    n = a.shape[0]
    lower = np.zeros_like(a)
    for j in range(n):
        d = a[j, j] - lower[j, :j] @ lower[j, :j]
        if d <= 0.0 or not math.isfinite(d):
            raise PivotError(j + 1, d)
        lower[j, j] = math.sqrt(d)
        if j + 1 < n:
            lower[j + 1 :, j] = (a[j + 1 :, j] - lower[j + 1 :, :j] @ lower[j, :j]) / lower[j, j]
    return lower


def ul_factor(b) -> UpperTriangularFactor:
    """Upper triangular G with positive diagonal such that G G^T = b.

    Computed by anti-diagonal reversal: with J the index-reversal
    permutation, J b J is Cholesky-factored as L L^T and G = J L J.  A
    PivotError reports pivot indices in G's own row numbering.
    """
    a = check_symmetric(b, name="UL operand")
    n = a.shape[0]
    rev = a[::-1, ::-1]
    try:
        lower = cholesky_lower(rev)
    except PivotError as exc:
        raise PivotError(n + 1 - exc.pivot, exc.value) from None
    return UpperTriangularFactor(lower[::-1, ::-1].copy())


def orthonormalize(q, *, dependency_tol=1e-12):
    """Modified Gram-Schmidt with one re-orthogonalization pass.

    Columns are processed left to right, so column j of the output spans the
    same leading subspace as columns 1..j of the input and the triangular
    change of basis has positive diagonal.  A column whose residual after
    projection drops below ``dependency_tol`` times its own norm raises
    RankDeficiencyError naming that column (1-based).
    """
    a = as_matrix(q, "column matrix")
    n, p = a.shape
    if p > n:
        raise ShapeError(f"more columns ({p}) than rows ({n})")
    out = a.copy()
    for j in range(p):
        v = out[:, j]
        original = np.linalg.norm(v)
        for _ in range(2):  # second pass controls cancellation in the projections
            for i in range(j):
                v = v - (out[:, i] @ v) * out[:, i]
        norm = np.linalg.norm(v)
        if norm <= dependency_tol * original:
            raise RankDeficiencyError(j + 1)
        out[:, j] = v / norm
    return out


def gram_schmidt(q, *, dependency_tol=1e-12):
    """Orthonormalize independent columns; see :func:`orthonormalize`.

    Returned as a validated :class:`ojaflow.flows.StiefelPoint`.
    """
    from .flows import StiefelPoint

    return StiefelPoint(orthonormalize(q, dependency_tol=dependency_tol))


def lu_determinant(m):
    """Determinant by LU with partial pivoting (sign-tracked)."""
    a = as_matrix(m, "determinant operand").copy()
    n = a.shape[0]
    if n != a.shape[1]:
        raise ShapeError("determinant needs a square matrix")
    sign = 1.0
    for k in range(n - 1):
        piv = k + int(np.argmax(np.abs(a[k:, k])))
        if a[piv, k] == 0.0:
            return 0.0
        if piv != k:
            a[[k, piv], :] = a[[piv, k], :]
            sign = -sign
        a[k + 1 :, k] /= a[k, k]
        a[k + 1 :, k + 1 :] -= np.outer(a[k + 1 :, k], a[k, k + 1 :])
    return sign * float(np.prod(a.diagonal()))


def _validate_index_list(idx, bound, what):
    sel = list(idx)
    if len(set(sel)) != len(sel):
        raise ShapeError(f"duplicate {what} indices: {sel}")
    for i in sel:
        if not 1 <= i <= bound:
            raise ShapeError(f"{what} index {i} out of range 1..{bound}")
    return [i - 1 for i in sel]


def submatrix_det(m, rows, cols):
    """Determinant of the submatrix selected by 1-based row/column labels.

    The labels are taken in the order given, so swapping two columns flips
    the sign.  Row and column lists must have equal length; duplicates and
    out-of-range labels are rejected.
    """
    a = as_matrix(m, "matrix")
    if len(list(rows)) != len(list(cols)):
        raise ShapeError("row and column selections must have equal length")
    r = _validate_index_list(rows, a.shape[0], "row")
    c = _validate_index_list(cols, a.shape[1], "column")
    return lu_determinant(a[np.ix_(r, c)])
