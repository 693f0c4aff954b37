"""Trace energies, their decay identity, equilibrium census, and stability.

The weighted trace objective tr(N Q^T A Q) is the Lyapunov functional of the
flows in :mod:`ojaflow.flows`: it is maximized exactly at the descending
eigenbasis, strictly increases along trajectories elsewhere, and its set of
critical points is the finite family of signed permutation matrices.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .flows import _point_matrix, _square_matrix_of, _weights_of
from .linalg import SpectralMatrix, as_matrix, check_symmetric, sym_eigendecomposition

EQUILIBRIA_CAP = 6


def rayleigh(a, q):
    """Unweighted trace tr(Q^T A Q); constant (= tr A) on the orthogonal group."""
    amat = _square_matrix_of(a)
    m = _point_matrix(q)
    if m.shape[0] != amat.shape[0]:
        raise ShapeError("shapes do not match")
    return float(np.sum(m * (amat @ m)))


def weighted_rayleigh(a, n, q):
    """Weighted trace tr(N Q^T A Q) with N = diag(weights).

    On orthogonal Q this is bounded by sum_i mu_i lambda_i, with equality
    exactly when Q diagonalizes A in descending order.
    """
    amat = _square_matrix_of(a)
    m = _point_matrix(q)
    nvec = _weights_of(n, m.shape[1])
    return float(np.sum((m * (amat @ m)) @ nvec))


def weighted_rayleigh_max(a, n):
    """The attainable maximum sum_i mu_i lambda_i of the weighted trace."""
    if not isinstance(a, SpectralMatrix):
        a = SpectralMatrix.from_symmetric(a)
    nvec = _weights_of(n, a.dimension)
    return float(a.eigenvalues @ nvec)


def lyapunov_derivative(a, n, q):
    """Decay rate of the free energy along the flow:
    -2 sum_{k<j} (mu_k - mu_j) (q_k . A q_j)^2.

    Non-positive on the orthogonal group, and zero exactly on the signed
    permutations of the eigenbasis.  Equals the time derivative of the
    negated weighted trace along the orthogonality-preserving field.
    """
    amat = _square_matrix_of(a)
    m = _point_matrix(q, square=True)
    nvec = _weights_of(n, m.shape[1])
    w = m.T @ (amat @ m)
    total = 0.0
    for j in range(1, m.shape[1]):
        for k in range(j):
            total += (nvec[k] - nvec[j]) * w[k, j] ** 2
    return -2.0 * total


def wielandt_hoffman_gap(m, n):
    """Both sides of the eigenvalue perturbation inequality: returns
    (||M - N||_F^2, sum_i (lambda_i(M) - lambda_i(N))^2) with both spectra
    sorted descending.  The left side dominates, with equality iff M and N
    are simultaneously diagonalized in descending order.
    """
    mm = check_symmetric(m, name="M")
    nn = check_symmetric(n, name="N")
    if mm.shape != nn.shape:
        raise ShapeError("operands must have equal shape")
    lhs = float(np.linalg.norm(mm - nn) ** 2)
    lam_m, _ = sym_eigendecomposition(mm)
    lam_n, _ = sym_eigendecomposition(nn)
    rhs = float(np.sum((lam_m - lam_n) ** 2))
    return lhs, rhs


@dataclass(frozen=True)
class EquilibriumElement:
    """One signed permutation matrix: column j carries sign[j] at row perm[j].

    ``permutation`` and ``signs`` are 1-based/(+-1) tuples; ``matrix`` is the
    realized orthogonal matrix.
    """

    permutation: tuple
    signs: tuple
    matrix: np.ndarray

    def __post_init__(self):
        m = as_matrix(self.matrix, "equilibrium matrix")
        n = m.shape[0]
        if sorted(self.permutation) != list(range(1, n + 1)):
            raise ShapeError("permutation must be a bijection on 1..n")
        if any(s not in (-1, 1) for s in self.signs):
            raise ShapeError("signs must be +-1")
        expected = np.zeros((n, n))
        for j, (row, s) in enumerate(zip(self.permutation, self.signs)):
            expected[row - 1, j] = s
        if not np.array_equal(m, expected):
            raise ShapeError("matrix does not realize the permutation/sign data")
        self.matrix.setflags(write=False)

    @classmethod
    def from_data(cls, permutation, signs):
        n = len(permutation)
        m = np.zeros((n, n))
        for j, (row, s) in enumerate(zip(permutation, signs)):
            m[row - 1, j] = s
        return cls(tuple(permutation), tuple(signs), m)

    @property
    def is_identity_permutation(self):
        return all(p == j + 1 for j, p in enumerate(self.permutation))


def enumerate_equilibria(n, cap=EQUILIBRIA_CAP):
    """All 2^n * n! signed permutation matrices of size n.

    Refuses n above ``cap`` (the census grows factorially).
    """
    if n < 1:
        raise ShapeError("dimension must be positive")
    if n > cap:
        raise ShapeError(f"census for n={n} exceeds the cap {cap} (2^n n! elements)")
    out = []
    for perm in itertools.permutations(range(1, n + 1)):
        for signs in itertools.product((1, -1), repeat=n):
            out.append(EquilibriumElement.from_data(perm, signs))
    return out


@dataclass(frozen=True)
class StabilityReport:
    """Linearization verdict at one equilibrium.

    ``eigenvalues[j-1]`` lists the n decay/growth rates of column j's
    linearized dynamics; the verdict is ``stable`` iff all are negative.
    """

    equilibrium: EquilibriumElement
    eigenvalues: np.ndarray
    verdict: str

    @property
    def stable(self):
        return self.verdict == "stable"


def classify_equilibrium(a, eq, *, margin_scale=1e-12):
    """Stability of a signed permutation under the flow's linearization.

    For column j mapped to basis row tau(j), the linearized rate toward
    coordinate i is -2 lambda_tau(j) on the aligned coordinate,
    -lambda_tau(j) - lambda_i below the column index, and
    lambda_i - lambda_tau(j) elsewhere.  All rates are negative exactly when
    tau is the identity (any signs), so exactly 2^n equilibria are stable.
    """
    if not isinstance(a, SpectralMatrix):
        a = SpectralMatrix.from_symmetric(a)
    lam = a.eigenvalues
    n = a.dimension
    if len(eq.permutation) != n:
        raise ShapeError("equilibrium size does not match the matrix")
    tau = eq.permutation  # 1-based
    rates = np.empty((n, n))
    for j in range(1, n + 1):
        lt = lam[tau[j - 1] - 1]
        for i in range(1, n + 1):
            if i == tau[j - 1]:
                rates[j - 1, i - 1] = -2.0 * lt
            elif i < j:
                rates[j - 1, i - 1] = -lt - lam[i - 1]
            else:
                rates[j - 1, i - 1] = lam[i - 1] - lt
    margin = margin_scale * float(lam[0])
    verdict = "stable" if np.all(rates < -margin) else "unstable"
    return StabilityReport(eq, rates, verdict)
