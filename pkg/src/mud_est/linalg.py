"""Dense linear-algebra types and primitives shared by the solvers.

All matrices are small and dense (parameter dimensions up to a few hundred),
so everything here is a thin, careful layer over LAPACK via numpy/scipy.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
import scipy.linalg as sla

SYMMETRY_ERROR_TOL = 1e-8
SYMMETRY_STORE_TOL = 1e-12


class LinAlgInputError(ValueError):
    """Raised for malformed matrix inputs (shape, symmetry, finiteness)."""


def default_rank_tol(shape: Tuple[int, ...]) -> float:
    """Relative rank tolerance used throughout: ``1e-12 * max(m, p)``.

    Multiply by the largest singular value to get the absolute cutoff.
    """
    return 1e-12 * max(max(shape), 1)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


def symmetrize(M: np.ndarray, tol: float = SYMMETRY_ERROR_TOL) -> np.ndarray:
    """Return ``(M + M.T) / 2`` after checking the relative asymmetry.

    Raises
    ------
    LinAlgInputError
        If ``M`` is not square or ``||M - M.T|| > tol * ||M||``.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise LinAlgInputError(f"expected a square matrix, got shape {M.shape}")
    scale = np.linalg.norm(M)
    asym = np.linalg.norm(M - M.T)
    if asym > tol * max(scale, np.finfo(float).tiny):
        raise LinAlgInputError(
            f"matrix is not symmetric (relative asymmetry {asym / scale:.3e} > {tol:g})"
        )
    return 0.5 * (M + M.T)


@dataclass(frozen=True)
class GaussianDensity:
    """Multivariate normal density ``N(mean, covariance)``.

    The covariance may be singular (PSD); evaluating :meth:`pdf` then
    requires it to be non-degenerate.
    """

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float)).ravel()
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise LinAlgInputError(
                f"mean has dimension {mean.size} but covariance has shape {cov.shape}"
            )
        cov = symmetrize(cov, SYMMETRY_STORE_TOL)
        evals = np.linalg.eigvalsh(cov)
        if evals.min() < -1e-12 * max(evals.max(), 0.0):
            raise LinAlgInputError(
                f"covariance is not positive semidefinite (min eigenvalue {evals.min():.3e})"
            )
        object.__setattr__(self, "mean", _frozen(mean))
        object.__setattr__(self, "covariance", _frozen(cov))

    @classmethod
    def standard(cls, dim: int) -> "GaussianDensity":
        return cls(np.zeros(dim), np.eye(dim))

    @property
    def dim(self) -> int:
        return self.mean.size

    def logpdf(self, x) -> np.ndarray:
        """Log density at the rows of ``x`` (shape ``(n, dim)`` or ``(dim,)``)."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 0 or (x.ndim == 1 and self.dim > 1)
        x = x.reshape(-1, self.dim)
        L = np.linalg.cholesky(self.covariance)
        z = sla.solve_triangular(L, (x - self.mean).T, lower=True)
        logdet = 2.0 * np.sum(np.log(np.diag(L)))
        out = -0.5 * (np.sum(z * z, axis=0) + logdet + self.dim * np.log(2 * np.pi))
        return out[0] if single else out

    def pdf(self, x) -> np.ndarray:
        return np.exp(self.logpdf(x))


@dataclass(frozen=True)
class AffineMap:
    """The map ``Q(lam) = matrix @ lam + bias``."""

    matrix: np.ndarray
    bias: Optional[np.ndarray] = None
    rank: int = field(init=False)

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        if A.ndim != 2:
            raise LinAlgInputError(f"matrix must be 2-D, got shape {A.shape}")
        b = np.zeros(A.shape[0]) if self.bias is None else np.atleast_1d(
            np.asarray(self.bias, dtype=float)).ravel()
        if b.size != A.shape[0]:
            raise LinAlgInputError(
                f"bias has {b.size} entries but matrix has {A.shape[0]} rows"
            )
        object.__setattr__(self, "matrix", _frozen(A))
        object.__setattr__(self, "bias", _frozen(b))
        object.__setattr__(self, "rank", numerical_rank(A))

    @property
    def n_outputs(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_params(self) -> int:
        return self.matrix.shape[1]

    def __call__(self, lam) -> np.ndarray:
        """Evaluate at one parameter vector or at the rows of a sample matrix."""
        lam = np.asarray(lam, dtype=float)
        if lam.ndim == 1:
            return self.matrix @ lam + self.bias
        return lam @ self.matrix.T + self.bias


def svd(M) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Thin SVD ``M = U @ diag(s) @ Vt`` with ``s`` descending.

    Returns ``(U, s, Vt)``; the rows of ``Vt`` are the right singular vectors.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if not np.all(np.isfinite(M)):
        raise LinAlgInputError("matrix has non-finite entries")
    return np.linalg.svd(M, full_matrices=False)


def numerical_rank(M, rank_tol: Optional[float] = None) -> int:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        return 0
    s = svd(M)[1]
    if s[0] == 0.0:
        return 0
    tol = default_rank_tol(M.shape) if rank_tol is None else rank_tol
    return int(np.sum(s > tol * s[0]))


def pseudo_inverse(M, rank_tol: Optional[float] = None) -> np.ndarray:
    """Moore-Penrose pseudo-inverse by truncated SVD.

    Singular values at or below ``rank_tol * s_max`` are treated as zero.
    ``rank_tol`` defaults to :func:`default_rank_tol`.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        raise LinAlgInputError("cannot pseudo-invert an empty matrix")
    tol = default_rank_tol(M.shape) if rank_tol is None else rank_tol
    if tol <= 0:
        raise LinAlgInputError("rank_tol must be positive")
    U, s, Vt = svd(M)
    keep = s > tol * s[0] if s[0] > 0 else np.zeros_like(s, dtype=bool)
    inv_s = np.zeros_like(s)
    inv_s[keep] = 1.0 / s[keep]
    return (Vt.T * inv_s) @ U.T


@dataclass(frozen=True)
class SpdFactorization:
    """Factorization of a symmetric PSD matrix used for repeated solves.

    Full-rank inputs get a Cholesky factor; inputs that are rank-deficient
    at ``tolerance`` get an eigendecomposition and solve by pseudo-inverse.
    """

    source: np.ndarray
    factor: np.ndarray
    tolerance: float
    rank: int
    eigvals: Optional[np.ndarray] = None

    @property
    def full_rank(self) -> bool:
        return self.eigvals is None

    @classmethod
    def of(cls, M, rank_tol: Optional[float] = None) -> "SpdFactorization":
        M = symmetrize(M)
        n = M.shape[0]
        tol = default_rank_tol(M.shape) if rank_tol is None else rank_tol
        w, V = np.linalg.eigh(M)
        wmax = max(w[-1], 0.0)
        if w[0] < -1e-8 * max(wmax, 1e-300):
            raise LinAlgInputError(
                f"matrix is not positive semidefinite (min eigenvalue {w[0]:.3e})"
            )
        rank = int(np.sum(w > tol * wmax)) if wmax > 0 else 0
        if rank == n:
            L = np.linalg.cholesky(M)
            return cls(_frozen(M), _frozen(L), tol, rank)
        return cls(_frozen(M), _frozen(V), tol, rank, _frozen(w))

    def solve(self, rhs) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=float)
        n = self.source.shape[0]
        if rhs.shape[0] != n:
            raise LinAlgInputError(
                f"rhs has {rhs.shape[0]} rows but matrix is {n}x{n}"
            )
        if self.full_rank:
            return sla.cho_solve((self.factor, True), rhs)
        w, V = self.eigvals, self.factor
        wmax = max(w[-1], 0.0)
        inv_w = np.where(w > self.tolerance * wmax, 1.0 / np.where(w > 0, w, 1.0), 0.0)
        coef = V.T @ rhs
        coef = coef * (inv_w if rhs.ndim == 1 else inv_w[:, None])
        return V @ coef

    def inverse(self) -> np.ndarray:
        """Inverse (or pseudo-inverse when rank-deficient), symmetrized."""
        inv = self.solve(np.eye(self.source.shape[0]))
        return 0.5 * (inv + inv.T)


def spd_solve(M, rhs, rank_tol: Optional[float] = None) -> np.ndarray:
    """Solve ``M x = rhs`` for symmetric PSD ``M``.

    Uses Cholesky when ``M`` is numerically full rank and the pseudo-inverse
    otherwise, so rank-deficient systems return the minimum-norm solution.
    """
    return SpdFactorization.of(M, rank_tol).solve(rhs)


def spd_inverse(M, rank_tol: Optional[float] = None) -> np.ndarray:
    return SpdFactorization.of(M, rank_tol).inverse()
