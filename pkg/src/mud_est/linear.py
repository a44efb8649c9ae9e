"""Closed-form MUD, MAP and least-squares estimates for affine Gaussian problems.

The setting is ``Q(lam) = A lam + b`` with a Gaussian initial (prior) density
``N(lam0, S_init)`` on parameters and a Gaussian observed (likelihood) density
``N(mu_obs, S_obs)`` on outputs.  The predicted density is the push-forward
``N(A lam0 + b, A S_init A^T)``.

The MUD and MAP points are evaluated through the whitened operator
``B = A L`` where ``S_init = L L^T``.  This is algebraically the same as the
textbook expressions (``S_init A^T S_pred^{-1} r`` equals ``L B^+ r``) but
keeps the error proportional to ``cond(B)`` rather than ``cond(B)**2``.  The
literal forms are kept for the covariance algebra, where the two are compared.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
import scipy.linalg as sla

from .linalg import (
    AffineMap,
    GaussianDensity,
    LinAlgInputError,
    SpdFactorization,
    default_rank_tol,
    pseudo_inverse,
    svd,
    symmetrize,
)

METHODS = ("MUD", "MUD-alt", "MAP", "LSQ")


class UnsupportedProblemError(ValueError):
    """The closed form does not apply (e.g. an over-determined map)."""


class PredictabilityError(ValueError):
    """The predictability assumption fails where a derivation requires it."""


class SingularCovarianceError(LinAlgInputError):
    pass


@dataclass(frozen=True)
class LinearGaussianProblem:
    map: AffineMap
    initial: GaussianDensity
    observed: GaussianDensity

    def __post_init__(self):
        if self.initial.dim != self.map.n_params:
            raise LinAlgInputError(
                f"initial density has dimension {self.initial.dim}, "
                f"map expects {self.map.n_params} parameters"
            )
        if self.observed.dim != self.map.n_outputs:
            raise LinAlgInputError(
                f"observed density has dimension {self.observed.dim}, "
                f"map produces {self.map.n_outputs} outputs"
            )

    @classmethod
    def from_arrays(cls, A, b, initial_mean, initial_cov, observed_mean, observed_cov):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        return cls(
            AffineMap(A, b),
            GaussianDensity(initial_mean, initial_cov),
            GaussianDensity(observed_mean, observed_cov),
        )

    @property
    def A(self) -> np.ndarray:
        return self.map.matrix

    @property
    def b(self) -> np.ndarray:
        return self.map.bias

    @property
    def n_params(self) -> int:
        return self.map.n_params

    @property
    def n_outputs(self) -> int:
        return self.map.n_outputs

    @functools.cached_property
    def predicted_cov(self) -> np.ndarray:
        A, S = self.A, self.initial.covariance
        P = A @ S @ A.T
        return 0.5 * (P + P.T)

    @functools.cached_property
    def residual(self) -> np.ndarray:
        """``mu_obs - b - A lam0``, the data misfit at the initial mean."""
        return self.observed.mean - self.b - self.A @ self.initial.mean

    @functools.cached_property
    def initial_sqrt(self) -> np.ndarray:
        return _sqrt_factor(self.initial.covariance)

    def scaled(self, alpha: float) -> "LinearGaussianProblem":
        """Same problem with the initial covariance multiplied by ``alpha``."""
        if alpha <= 0:
            raise ValueError("alpha must be positive")
        init = GaussianDensity(self.initial.mean, alpha * self.initial.covariance)
        return replace(self, initial=init)


@dataclass(frozen=True)
class EstimateReport:
    estimate: np.ndarray
    method: str
    predictability_ok: bool
    margin: float
    covariance: Optional[np.ndarray] = None

    def relative_error(self, reference) -> float:
        reference = np.asarray(reference, dtype=float)
        return float(np.linalg.norm(self.estimate - reference) / np.linalg.norm(reference))


def _sqrt_factor(S: np.ndarray) -> np.ndarray:
    """A square factor ``L`` with ``L @ L.T == S`` (Cholesky, else eigen)."""
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(S)
        return V * np.sqrt(np.clip(w, 0.0, None))


def _full_rank_factor(S: np.ndarray, name: str) -> SpdFactorization:
    fac = SpdFactorization.of(S)
    if not fac.full_rank:
        raise SingularCovarianceError(f"{name} is singular (rank {fac.rank} of {S.shape[0]})")
    return fac


def predicted_covariance(problem: LinearGaussianProblem) -> np.ndarray:
    """Push-forward covariance ``A S_init A^T``."""
    return problem.predicted_cov.copy()


def check_predictability(problem: LinearGaussianProblem):
    """Return ``(ok, margin)`` with ``margin = eigmin(S_pred) - eigmax(S_obs)``."""
    pred_min = np.linalg.eigvalsh(problem.predicted_cov)[0]
    obs_max = np.linalg.eigvalsh(problem.observed.covariance)[-1]
    margin = float(pred_min - obs_max)
    return margin > 0, margin


def mud_point(problem: LinearGaussianProblem, rank_tol: Optional[float] = None) -> EstimateReport:
    """Maximal updated density point.

    Computes ``lam0 + S_init A^T S_pred^{-1} (mu_obs - b - A lam0)``.  A
    rank-deficient predicted covariance is handled with the pseudo-inverse at
    ``rank_tol`` (relative to the largest singular value of ``A L``), giving
    the formal MUD point.  The estimate is returned even when the
    predictability assumption fails; ``predictability_ok`` records it.

    Raises
    ------
    UnsupportedProblemError
        For over-determined maps (more outputs than parameters, full column
        rank); use :func:`least_squares` there.
    """
    m, p = problem.n_outputs, problem.n_params
    if m > p and problem.map.rank == p:
        raise UnsupportedProblemError(
            f"over-determined map ({m} outputs > {p} parameters); use least_squares"
        )
    L = problem.initial_sqrt
    B = problem.A @ L
    tol = default_rank_tol(B.shape) if rank_tol is None else rank_tol
    y = pseudo_inverse(B, tol) @ problem.residual
    ok, margin = check_predictability(problem)
    return EstimateReport(problem.initial.mean + L @ y, "MUD", ok, margin)


def updated_covariance(problem: LinearGaussianProblem, allow_pinv: bool = False) -> np.ndarray:
    """Covariance of the updated density.

    ``S_init - S_init A^T S_pred^{-1} (S_pred - S_obs) S_pred^{-1} A S_init``

    Raises
    ------
    SingularCovarianceError
        If the predicted covariance is singular and ``allow_pinv`` is false.
    """
    fac = SpdFactorization.of(problem.predicted_cov)
    if not fac.full_rank and not allow_pinv:
        raise SingularCovarianceError(
            f"predicted covariance is singular (rank {fac.rank}); pass allow_pinv=True"
        )
    S = problem.initial.covariance
    K = fac.solve(problem.A @ S)
    up = S - K.T @ (problem.predicted_cov - problem.observed.covariance) @ K
    return 0.5 * (up + up.T)


def mud_point_alt(problem: LinearGaussianProblem) -> EstimateReport:
    """MUD point through the updated covariance, ``lam0 + S_up A^T S_obs^{-1} r``.

    Slower than :func:`mud_point`; use it when the updated covariance is also
    wanted (it is returned in ``covariance``).

    Raises
    ------
    PredictabilityError
        If ``eigmin(S_pred) <= eigmax(S_obs)``, where the derivation is invalid.
    """
    ok, margin = check_predictability(problem)
    if not ok:
        raise PredictabilityError(
            f"predictability assumption violated (margin {margin:.3e}); "
            "the updated-covariance form requires a positive margin"
        )
    obs = _full_rank_factor(problem.observed.covariance, "observed covariance")
    up = updated_covariance(problem)
    est = problem.initial.mean + up @ (problem.A.T @ obs.solve(problem.residual))
    return EstimateReport(est, "MUD-alt", ok, margin, covariance=up)


def effective_regularization(problem: LinearGaussianProblem) -> np.ndarray:
    """``S_init^{-1} - A^T S_pred^{-1} A``; vanishes when the map is invertible."""
    init = _full_rank_factor(problem.initial.covariance, "initial covariance")
    pred = SpdFactorization.of(problem.predicted_cov)
    R = init.inverse() - problem.A.T @ pred.solve(problem.A)
    return 0.5 * (R + R.T)


def _as_rows(lam, p: int) -> np.ndarray:
    lam = np.asarray(lam, dtype=float)
    return lam.reshape(-1, p)


def _quad(fac: SpdFactorization, X: np.ndarray) -> np.ndarray:
    """Row-wise ``x^T M^{-1} x``."""
    return np.einsum("ij,ji->i", X, fac.solve(X.T))


def objective_T(problem: LinearGaussianProblem, lam):
    """Tikhonov functional: data misfit plus ``||lam - lam0||^2`` in ``S_init^{-1}``.

    ``lam`` may be one parameter vector or a matrix of row vectors.
    """
    lam = np.asarray(lam, dtype=float)
    X = _as_rows(lam, problem.n_params)
    obs = _full_rank_factor(problem.observed.covariance, "observed covariance")
    init = _full_rank_factor(problem.initial.covariance, "initial covariance")
    misfit = problem.map(X) - problem.observed.mean
    out = _quad(obs, misfit) + _quad(init, X - problem.initial.mean)
    return float(out[0]) if lam.ndim == 1 else out


def objective_J(problem: LinearGaussianProblem, lam):
    """Data-consistent functional ``T(lam) - ||A (lam - lam0)||^2`` in ``S_pred^{-1}``.

    Its minimizer is the MUD point.
    """
    lam = np.asarray(lam, dtype=float)
    X = _as_rows(lam, problem.n_params)
    pred = _full_rank_factor(problem.predicted_cov, "predicted covariance")
    shift = (X - problem.initial.mean) @ problem.A.T
    out = np.atleast_1d(objective_T(problem, X)) - _quad(pred, shift)
    return float(out[0]) if lam.ndim == 1 else out


def posterior_covariance(problem: LinearGaussianProblem, form: str = "woodbury") -> np.ndarray:
    """Bayesian posterior covariance.

    ``form="direct"`` inverts ``A^T S_obs^{-1} A + S_init^{-1}``;
    ``form="woodbury"`` uses ``S_init - S_init A^T (S_pred + S_obs)^{-1} A S_init``.
    """
    A, S = problem.A, problem.initial.covariance
    if form == "direct":
        obs = _full_rank_factor(problem.observed.covariance, "observed covariance")
        init = _full_rank_factor(S, "initial covariance")
        H = A.T @ obs.solve(A) + init.inverse()
        return _full_rank_factor(symmetrize(H), "posterior precision").inverse()
    if form == "woodbury":
        fac = _full_rank_factor(problem.predicted_cov + problem.observed.covariance,
                                "predicted + observed covariance")
        K = fac.solve(A @ S)
        post = S - (A @ S).T @ K
        return 0.5 * (post + post.T)
    raise ValueError(f"unknown form {form!r}")


def map_point(problem: LinearGaussianProblem) -> EstimateReport:
    """Maximum a posteriori point and posterior covariance.

    Evaluated as a ridge problem in whitened coordinates, which equals
    ``lam0 + S_post A^T S_obs^{-1} (mu_obs - b - A lam0)``.
    """
    obs_L = _full_rank_factor(problem.observed.covariance, "observed covariance").factor
    L = problem.initial_sqrt
    C = sla.solve_triangular(obs_L, problem.A @ L, lower=True)
    rt = sla.solve_triangular(obs_L, problem.residual, lower=True)
    U, s, Vt = svd(C)
    y = Vt.T @ (s / (s * s + 1.0) * (U.T @ rt))
    shrink = (Vt.T * (s * s / (s * s + 1.0))) @ Vt
    post = L @ (np.eye(L.shape[1]) - shrink) @ L.T
    post = 0.5 * (post + post.T)
    ok, margin = check_predictability(problem)
    return EstimateReport(problem.initial.mean + L @ y, "MAP", ok, margin, covariance=post)


def least_squares(affine: AffineMap, mu_obs, rank_tol: Optional[float] = None) -> np.ndarray:
    """Minimum-norm least-squares solution ``A^+ (mu_obs - b)``."""
    mu_obs = np.atleast_1d(np.asarray(mu_obs, dtype=float))
    if mu_obs.size != affine.n_outputs:
        raise LinAlgInputError(
            f"mu_obs has {mu_obs.size} entries, map has {affine.n_outputs} outputs"
        )
    return pseudo_inverse(affine.matrix, rank_tol) @ (mu_obs - affine.bias)


def lsq_report(problem: LinearGaussianProblem) -> EstimateReport:
    ok, margin = check_predictability(problem)
    return EstimateReport(least_squares(problem.map, problem.observed.mean), "LSQ", ok, margin)
