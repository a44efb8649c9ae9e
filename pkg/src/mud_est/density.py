"""Sample-based solution of the data-consistent inverse problem.

Given samples from an initial density and their QoI values, the updated
density at each sample is ``initial * observed(Q) / predicted(Q)``, with the
predicted density estimated by a Gaussian KDE on the QoI samples.  The MUD
estimate is the sample with the largest updated density, and the sample mean
of the ratio ``observed / predicted`` is a diagnostic that should be near 1.
"""

from __future__ import annotations

import logging
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Protocol, Sequence, Tuple, Union

import numpy as np
import scipy.linalg as sla

from .linalg import GaussianDensity
from .linear import PredictabilityError
from .qoi import MeasurementData, build_residual_matrix, fit_pca, q_pca

log = logging.getLogger(__name__)

THREADS_ENV = "MUD_EST_THREADS"
DEFAULT_BAND = (0.9, 1.1)
_CHUNK = 128  # query rows per kernel-sum block; fixed so results never depend on threading


class Density(Protocol):
    def pdf(self, x) -> np.ndarray: ...


def n_threads() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            log.warning("ignoring non-integer %s=%r", THREADS_ENV, raw)
    return min(8, os.cpu_count() or 1)


@dataclass(frozen=True)
class UniformDensity:
    """Uniform density on the box ``[lower, upper]``."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or np.any(hi <= lo):
            raise ValueError("need lower < upper in every dimension")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.size

    def pdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1, self.dim)
        inside = np.all((x >= self.lower) & (x <= self.upper), axis=1)
        return inside / np.prod(self.upper - self.lower)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(self.lower, self.upper, size=(n, self.dim))


@dataclass(frozen=True)
class SampleEnsemble:
    """Parameter samples with their QoI values.

    ``initial_density`` evaluates the density the samples were drawn from;
    ``None`` means uniform (a constant, which does not move the argmax).
    """

    params: np.ndarray
    qoi: np.ndarray
    initial_density: Optional[Density] = None
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        P = np.asarray(self.params, dtype=float)
        P = P.reshape(-1, 1) if P.ndim == 1 else P
        Q = np.asarray(self.qoi, dtype=float)
        Q = Q.reshape(-1, 1) if Q.ndim == 1 else Q
        if P.shape[0] != Q.shape[0]:
            raise ValueError(f"{P.shape[0]} parameter rows but {Q.shape[0]} QoI rows")
        w = self.weights
        if w is not None:
            w = np.asarray(w, dtype=float).ravel()
            if w.size != P.shape[0]:
                raise ValueError("need one weight per sample")
            if np.any(w < 0) or not np.any(w > 0):
                raise ValueError("weights must be non-negative and not all zero")
            w.setflags(write=False)
        P, Q = P.copy(), Q.copy()
        P.setflags(write=False)
        Q.setflags(write=False)
        object.__setattr__(self, "params", P)
        object.__setattr__(self, "qoi", Q)
        object.__setattr__(self, "weights", w)

    @property
    def n_samples(self) -> int:
        return self.params.shape[0]

    @property
    def n_params(self) -> int:
        return self.params.shape[1]

    @property
    def n_qoi(self) -> int:
        return self.qoi.shape[1]

    def sample_weights(self) -> np.ndarray:
        return np.ones(self.n_samples) if self.weights is None else self.weights

    def with_qoi(self, qoi) -> "SampleEnsemble":
        return SampleEnsemble(self.params, qoi, self.initial_density, self.weights)


@dataclass(frozen=True)
class KdeModel:
    """Gaussian kernel density estimate with a full bandwidth matrix."""

    points: np.ndarray
    bandwidth: np.ndarray
    weights: np.ndarray
    rule: str = "scott"

    def __post_init__(self):
        L = np.linalg.cholesky(self.bandwidth)
        object.__setattr__(self, "_chol", L)
        object.__setattr__(self, "_white", sla.solve_triangular(L, self.points.T, lower=True).T)
        k = self.points.shape[1]
        object.__setattr__(self, "_norm",
                           (2 * np.pi) ** (-k / 2) / np.prod(np.diag(L)))

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def _block(self, Xw: np.ndarray) -> np.ndarray:
        d = Xw[:, None, :] - self._white[None, :, :]
        K = np.exp(-0.5 * np.sum(d * d, axis=2))
        return (K @ self.weights) * self._norm

    def pdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1, self.dim)
        Xw = sla.solve_triangular(self._chol, x.T, lower=True).T
        starts = range(0, Xw.shape[0], _CHUNK)
        threads = n_threads()
        if threads == 1 or Xw.shape[0] <= _CHUNK:
            parts = [self._block(Xw[i:i + _CHUNK]) for i in starts]
        else:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                parts = list(pool.map(lambda i: self._block(Xw[i:i + _CHUNK]), starts))
        return np.concatenate(parts) if parts else np.empty(0)

    def mean(self) -> np.ndarray:
        return self.weights @ self.points

    def covariance(self) -> np.ndarray:
        c = self.points - self.mean()
        return (c.T * self.weights) @ c + self.bandwidth


def _bandwidth_factor(rule, n_eff: float, k: int) -> float:
    if rule == "scott":
        return n_eff ** (-1.0 / (k + 4))
    if rule == "silverman":
        return (n_eff * (k + 2) / 4.0) ** (-1.0 / (k + 4))
    if isinstance(rule, (int, float)) and rule > 0:
        return float(rule)
    raise ValueError(f"unknown bandwidth rule {rule!r}")


def fit_kde(points, bandwidth_rule: Union[str, float] = "scott", weights=None) -> KdeModel:
    """Fit a Gaussian KDE with a diagonal bandwidth.

    Per dimension ``h_d = factor * std_d`` where ``factor`` is
    ``n**(-1/(k+4))`` for Scott's rule and ``(n (k+2)/4)**(-1/(k+4))`` for
    Silverman's; ``n`` is the effective sample size when weighted.  A float
    ``bandwidth_rule`` is used as the factor directly.  Dimensions with zero
    spread get a floor bandwidth of ``1e-8 * max(range, |x|, 1)`` and a
    warning.
    """
    X = np.asarray(points, dtype=float)
    X = X.reshape(-1, 1) if X.ndim == 1 else X
    s, k = X.shape
    if s < 2 or k < 1:
        raise ValueError(f"need at least 2 points in at least 1 dimension, got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("KDE points must be finite")
    w = np.ones(s) if weights is None else np.asarray(weights, dtype=float).ravel()
    w = w / w.sum()
    n_eff = 1.0 / np.sum(w * w)
    mean = w @ X
    denom = 1.0 - np.sum(w * w)
    # a single nonzero weight leaves no spread to estimate
    var = (w @ (X - mean) ** 2) / denom if denom > 1e-12 else np.zeros(k)
    std = np.sqrt(np.clip(var, 0.0, None))
    h = _bandwidth_factor(bandwidth_rule, n_eff, k) * std
    span = X.max(axis=0) - X.min(axis=0)
    floor = 1e-8 * np.maximum.reduce([span, np.abs(X).max(axis=0), np.ones(k)])
    degenerate = ~(h > floor)
    if np.any(degenerate):
        warnings.warn(
            f"degenerate KDE data in dimension(s) {np.flatnonzero(degenerate).tolist()}; "
            "using floor bandwidth", RuntimeWarning, stacklevel=2)
        h = np.where(degenerate, floor, h)
    rule = bandwidth_rule if isinstance(bandwidth_rule, str) else "factor"
    return KdeModel(X.copy(), np.diag(h * h), w, rule)


def predicted_density(ensemble: SampleEnsemble, bandwidth_rule="scott") -> KdeModel:
    """KDE of the push-forward (predicted) density from the ensemble's QoI."""
    if ensemble.n_qoi > 5:
        warnings.warn(f"KDE in {ensemble.n_qoi} QoI dimensions is unreliable",
                      RuntimeWarning, stacklevel=2)
    return fit_kde(ensemble.qoi, bandwidth_rule, ensemble.weights)


@dataclass(frozen=True)
class UpdateResult:
    ratios: np.ndarray
    updated: np.ndarray
    initial: np.ndarray
    e_r: float
    mud_index: int
    mud_point: np.ndarray
    violations: int = 0


def update(ensemble: SampleEnsemble, observed: Density, predicted: Density) -> UpdateResult:
    """Evaluate the updated density on the ensemble and take its argmax.

    Samples where the predicted density is zero get ratio 0 and are counted
    in ``violations``.

    Raises
    ------
    PredictabilityError
        If every ratio is zero.
    """
    Q = ensemble.qoi
    obs = np.asarray(observed.pdf(Q), dtype=float).ravel()
    pred = np.asarray(predicted.pdf(Q), dtype=float).ravel()
    positive = pred > 0
    r = np.zeros_like(obs)
    r[positive] = obs[positive] / pred[positive]
    if not np.any(r > 0):
        raise PredictabilityError("every observed/predicted ratio is zero")
    if ensemble.initial_density is None:
        init = np.ones(ensemble.n_samples)
    else:
        init = np.asarray(ensemble.initial_density.pdf(ensemble.params), dtype=float).ravel()
    up = init * r
    w = ensemble.sample_weights()
    e_r = float(w @ r / w.sum())
    idx = int(np.argmax(up))
    return UpdateResult(r, up, init, e_r, idx, ensemble.params[idx].copy(),
                        int(np.sum(~positive)))


def expectation_r(result: UpdateResult, band: Tuple[float, float] = DEFAULT_BAND):
    """Return ``(e_r, verdict)``; the verdict is ``"OK"`` inside ``band``."""
    lo, hi = band
    verdict = "OK" if lo <= result.e_r <= hi else "SUSPECT"
    return result.e_r, verdict


def refine_mud(result: UpdateResult, ensemble: SampleEnsemble, qoi_fn, observed: Density,
               predicted: Density, n_grid: int = 11, radius=None) -> np.ndarray:
    """Local grid search of the updated density around the best sample.

    ``qoi_fn`` maps an ``(n, p)`` parameter array to ``(n, m)`` QoI values.
    The default box half-width per dimension is the distance to the nearest
    other sample.  Only sensible for low parameter dimensions.
    """
    center = result.mud_point
    P = ensemble.params
    if radius is None:
        d = np.linalg.norm(P - center, axis=1)
        d[result.mud_index] = np.inf
        radius = np.full(P.shape[1], d.min())
    axes = [np.linspace(c - r, c + r, n_grid) for c, r in zip(center, np.atleast_1d(radius))]
    grid = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
    q = np.asarray(qoi_fn(grid), dtype=float).reshape(grid.shape[0], -1)
    pred = predicted.pdf(q)
    r = np.where(pred > 0, observed.pdf(q) / np.where(pred > 0, pred, 1.0), 0.0)
    init = (np.ones(grid.shape[0]) if ensemble.initial_density is None
            else ensemble.initial_density.pdf(grid))
    best = int(np.argmax(init * r))
    if init[best] * r[best] > result.updated[result.mud_index]:
        return grid[best]
    return center.copy()


def select_pca_components(ensemble: SampleEnsemble, data: MeasurementData,
                          candidate_counts: Sequence[int], bandwidth_rule="scott",
                          band: Tuple[float, float] = DEFAULT_BAND):
    """Choose how many principal components to use by the ratio diagnostic.

    For each candidate count the PCA map is built, the update run with a
    standard normal observed density, and ``e_r`` recorded.  The largest
    count with an ``OK`` verdict wins; when none is ``OK`` the count whose
    ``e_r`` is closest to 1 is returned.

    Returns
    -------
    chosen : int
    table : list of dict
        One entry per candidate with ``n_components``, ``e_r``, ``verdict``
        and the ``result`` of the update.
    """
    counts = sorted(set(int(c) for c in candidate_counts))
    if not counts:
        raise ValueError("need at least one candidate component count")
    residuals = build_residual_matrix(ensemble, data)
    pca = fit_pca(residuals, variance_threshold=1.0, max_components=max(counts))
    table = []
    for k in counts:
        pk = pca.with_components(k)
        sub = ensemble.with_qoi(q_pca(pk, residuals.X))
        result = update(sub, GaussianDensity.standard(k), predicted_density(sub, bandwidth_rule))
        e_r, verdict = expectation_r(result, band)
        table.append({"n_components": k, "e_r": e_r, "verdict": verdict,
                      "result": result, "pca": pk})
    ok = [row for row in table if row["verdict"] == "OK"]
    if ok:
        chosen = ok[-1]["n_components"]
    else:
        chosen = min(table, key=lambda row: abs(row["e_r"] - 1.0))["n_components"]
    return chosen, table
