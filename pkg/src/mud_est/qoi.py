"""Data-constructed QoI maps: mean error, weighted mean error, and PCA.

Measurement data are indexed by device ``j`` and repeat ``i``.  The WME map
turns repeated noisy data into one standard-normal component per device; the
PCA map projects Z-scored residuals onto principal directions of a sample
residual matrix, which handles spatial/temporal data without repeats.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .linalg import AffineMap, default_rank_tol, numerical_rank, svd


@dataclass(frozen=True)
class MeasurementData:
    """Repeated data ``values[j][i]`` for device ``j`` with noise std ``sigmas[j]``."""

    values: Tuple[np.ndarray, ...]
    sigmas: np.ndarray

    def __post_init__(self):
        vals = tuple(np.atleast_1d(np.asarray(v, dtype=float)).ravel() for v in self.values)
        sig = np.atleast_1d(np.asarray(self.sigmas, dtype=float)).ravel()
        if len(vals) != sig.size:
            raise ValueError(f"{len(vals)} devices but {sig.size} noise levels")
        for j, v in enumerate(vals):
            if v.size == 0:
                raise ValueError(f"device {j} has no data")
            if not np.all(np.isfinite(v)):
                raise ValueError(f"device {j} has non-finite data")
        if np.any(~(sig > 0)):
            raise ValueError("every noise level must be positive")
        for v in vals:
            v.setflags(write=False)
        sig.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "sigmas", sig)

    @classmethod
    def from_flat(cls, values, sigmas) -> "MeasurementData":
        """One device per datum, as for spatial sensors without repeats."""
        values = np.atleast_1d(np.asarray(values, dtype=float))
        sigmas = np.broadcast_to(np.asarray(sigmas, dtype=float), values.shape)
        return cls(tuple(values[:, None]), sigmas.copy())

    @property
    def n_devices(self) -> int:
        return len(self.values)

    @property
    def counts(self) -> np.ndarray:
        return np.array([v.size for v in self.values])

    @property
    def n_total(self) -> int:
        return int(self.counts.sum())

    @property
    def flat_values(self) -> np.ndarray:
        return np.concatenate(self.values)

    @property
    def flat_sigmas(self) -> np.ndarray:
        return np.repeat(self.sigmas, self.counts)

    @property
    def ordering(self) -> List[Tuple[int, int]]:
        return [(j, i) for j, v in enumerate(self.values) for i in range(v.size)]


@dataclass(frozen=True)
class LinearMeasurementSet:
    """Linear measurement functionals, one row ``M_j`` per device."""

    rows: np.ndarray
    rank: int = field(init=False)

    def __post_init__(self):
        M = np.atleast_2d(np.asarray(self.rows, dtype=float)).copy()
        M.setflags(write=False)
        object.__setattr__(self, "rows", M)
        object.__setattr__(self, "rank", numerical_rank(M))

    @property
    def independent(self) -> bool:
        return self.rank == self.rows.shape[0]

    def __call__(self, lam) -> np.ndarray:
        lam = np.asarray(lam, dtype=float)
        return self.rows @ lam if lam.ndim == 1 else lam @ self.rows.T


def _check_outputs(data: MeasurementData, model_outputs) -> np.ndarray:
    out = np.asarray(model_outputs, dtype=float)
    if out.shape[-1] != data.n_devices:
        raise ValueError(
            f"model outputs have {out.shape[-1]} devices, data have {data.n_devices}"
        )
    return out


def q_me(data: MeasurementData, model_outputs) -> np.ndarray:
    """Mean error map: per device, the average of ``M_j(lam) - d_{j,i}``.

    ``model_outputs`` holds ``M_j(lam)`` in its last axis, so a sample matrix
    of shape ``(s, m)`` gives an ``(s, m)`` result.
    """
    out = _check_outputs(data, model_outputs)
    means = np.array([v.mean() for v in data.values])
    return out - means


def q_wme(data: MeasurementData, model_outputs) -> np.ndarray:
    """Weighted mean error map.

    Component ``j`` is ``sum_i (M_j(lam) - d_{j,i}) / (sigma_j sqrt(N_j))``;
    at the true parameter each component is a draw from ``N(0, 1)``.
    """
    out = _check_outputs(data, model_outputs)
    n = data.counts
    sums = np.array([v.sum() for v in data.values])
    return (n * out - sums) / (data.sigmas * np.sqrt(n))


def assemble_wme_affine(measurements: LinearMeasurementSet, data: MeasurementData) -> AffineMap:
    """Write the WME map of linear measurements as ``A(N) lam + b(N)``.

    Row ``j`` of ``A`` is ``sqrt(N_j) / sigma_j * M_j`` and
    ``b_j = -sum_i d_{j,i} / (sigma_j sqrt(N_j))``.
    """
    M = measurements.rows
    if M.shape[0] != data.n_devices:
        raise ValueError(f"{M.shape[0]} measurements but {data.n_devices} data devices")
    if not measurements.independent:
        warnings.warn(
            f"measurement rows are linearly dependent (rank {measurements.rank} "
            f"of {M.shape[0]})", RuntimeWarning, stacklevel=2)
    n = data.counts
    sums = np.array([v.sum() for v in data.values])
    A = (np.sqrt(n) / data.sigmas)[:, None] * M
    b = -sums / (data.sigmas * np.sqrt(n))
    return AffineMap(A, b)


def wme_predicted_variance(row, initial_cov, n: int, sigma: float) -> float:
    """Predicted variance of one WME component: ``N / sigma^2 * M S_init M^T``."""
    row = np.atleast_1d(np.asarray(row, dtype=float)).ravel()
    S = np.atleast_2d(np.asarray(initial_cov, dtype=float))
    return float(n / sigma**2 * (row @ S @ row))


def _wme_pred_cov(M, S, counts, sigmas) -> np.ndarray:
    A = (np.sqrt(counts) / sigmas)[:, None] * M
    P = A @ S @ A.T
    return 0.5 * (P + P.T)


def min_data_for_predictability(measurements: LinearMeasurementSet, initial_cov, sigmas,
                                slack: float = 1e-9) -> np.ndarray:
    """Smallest per-device repeat counts making the WME problem predictable.

    With an identity observed covariance, predictability means the smallest
    eigenvalue of ``A(N) S_init A(N)^T`` exceeds 1 (by ``slack``).  Counts are
    searched along ``N_j = ceil(k * w_j)`` with ``w_j`` chosen so every device
    starts from the same predicted variance; ``k`` is found by doubling then
    integer bisection.  The eigenvalue is monotone in every ``N_j``.
    """
    M = measurements.rows
    if not measurements.independent:
        raise ValueError(
            f"measurements are linearly dependent (rank {measurements.rank}); "
            "no finite data count makes the problem predictable")
    S = np.atleast_2d(np.asarray(initial_cov, dtype=float))
    sigmas = np.broadcast_to(np.asarray(sigmas, dtype=float), (M.shape[0],))
    beta = np.einsum("ij,jk,ik->i", M, S, M) / sigmas**2
    w = beta.max() / beta  # so device with the largest unit variance gets k

    def counts(k: int) -> np.ndarray:
        # round before ceil so w == 1 exactly gives N == k
        return np.ceil(np.round(k * w, 9)).astype(int)

    def ok(k: int) -> bool:
        return np.linalg.eigvalsh(_wme_pred_cov(M, S, counts(k), sigmas))[0] > 1.0 + slack

    hi = 1
    while not ok(hi):
        hi *= 2
        if hi > 2**62:
            raise RuntimeError("no predictable data count found")
    lo = hi // 2  # ok(lo) is false unless hi == 1
    if hi == 1:
        return counts(1)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return counts(hi)


@dataclass(frozen=True)
class ResidualMatrix:
    """Z-scored residuals ``X[k, i] = (M(lam_k; z_i) - d_i) / sigma_i``."""

    X: np.ndarray
    ordering: Tuple[Tuple[int, int], ...]

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float)).copy()
        if not np.all(np.isfinite(X)):
            bad = np.argwhere(~np.isfinite(X))[0]
            raise ValueError(f"non-finite residual at sample {bad[0]}, datum {bad[1]}")
        if X.shape[1] != len(self.ordering):
            raise ValueError("ordering length does not match the number of columns")
        X.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "ordering", tuple(tuple(o) for o in self.ordering))

    @property
    def n_samples(self) -> int:
        return self.X.shape[0]

    @property
    def n_data(self) -> int:
        return self.X.shape[1]


def zscore_residuals(outputs, data: MeasurementData) -> np.ndarray:
    """Z-scored residual rows for model outputs aligned with the flat data order."""
    out = np.asarray(outputs, dtype=float)
    if out.shape[-1] != data.n_total:
        raise ValueError(f"outputs have {out.shape[-1]} columns, data have {data.n_total} points")
    return (out - data.flat_values) / data.flat_sigmas


def build_residual_matrix(ensemble, data: MeasurementData) -> ResidualMatrix:
    """Residual matrix from an ensemble whose QoI columns follow ``data.ordering``.

    ``ensemble`` is anything with a ``qoi`` array of shape ``(s, n)``, or the
    array itself.
    """
    outputs = getattr(ensemble, "qoi", ensemble)
    outputs = np.atleast_2d(np.asarray(outputs, dtype=float))
    return ResidualMatrix(zscore_residuals(outputs, data), data.ordering)


@dataclass(frozen=True)
class PcaMap:
    """Fitted principal directions of a residual matrix.

    ``components`` has one orthonormal ``n``-vector per row, ordered by
    explained variance; only the first ``n_components`` are used by
    :func:`q_pca`.  Directions come from column-centered residuals, while the
    map itself is applied to raw residuals.
    """

    components: np.ndarray
    explained_variance: np.ndarray
    explained_variance_ratio: np.ndarray
    n_components: int
    centered: bool = True
    column_means: Optional[np.ndarray] = None

    @property
    def n_data(self) -> int:
        return self.components.shape[1]

    @property
    def active(self) -> np.ndarray:
        return self.components[: self.n_components]

    def with_components(self, k: int) -> "PcaMap":
        if not 1 <= k <= self.components.shape[0]:
            raise ValueError(f"can use 1..{self.components.shape[0]} components, got {k}")
        return PcaMap(self.components, self.explained_variance,
                      self.explained_variance_ratio, k, self.centered, self.column_means)


def fit_pca(residuals, variance_threshold: float = 0.95,
            max_components: Optional[int] = None, center: bool = True) -> PcaMap:
    """Principal components of a residual matrix via SVD.

    Keeps the smallest number of components whose cumulative explained
    variance reaches ``variance_threshold``, capped at ``max_components``.
    Each component's largest-magnitude entry is made positive.
    """
    X = residuals.X if isinstance(residuals, ResidualMatrix) else np.atleast_2d(
        np.asarray(residuals, dtype=float))
    s_count, n = X.shape
    if s_count < 2:
        raise ValueError("need at least two samples to fit principal components")
    if not 0 < variance_threshold <= 1:
        raise ValueError("variance_threshold must lie in (0, 1]")
    if max_components is not None and max_components > min(s_count, n):
        raise ValueError(
            f"requested {max_components} components from a {s_count}x{n} residual matrix")
    means = X.mean(axis=0) if center else np.zeros(n)
    _, sv, Vt = svd(X - means)
    var = sv**2 / (s_count - 1)
    total = var.sum()
    ratio = var / total if total > 0 else np.zeros_like(var)
    rank = int(np.sum(sv > default_rank_tol(X.shape) * sv[0])) if sv[0] > 0 else 0
    cum = np.cumsum(ratio)
    k = int(np.searchsorted(cum, variance_threshold - 1e-12) + 1)
    k = max(1, min(k, rank if rank else 1))
    if max_components is not None:
        k = min(k, max_components)
    idx = np.argmax(np.abs(Vt), axis=1)
    signs = np.sign(Vt[np.arange(Vt.shape[0]), idx])
    signs[signs == 0] = 1.0
    Vt = Vt * signs[:, None]
    return PcaMap(Vt, var, ratio, k, center, means)


def q_pca(pca: PcaMap, residual_rows) -> np.ndarray:
    """Project raw Z-scored residual rows onto the active principal components."""
    R = np.asarray(residual_rows, dtype=float)
    if R.shape[-1] != pca.n_data:
        raise ValueError(f"residual rows have {R.shape[-1]} entries, PCA map expects {pca.n_data}")
    return R @ pca.active.T
