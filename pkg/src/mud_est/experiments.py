"""Run configuration, reports, and the built-in experiments.

Every runner returns a :class:`RunReport`.  Reports are plain data: the JSON
payload is deterministic for a given configuration and seed, with wall-clock
timings kept under a separate ``timing`` key.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import io
from .density import (DEFAULT_BAND, SampleEnsemble, UniformDensity, expectation_r, fit_kde,
                      predicted_density, select_pca_components, update)
from .linalg import AffineMap, GaussianDensity, numerical_rank, svd
from .linear import (LinearGaussianProblem, check_predictability, lsq_report, map_point,
                     mud_point, updated_covariance)
from .qoi import (LinearMeasurementSet, MeasurementData, assemble_wme_affine,
                  build_residual_matrix, fit_pca, q_wme)

KINDS = ("linear-gaussian", "density", "wme", "pca",
         "illustrative", "spectral", "dimension", "rank")
DEFAULT_ALPHAS = (0.001, 0.01, 0.1, 10.0)
UNDEFINED = "UNDEFINED"


@dataclass(frozen=True)
class RunConfig:
    """Everything needed to reproduce one run.

    ``inputs`` maps a role (``"ensemble"``, ``"data"``, ``"problem"``,
    ``"operator"``) to a file path.  ``options`` holds runner-specific
    settings such as the ``alphas`` list or requested ``components``.
    """

    kind: str
    inputs: Mapping[str, str] = field(default_factory=dict)
    solver: str = "mud"
    seed: int = 0
    bandwidth: str = "scott"
    variance_threshold: float = 0.95
    diag_band: Tuple[float, float] = DEFAULT_BAND
    out_dir: Optional[str] = None
    options: Mapping[str, object] = field(default_factory=dict)

    def validate(self) -> "RunConfig":
        if self.kind not in KINDS:
            raise ValueError(f"unknown problem kind {self.kind!r}; expected one of {KINDS}")
        lo, hi = self.diag_band
        if not lo < hi:
            raise ValueError(f"diagnostic band must satisfy lo < hi, got {self.diag_band}")
        if not 0 < self.variance_threshold <= 1:
            raise ValueError("variance threshold must lie in (0, 1]")
        for role, path in self.inputs.items():
            if not Path(path).is_file():
                raise FileNotFoundError(f"{role} file not found: {path}")
        return self

    def echo(self) -> dict:
        return {
            "kind": self.kind,
            "inputs": {k: str(v) for k, v in sorted(self.inputs.items())},
            "solver": self.solver,
            "seed": self.seed,
            "bandwidth": self.bandwidth,
            "variance_threshold": self.variance_threshold,
            "diag_band": list(self.diag_band),
            "options": io.to_jsonable(dict(sorted(self.options.items()))),
        }


@dataclass
class RunReport:
    """Result of one run.

    ``estimates`` is a list of ``{"method", "alpha", "estimate",
    "relative_error", "e_r", "verdict"}`` records.  ``tables`` maps a file
    stem to ``(header, rows)`` plot data.
    """

    kind: str
    config: dict
    estimates: List[dict] = field(default_factory=list)
    diagnostics: Dict[str, object] = field(default_factory=dict)
    spectra: Dict[str, object] = field(default_factory=dict)
    summary: Dict[str, object] = field(default_factory=dict)
    tables: Dict[str, Tuple[List[str], List[list]]] = field(default_factory=dict)
    timing: Dict[str, float] = field(default_factory=dict)

    @property
    def seed(self):
        return self.config.get("seed")

    def verdicts(self) -> List[str]:
        out = [e["verdict"] for e in self.estimates if e.get("verdict")]
        if "verdict" in self.diagnostics:
            out.append(self.diagnostics["verdict"])
        return out

    @property
    def suspect(self) -> bool:
        return any(v != "OK" for v in self.verdicts())

    def estimate(self, method: str, alpha=None) -> np.ndarray:
        for e in self.estimates:
            if e["method"] == method and e.get("alpha") == alpha:
                return np.asarray(e["estimate"])
        raise KeyError(f"no estimate for method={method!r}, alpha={alpha!r}")

    def payload(self, include_timing: bool = True) -> dict:
        doc = {
            "schema_version": io.SCHEMA_VERSION,
            "kind": self.kind,
            "seed": self.seed,
            "config": self.config,
            "estimates": self.estimates,
            "diagnostics": self.diagnostics,
            "spectra": self.spectra,
            "summary": self.summary,
            "tables": sorted(self.tables),
        }
        if include_timing:
            doc["timing"] = self.timing
        return io.to_jsonable(doc)

    def to_json(self, include_timing: bool = True) -> str:
        return json.dumps(self.payload(include_timing), indent=2, sort_keys=True) + "\n"

    def write(self, out_dir, table_format: str = "csv") -> List[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        written = [io.write_json(self.payload(), out / "report.json")]
        for stem, (header, rows) in sorted(self.tables.items()):
            if table_format == "json":
                records = [dict(zip(header, r)) for r in rows]
                written.append(io.write_json(
                    {"schema_version": io.SCHEMA_VERSION, "rows": records}, out / f"{stem}.json"))
            else:
                written.append(io.write_table(out / f"{stem}.csv", header, rows))
        return written


class _Timer:
    def __init__(self, report: RunReport, key: str):
        self.report, self.key = report, key

    def __enter__(self):
        self.t0 = time.perf_counter()

    def __exit__(self, *exc):
        self.report.timing[self.key] = time.perf_counter() - self.t0


def relative_error(estimate, reference) -> Optional[float]:
    if reference is None:
        return None
    reference = np.asarray(reference, dtype=float)
    return float(np.linalg.norm(np.asarray(estimate) - reference) / np.linalg.norm(reference))


def _record(method, estimate, reference=None, alpha=None, e_r=None, verdict=None) -> dict:
    rec = {"method": method, "alpha": alpha, "estimate": np.asarray(estimate, dtype=float),
           "relative_error": relative_error(estimate, reference)}
    if method.startswith("MUD"):
        rec["e_r"] = e_r
        rec["verdict"] = verdict
    return rec


def gaussian_diagnostic(problem: LinearGaussianProblem, band=DEFAULT_BAND):
    """Ratio diagnostic for a linear-Gaussian problem.

    With a nonsingular predicted covariance the observed/predicted ratio
    integrates to exactly 1 against the predicted density, so ``e_r = 1``.
    The verdict additionally requires a positive predictability margin,
    since otherwise the ratio is unbounded.  A singular predicted covariance
    leaves ``e_r`` undefined.
    """
    ok, margin = check_predictability(problem)
    m = problem.n_outputs
    if numerical_rank(problem.predicted_cov) < m:
        return {"e_r": None, "verdict": UNDEFINED, "predictability_margin": margin}
    e_r = 1.0
    verdict = "OK" if ok and band[0] <= e_r <= band[1] else "SUSPECT"
    return {"e_r": e_r, "verdict": verdict, "predictability_margin": margin}


# --- linear-Gaussian -------------------------------------------------------

def fixture_problem() -> LinearGaussianProblem:
    """Two parameters, one observation ``lam_1 + lam_2``."""
    return LinearGaussianProblem.from_arrays(
        A=[[1.0, 1.0]], b=[0.0],
        initial_mean=[0.25, 0.25], initial_cov=[[1.0, -0.25], [-0.25, 0.5]],
        observed_mean=[1.0], observed_cov=[[0.25]],
    )


def load_problem(path) -> Tuple[LinearGaussianProblem, Optional[np.ndarray]]:
    """Read a problem from JSON.

    Keys: ``A``, ``b`` (optional), ``initial_mean``, ``initial_cov``,
    ``observed_mean``, ``observed_cov`` and an optional ``reference``.
    """
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    missing = [k for k in ("A", "initial_mean", "initial_cov", "observed_mean", "observed_cov")
               if k not in doc]
    if missing:
        raise io.IngestError(f"{path}: missing key(s) {missing}")
    A = np.atleast_2d(np.asarray(doc["A"], dtype=float))
    problem = LinearGaussianProblem.from_arrays(
        A, doc.get("b", np.zeros(A.shape[0])), doc["initial_mean"], doc["initial_cov"],
        doc["observed_mean"], doc["observed_cov"])
    ref = doc.get("reference")
    return problem, None if ref is None else np.asarray(ref, dtype=float)


def _solve_all(problem: LinearGaussianProblem, alphas, reference, band) -> List[dict]:
    diag = gaussian_diagnostic(problem, band)
    recs = [_record("MUD", mud_point(problem).estimate, reference, None,
                    diag["e_r"], diag["verdict"]),
            _record("MAP", map_point(problem).estimate, reference),
            _record("LSQ", lsq_report(problem).estimate, reference)]
    for a in alphas:
        scaled = problem.scaled(a)
        d = gaussian_diagnostic(scaled, band)
        recs.append(_record("MUD", mud_point(scaled).estimate, reference, a, d["e_r"], d["verdict"]))
        recs.append(_record("MAP", map_point(scaled).estimate, reference, a))
    return recs


def run_linear_gaussian(config: Optional[RunConfig] = None,
                        problem: Optional[LinearGaussianProblem] = None,
                        reference=None) -> RunReport:
    """MUD, MAP and least-squares estimates, with MUD and MAP per ``alpha``.

    The problem comes from ``problem``, else ``config.inputs["problem"]``,
    else the built-in two-parameter fixture.  ``config.options["alphas"]``
    scales the initial (prior) covariance.
    """
    config = (config or RunConfig("linear-gaussian")).validate()
    alphas = tuple(float(a) for a in config.options.get("alphas", DEFAULT_ALPHAS))
    if problem is None:
        if "problem" in config.inputs:
            problem, file_ref = load_problem(config.inputs["problem"])
            reference = file_ref if reference is None else reference
        else:
            problem = fixture_problem()
    if reference is None and config.options.get("reference") is not None:
        reference = np.asarray(config.options["reference"], dtype=float)
    report = RunReport("linear-gaussian", config.echo())
    with _Timer(report, "solve"):
        report.estimates = _solve_all(problem, alphas, reference, config.diag_band)
        report.diagnostics = gaussian_diagnostic(problem, config.diag_band)
        report.spectra["predicted_cov"] = np.linalg.eigvalsh(problem.predicted_cov)[::-1]
        if report.diagnostics["predictability_margin"] > 0:
            report.spectra["updated_cov"] = np.linalg.eigvalsh(updated_covariance(problem))[::-1]
    report.tables["errors"] = (
        ["method", "alpha", "relative_error", *[f"lam_{i + 1}" for i in range(problem.n_params)]],
        [[e["method"], "" if e["alpha"] is None else e["alpha"],
          "" if e["relative_error"] is None else e["relative_error"], *e["estimate"]]
         for e in report.estimates])
    return report


# --- spectral decay --------------------------------------------------------

def experiment_spectral_decay(seed: int = 0, p: int = 20, m: int = 5, sigma: float = 0.1,
                              N_list: Sequence[int] = (10, 100, 1000, 10000),
                              config: Optional[RunConfig] = None) -> RunReport:
    """Updated-covariance spectrum of a WME map as the data count grows."""
    config = config or RunConfig("spectral", seed=seed)
    rng = np.random.default_rng(seed)
    report = RunReport("spectral", config.echo())
    report.config["experiment"] = {"p": p, "m": m, "sigma": sigma, "N_list": list(N_list)}
    with _Timer(report, "total"):
        M = rng.standard_normal((m, p))
        lam_true = rng.standard_normal(p)
        init_cov = np.eye(p)
        meas = LinearMeasurementSet(M)
        rows, spectra, margins = [], {}, {}
        for N in N_list:
            clean = M @ lam_true
            values = tuple(clean[j] + sigma * rng.standard_normal(N) for j in range(m))
            data = MeasurementData(values, np.full(m, sigma))
            affine = assemble_wme_affine(meas, data)
            problem = LinearGaussianProblem(affine, GaussianDensity(np.zeros(p), init_cov),
                                            GaussianDensity.standard(m))
            ev = np.sort(np.linalg.eigvalsh(updated_covariance(problem)))[::-1]
            spectra[str(N)] = ev
            margins[str(N)] = check_predictability(problem)[1]
            rows += [[N, i + 1, v] for i, v in enumerate(ev)]
        base = np.ones(p)
        stable = {N: int(np.sum(np.abs(spectra[str(N)] - base) <= 0.1 * base)) for N in N_list}
        informed = {N: spectra[str(N)][-m:] for N in N_list}
        ratios = [float(np.median(informed[a] / informed[b])) for a, b in zip(N_list, N_list[1:])]
    report.spectra = {"updated_cov": spectra}
    report.diagnostics = {"predictability_margin": margins}
    report.summary = {"n_uninformed": {str(k): v for k, v in stable.items()},
                      "informed_decade_ratios": ratios}
    report.tables["eigenvalues"] = (["N", "index", "eigenvalue"], rows)
    return report


# --- high-dimensional sweeps -----------------------------------------------

def _reference_setup(rng: np.random.Generator, p: int):
    A = rng.standard_normal((p, p))
    b = rng.standard_normal(p)
    lam_true = rng.standard_normal(p)
    diag = np.sort(rng.uniform(0.5, 1.5, p))[::-1]
    return A, b, lam_true, np.diag(diag)


def _sweep(kind: str, seed: int, p: int, steps: Sequence[int], alphas, obs_std: float,
           make_map, band, identity_prior: bool, config: Optional[RunConfig]) -> RunReport:
    config = config or RunConfig(kind, seed=seed)
    rng = np.random.default_rng(seed)
    report = RunReport(kind, config.echo())
    report.config["experiment"] = {"p": p, "steps": [int(s) for s in steps],
                                   "alphas": list(alphas), "obs_std": obs_std,
                                   "identity_prior": identity_prior}
    A_ref, b_ref, lam_true, init_cov = _reference_setup(rng, p)
    rows, last = [], None
    with _Timer(report, "total"):
        for k in steps:
            A, b = make_map(A_ref, b_ref, k)
            mu = A @ lam_true + b
            n = A.shape[0]
            problem = LinearGaussianProblem(
                AffineMap(A, b), GaussianDensity(np.zeros(p), init_cov),
                GaussianDensity(mu, obs_std**2 * np.eye(n)))
            recs = [_record("LSQ", lsq_report(problem).estimate, lam_true)]
            for a in alphas:
                scaled = problem.scaled(a)
                recs.append(_record("MUD", mud_point(scaled).estimate, lam_true, a))
                recs.append(_record("MAP", map_point(scaled).estimate, lam_true, a))
            if identity_prior:
                iso = LinearGaussianProblem(problem.map, GaussianDensity(np.zeros(p), np.eye(p)),
                                            problem.observed)
                recs.append(_record("MUD-identity", mud_point(iso).estimate, lam_true))
            rows += [[k, r["method"], "" if r["alpha"] is None else r["alpha"], r["relative_error"]]
                     for r in recs]
            last = (problem, recs)
    problem, recs = last
    diag = gaussian_diagnostic(problem, band)
    for r in recs:
        if r["method"].startswith("MUD"):
            r["e_r"], r["verdict"] = diag["e_r"], diag["verdict"]
    report.estimates = recs
    report.diagnostics = diag
    report.summary = {"endpoint": int(steps[-1]), "reference": lam_true}
    report.tables["errors"] = (["step", "method", "alpha", "relative_error"], rows)
    return report


def experiment_dimension_sweep(seed: int = 0, p: int = 100, m_list: Optional[Sequence[int]] = None,
                               alphas: Sequence[float] = DEFAULT_ALPHAS, obs_std: float = 1e-8,
                               identity_prior: bool = True,
                               config: Optional[RunConfig] = None) -> RunReport:
    """Error curves for row-truncated copies of a random square map.

    Observations are noiseless (``mu = A lam_true + b``) with observed
    covariance ``obs_std**2 * I``.  The estimates stored on the report are
    those of the last ``m``.
    """
    m_list = list(range(1, p + 1)) if m_list is None else list(m_list)
    band = config.diag_band if config else DEFAULT_BAND
    return _sweep("dimension", seed, p, m_list, alphas, obs_std,
                  lambda A, b, m: (A[:m], b[:m]), band, identity_prior, config)


def experiment_rank_sweep(seed: int = 0, p: int = 100, r_list: Optional[Sequence[int]] = None,
                          alphas: Sequence[float] = DEFAULT_ALPHAS, obs_std: float = 1e-8,
                          identity_prior: bool = False,
                          config: Optional[RunConfig] = None) -> RunReport:
    """Error curves for square maps of increasing rank built from the SVD.

    Uses the same reference draws as :func:`experiment_dimension_sweep`, so
    the full-rank endpoint reproduces its ``m = p`` problem.
    """
    r_list = list(range(1, p + 1)) if r_list is None else list(r_list)
    band = config.diag_band if config else DEFAULT_BAND
    cache = {}

    def make(A, b, r):
        if "usv" not in cache:
            cache["usv"] = svd(A)
        U, s, Vt = cache["usv"]
        return (U[:, :r] * s[:r]) @ Vt[:r], b

    return _sweep("rank", seed, p, r_list, alphas, obs_std, make, band, identity_prior, config)


# --- illustrative nonlinear example ----------------------------------------

def fifth_power_predicted_pdf(q) -> np.ndarray:
    """Exact density of ``lam**5`` for ``lam ~ U[-1, 1]``."""
    q = np.abs(np.asarray(q, dtype=float).ravel())
    out = np.zeros_like(q)
    inside = (q > 0) & (q <= 1)
    out[inside] = 0.1 * q[inside] ** (-0.8)
    return out


class _ExactFifthPower:
    def pdf(self, x):
        return fifth_power_predicted_pdf(x)


def experiment_illustrative(seed: int = 0, N_list: Sequence[int] = (5, 10, 20),
                            n_samples: int = 1000, sigma: float = 0.1, q_true: float = 0.25,
                            bandwidth="scott", band=DEFAULT_BAND, n_grid: int = 401,
                            config: Optional[RunConfig] = None) -> RunReport:
    """Scalar ``Q(lam) = lam**5`` on ``U[-1, 1]`` with Gaussian observed data.

    For each ``N`` the observed density is ``N(mean(d), sigma**2)`` built
    from ``N`` noisy data.  The same initial samples and predicted KDE are
    reused across ``N``.  Besides the KDE-based ``e_r`` the report carries
    ``e_r_exact``, computed with the exact push-forward density; the gap
    between the two measures KDE error near the singularity at ``q = 0``.
    """
    if config is not None:
        bandwidth, band = config.bandwidth, config.diag_band
    config = config or RunConfig("illustrative", seed=seed, bandwidth=str(bandwidth))
    rng = np.random.default_rng(seed)
    report = RunReport("illustrative", config.echo())
    report.config["experiment"] = {"N_list": list(N_list), "n_samples": n_samples,
                                   "sigma": sigma, "q_true": q_true}
    lam_true = q_true ** 0.2 if q_true >= 0 else -((-q_true) ** 0.2)
    with _Timer(report, "total"):
        init = UniformDensity([-1.0], [1.0])
        lam = init.sample(n_samples, rng)
        ens = SampleEnsemble(lam, lam**5, init)
        pred = predicted_density(ens, bandwidth)
        exact = _ExactFifthPower()
        grid = np.linspace(-1, 1, n_grid)
        pred_grid = pred.pdf(grid[:, None] ** 5)
        curves = [["initial", g, 0.5] for g in grid]
        for N in N_list:
            d = q_true + sigma * rng.standard_normal(N)
            obs = GaussianDensity([d.mean()], [[sigma**2]])
            res = update(ens, obs, pred)
            e_r, verdict = expectation_r(res, band)
            e_exact = update(ens, obs, exact).e_r
            w = res.ratios * ens.sample_weights()
            push_mean = float(w @ ens.qoi[:, 0] / w.sum())
            rec = _record("MUD", res.mud_point, [lam_true], None, e_r, verdict)
            rec.update({"N": int(N), "e_r_exact": e_exact, "observed_mean": float(d.mean()),
                        "pushforward_mean": push_mean})
            report.estimates.append(rec)
            up = 0.5 * obs.pdf(grid[:, None] ** 5) / np.where(pred_grid > 0, pred_grid, np.inf)
            curves += [[f"updated_N{N}", g, v] for g, v in zip(grid, up)]
    report.summary = {"lam_true": lam_true}
    report.tables["densities"] = (["curve", "lam", "density"], curves)
    return report


# --- PCA workflow ----------------------------------------------------------

def surrogate_outputs(params, t, eps: float = 1.0) -> np.ndarray:
    """Two-parameter time-series surrogate.

    ``M(lam; t) = lam_1 sin(2 pi t) + eps (lam_2 cos(3 pi t) + lam_1 lam_2 t / 2)``.
    A small ``eps`` makes the second parameter nearly invisible.
    """
    P = np.atleast_2d(np.asarray(params, dtype=float))
    l1, l2 = P[:, :1], P[:, 1:2]
    t = np.asarray(t, dtype=float)[None, :]
    return l1 * np.sin(2 * np.pi * t) + eps * (l2 * np.cos(3 * np.pi * t) + 0.5 * l1 * l2 * t)


def make_pca_surrogate(seed: int = 0, n_samples: int = 2000, n_data: int = 50,
                       sigma: float = 0.5, observable: str = "both", noise: bool = False,
                       lam_true=(0.6, 0.4)):
    """Ensemble on ``U[0, 1]^2`` plus single-device measurement data.

    ``observable="first"`` shrinks the second parameter's influence by a
    factor 1000.  With ``noise=False`` the data are the exact model outputs
    at ``lam_true``.

    Returns
    -------
    ensemble : SampleEnsemble
    data : MeasurementData
    lam_true : ndarray
    """
    if observable not in ("both", "first"):
        raise ValueError("observable must be 'both' or 'first'")
    eps = 1.0 if observable == "both" else 1e-3
    rng = np.random.default_rng(seed)
    t = np.linspace(0.0, 1.0, n_data)
    init = UniformDensity([0.0, 0.0], [1.0, 1.0])
    params = init.sample(n_samples, rng)
    lam_true = np.asarray(lam_true, dtype=float)
    d = surrogate_outputs(lam_true, t, eps)[0]
    if noise:
        d = d + sigma * rng.standard_normal(n_data)
    ens = SampleEnsemble(params, surrogate_outputs(params, t, eps), init)
    return ens, MeasurementData((d,), np.array([sigma])), lam_true


def _marginal_rows(params, weights, n_grid=101):
    rows = []
    for j in range(params.shape[1]):
        x = params[:, j]
        grid = np.linspace(x.min(), x.max(), n_grid)
        init_kde = fit_kde(x[:, None])
        up_kde = fit_kde(x[:, None], weights=weights)
        rows += [[j + 1, g, a, b] for g, a, b in
                 zip(grid, init_kde.pdf(grid[:, None]), up_kde.pdf(grid[:, None]))]
    return rows


def run_pca_pipeline(config: Optional[RunConfig] = None,
                     ensemble: Optional[SampleEnsemble] = None,
                     data: Optional[MeasurementData] = None,
                     candidate_counts: Optional[Sequence[int]] = None,
                     reference=None) -> RunReport:
    """Residual PCA, component selection by ``e_r``, and the final update.

    Default candidates are ``1..K`` with ``K`` the larger of the count
    reaching the variance threshold and the parameter dimension, capped at
    the numerical rank of the residual matrix.
    """
    config = (config or RunConfig("pca")).validate()
    if ensemble is None:
        ensemble = io.ingest_ensemble(config.inputs["ensemble"])
    if data is None:
        data = io.load_measurements(config.inputs["data"])
    if candidate_counts is None:
        candidate_counts = config.options.get("components")
    if reference is None and config.options.get("reference") is not None:
        reference = config.options["reference"]
    report = RunReport("pca", config.echo())
    with _Timer(report, "total"):
        residuals = build_residual_matrix(ensemble, data)
        full = fit_pca(residuals, variance_threshold=1.0)
        by_threshold = fit_pca(residuals, config.variance_threshold).n_components
        rank = max(1, int(np.sum(full.explained_variance > 1e-12 * full.explained_variance[0])))
        if candidate_counts is None:
            top = min(max(by_threshold, ensemble.n_params), rank)
            candidate_counts = list(range(1, top + 1))
        chosen, table = select_pca_components(ensemble, data, candidate_counts,
                                              config.bandwidth, config.diag_band)
        best = next(row for row in table if row["n_components"] == chosen)
        res = best["result"]
    for row in table:
        rec = _record("MUD", row["result"].mud_point, reference, None, row["e_r"], row["verdict"])
        rec["n_components"] = row["n_components"]
        rec["chosen"] = row["n_components"] == chosen
        report.estimates.append(rec)
    report.diagnostics = {"e_r": best["e_r"], "verdict": best["verdict"],
                          "n_components": chosen, "violations": res.violations}
    report.spectra = {"explained_variance": full.explained_variance,
                      "explained_variance_ratio": full.explained_variance_ratio}
    report.summary = {"n_components_by_threshold": by_threshold,
                      "candidates": [int(c) for c in candidate_counts],
                      "mud_index": res.mud_index, "mud_point": res.mud_point}
    report.tables["explained_variance"] = (
        ["component", "variance", "ratio"],
        [[i + 1, v, r] for i, (v, r) in
         enumerate(zip(full.explained_variance, full.explained_variance_ratio))])
    report.tables["diagnostic"] = (["n_components", "e_r", "verdict"],
                                   [[r["n_components"], r["e_r"], r["verdict"]] for r in table])
    report.tables["marginals"] = (["param", "value", "initial", "updated"],
                                  _marginal_rows(ensemble.params,
                                                 res.ratios * ensemble.sample_weights()))
    return report


# --- generic density and WME runs -------------------------------------------

def run_density(config: RunConfig, ensemble: Optional[SampleEnsemble] = None,
                observed: Optional[GaussianDensity] = None, reference=None) -> RunReport:
    """KDE update of an ensemble against a Gaussian observed density.

    ``config.options`` may give ``obs_mean`` and ``obs_std`` (scalars or
    lists); the default observed density is standard normal.
    """
    config = config.validate()
    if ensemble is None:
        ensemble = io.ingest_ensemble(config.inputs["ensemble"])
    m = ensemble.n_qoi
    if observed is None:
        mean = np.broadcast_to(np.asarray(config.options.get("obs_mean", 0.0), float), (m,))
        std = np.broadcast_to(np.asarray(config.options.get("obs_std", 1.0), float), (m,))
        observed = GaussianDensity(mean, np.diag(std**2))
    if reference is None and config.options.get("reference") is not None:
        reference = config.options["reference"]
    report = RunReport(config.kind, config.echo())
    with _Timer(report, "total"):
        pred = predicted_density(ensemble, config.bandwidth)
        res = update(ensemble, observed, pred)
        e_r, verdict = expectation_r(res, config.diag_band)
    report.estimates.append(_record("MUD", res.mud_point, reference, None, e_r, verdict))
    report.diagnostics = {"e_r": e_r, "verdict": verdict, "violations": res.violations,
                          "n_samples": ensemble.n_samples, "n_params": ensemble.n_params,
                          "n_qoi": m}
    report.summary = {"mud_index": res.mud_index}
    report.tables["marginals"] = (["param", "value", "initial", "updated"],
                                  _marginal_rows(ensemble.params,
                                                 res.ratios * ensemble.sample_weights()))
    return report


def load_operator(path):
    """Read ``{"M": rows, "initial_mean": ..., "initial_cov": ...}`` from JSON."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if "M" not in doc:
        raise io.IngestError(f"{path}: missing key 'M'")
    M = np.atleast_2d(np.asarray(doc["M"], dtype=float))
    p = M.shape[1]
    mean = np.asarray(doc.get("initial_mean", np.zeros(p)), dtype=float)
    cov = np.asarray(doc.get("initial_cov", np.eye(p)), dtype=float)
    ref = doc.get("reference")
    return LinearMeasurementSet(M), GaussianDensity(mean, cov), None if ref is None else np.asarray(ref)


def run_wme(config: RunConfig) -> RunReport:
    """WME map from measurement data, solved in closed form or by KDE.

    With an ``operator`` input (linear measurement rows) the WME map is
    affine and solved exactly.  With an ``ensemble`` input the ``q_*``
    columns hold each device's model output, in device order, and the WME
    QoI is formed per sample before a KDE update against ``N(0, I)``.
    """
    config = config.validate()
    data = io.load_measurements(config.inputs["data"])
    reference = config.options.get("reference")
    if "operator" in config.inputs:
        meas, initial, ref = load_operator(config.inputs["operator"])
        reference = ref if reference is None else reference
        affine = assemble_wme_affine(meas, data)
        problem = LinearGaussianProblem(affine, initial, GaussianDensity.standard(affine.n_outputs))
        report = run_linear_gaussian(config, problem=problem, reference=reference)
        report.kind = "wme"
        return report
    ensemble = io.ingest_ensemble(config.inputs["ensemble"])
    wme = ensemble.with_qoi(q_wme(data, ensemble.qoi))
    return run_density(config, ensemble=wme, observed=GaussianDensity.standard(data.n_devices),
                       reference=reference)
