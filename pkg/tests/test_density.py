import numpy as np
import pytest

from mud_est.density import (THREADS_ENV, SampleEnsemble, UniformDensity, expectation_r,
                             fit_kde, n_threads, predicted_density, refine_mud,
                             select_pca_components, update)
from mud_est.experiments import make_pca_surrogate
from mud_est.linalg import GaussianDensity
from mud_est.linear import PredictabilityError


def brute_force_kde(points, h, weights, x):
    """Weighted sum of product-Gaussian kernels, one point at a time."""
    out = np.zeros(len(x))
    for a, xa in enumerate(x):
        total = 0.0
        for pt, w in zip(points, weights):
            k = 1.0
            for d in range(points.shape[1]):
                z = (xa[d] - pt[d]) / h[d]
                k *= np.exp(-0.5 * z * z) / (np.sqrt(2 * np.pi) * h[d])
            total += w * k
        out[a] = total
    return out


@pytest.mark.parametrize("k", [1, 2, 3])
def test_kde_matches_brute_force(rng, k):
    pts = rng.standard_normal((150, k)) * np.arange(1, k + 1)
    w = rng.uniform(0.5, 2.0, 150)
    kde = fit_kde(pts, weights=w)
    x = rng.standard_normal((300, k))
    ref = brute_force_kde(pts, np.sqrt(np.diag(kde.bandwidth)), w / w.sum(), x)
    np.testing.assert_allclose(kde.pdf(x), ref, rtol=1e-12)


def test_bandwidth_rules(rng):
    pts = rng.standard_normal((400, 2))
    std = pts.std(axis=0, ddof=1)
    scott = np.sqrt(np.diag(fit_kde(pts, "scott").bandwidth))
    silver = np.sqrt(np.diag(fit_kde(pts, "silverman").bandwidth))
    np.testing.assert_allclose(scott, 400 ** (-1 / 6) * std, rtol=1e-12)
    np.testing.assert_allclose(silver, (400 * 4 / 4) ** (-1 / 6) * std, rtol=1e-12)
    np.testing.assert_allclose(np.sqrt(np.diag(fit_kde(pts, 0.3).bandwidth)), 0.3 * std,
                               rtol=1e-12)
    with pytest.raises(ValueError):
        fit_kde(pts, "wide")


def test_kde_weight_equals_duplication(rng):
    pts = rng.standard_normal((20, 1))
    dup = np.vstack([pts, pts[:5]])
    w = np.ones(20)
    w[:5] = 2.0
    x = np.linspace(-3, 3, 50)[:, None]
    a = fit_kde(dup, 0.4).pdf(x)
    b = fit_kde(pts, 0.4, weights=w)
    b = type(b)(b.points, fit_kde(dup, 0.4).bandwidth, b.weights, b.rule).pdf(x)
    np.testing.assert_allclose(a, b, rtol=1e-12)


def test_kde_integrates_to_one(rng):
    kde = fit_kde(rng.standard_normal(300))
    x = np.linspace(-8, 8, 4001)
    assert np.trapezoid(kde.pdf(x[:, None]), x) == pytest.approx(1.0, abs=1e-6)


def test_kde_thread_count_does_not_change_results(rng, monkeypatch):
    pts = rng.standard_normal((500, 2))
    x = rng.standard_normal((1000, 2))
    monkeypatch.setenv(THREADS_ENV, "1")
    assert n_threads() == 1
    one = fit_kde(pts).pdf(x)
    monkeypatch.setenv(THREADS_ENV, "4")
    four = fit_kde(pts).pdf(x)
    assert np.array_equal(one, four)


def test_n_threads_ignores_garbage(monkeypatch):
    monkeypatch.setenv(THREADS_ENV, "many")
    assert n_threads() >= 1


def test_kde_floor_bandwidth_for_constant_dimension(rng):
    pts = np.column_stack([rng.standard_normal(50), np.full(50, 2.0)])
    with pytest.warns(RuntimeWarning, match="floor"):
        kde = fit_kde(pts)
    assert np.all(np.isfinite(kde.pdf(pts)))


def test_kde_rejects_bad_input():
    with pytest.raises(ValueError):
        fit_kde(np.ones((1, 2)))
    with pytest.raises(ValueError):
        fit_kde(np.array([0.0, np.inf]))


def test_kde_moments(rng):
    kde = fit_kde(rng.standard_normal((100, 2)))
    np.testing.assert_allclose(kde.mean(), kde.points.mean(axis=0))
    assert np.all(np.diag(kde.covariance()) > np.diag(kde.bandwidth))


def test_uniform_density(rng):
    u = UniformDensity([0.0, -1.0], [2.0, 1.0])
    assert u.pdf([[1.0, 0.0], [3.0, 0.0]]).tolist() == [0.25, 0.0]
    s = u.sample(100, rng)
    assert s.shape == (100, 2) and np.all(u.pdf(s) == 0.25)
    with pytest.raises(ValueError):
        UniformDensity([1.0], [0.0])


def test_sample_ensemble_validation(rng):
    with pytest.raises(ValueError):
        SampleEnsemble(np.zeros((3, 2)), np.zeros((4, 1)))
    with pytest.raises(ValueError):
        SampleEnsemble(np.zeros((3, 2)), np.zeros(3), weights=[1.0, -1.0, 1.0])
    ens = SampleEnsemble(np.zeros(3), np.zeros(3))
    assert (ens.n_samples, ens.n_params, ens.n_qoi) == (3, 1, 1)


def test_identity_update_has_unit_ratio(rng):
    lam = rng.uniform(-1, 1, (200, 1))
    ens = SampleEnsemble(lam, lam**3)
    pred = predicted_density(ens)
    res = update(ens, pred, pred)
    assert res.e_r == 1.0
    assert np.all(res.ratios == 1.0)
    assert expectation_r(res) == (1.0, "OK")


def test_zero_predicted_density_counts_violations():
    ens = SampleEnsemble(np.array([0.1, 0.5, 2.0]), np.array([0.1, 0.5, 2.0]))
    pred = UniformDensity([0.0], [1.0])
    res = update(ens, GaussianDensity([0.5], [[1.0]]), pred)
    assert res.violations == 1 and res.ratios[2] == 0.0
    with pytest.raises(PredictabilityError):
        update(SampleEnsemble([5.0, 6.0], [5.0, 6.0]), GaussianDensity([0.5], [[1.0]]), pred)


def test_verdict_band():
    class R:
        e_r = 0.5
    assert expectation_r(R())[1] == "SUSPECT"
    assert expectation_r(R(), band=(0.4, 0.6))[1] == "OK"


def test_update_uses_initial_density(rng):
    lam = rng.uniform(-1, 1, (300, 1))
    init = UniformDensity([-1.0], [1.0])
    ens = SampleEnsemble(lam, lam**5, init)
    res = update(ens, GaussianDensity([0.25], [[0.01]]), predicted_density(ens))
    np.testing.assert_allclose(res.initial, 0.5)
    np.testing.assert_allclose(res.updated, 0.5 * res.ratios)


def test_refine_mud_does_not_decrease_updated_density(rng):
    lam = rng.uniform(-1, 1, (500, 1))
    ens = SampleEnsemble(lam, lam**5, UniformDensity([-1.0], [1.0]))
    obs = GaussianDensity([0.25], [[0.01]])
    pred = predicted_density(ens)
    res = update(ens, obs, pred)
    better = refine_mud(res, ens, lambda x: x**5, obs, pred)
    val = 0.5 * obs.pdf(better**5) / pred.pdf(better**5)
    assert float(val[0]) >= res.updated[res.mud_index] - 1e-15


def test_predicted_density_warns_in_high_dimension(rng):
    ens = SampleEnsemble(rng.standard_normal((50, 1)), rng.standard_normal((50, 6)))
    with pytest.warns(RuntimeWarning):
        predicted_density(ens)


def test_select_pca_components_both_observable():
    ens, data, _ = make_pca_surrogate(seed=1, observable="both")
    chosen, table = select_pca_components(ens, data, [1, 2])
    assert chosen == 2
    assert [row["verdict"] for row in table] == ["OK", "OK"]


def test_select_pca_components_falls_back_to_closest():
    ens, data, _ = make_pca_surrogate(seed=1, observable="first")
    chosen, table = select_pca_components(ens, data, [2])
    assert chosen == 2 and table[0]["verdict"] == "SUSPECT"
    with pytest.raises(ValueError):
        select_pca_components(ens, data, [])
