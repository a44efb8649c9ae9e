"""Small hand-checkable cases for each public building block."""

import warnings

import numpy as np
import pytest
from scipy import stats

from mud_est.density import SampleEnsemble, fit_kde, select_pca_components, update
from mud_est.experiments import make_pca_surrogate
from mud_est.linalg import AffineMap, GaussianDensity, pseudo_inverse, spd_solve, svd
from mud_est.linear import (
    LinearGaussianProblem,
    check_predictability,
    effective_regularization,
    least_squares,
    map_point,
    mud_point,
    mud_point_alt,
    objective_T,
    predicted_covariance,
    updated_covariance,
)
from mud_est.qoi import (
    LinearMeasurementSet,
    MeasurementData,
    PcaMap,
    assemble_wme_affine,
    fit_pca,
    min_data_for_predictability,
    q_me,
    q_pca,
    q_wme,
    wme_predicted_variance,
    zscore_residuals,
)


def _problem(A, b=None, lam0=None, S=None, mu=None, So=None):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    m, p = A.shape
    return LinearGaussianProblem.from_arrays(
        A=A, b=np.zeros(m) if b is None else b,
        initial_mean=np.zeros(p) if lam0 is None else lam0,
        initial_cov=np.eye(p) if S is None else S,
        observed_mean=np.zeros(m) if mu is None else mu,
        observed_cov=np.eye(m) if So is None else So)


# --- dense linear algebra -------------------------------------------------

def test_spd_solve_identity():
    np.testing.assert_allclose(spd_solve(np.eye(3), [1.0, 2.0, 3.0]), [1.0, 2.0, 3.0])


def test_spd_solve_diagonal():
    np.testing.assert_allclose(spd_solve(np.diag([4.0, 9.0]), [8.0, 27.0]), [2.0, 3.0])


def test_pseudo_inverse_rank_deficient_diagonal():
    np.testing.assert_allclose(pseudo_inverse(np.diag([2.0, 0.0]), rank_tol=1e-12),
                               np.diag([0.5, 0.0]))


def test_svd_diagonal_and_zero():
    _, s, _ = svd(np.diag([3.0, 1.0]))
    np.testing.assert_allclose(s, [3.0, 1.0])
    _, s, _ = svd(np.zeros((3, 2)))
    np.testing.assert_array_equal(s, 0.0)


def test_svd_reconstruction(rng):
    M = rng.standard_normal((4, 6))
    U, s, Vt = svd(M)
    R = (U[:, : s.size] * s) @ Vt[: s.size]
    assert np.linalg.norm(R - M) <= 1e-10 * np.linalg.norm(M)


# --- linear-Gaussian solvers ----------------------------------------------

def test_predicted_covariance_identity():
    np.testing.assert_allclose(predicted_covariance(_problem(np.eye(3))), np.eye(3))


def test_predicted_covariance_triple_loop(rng):
    A = rng.standard_normal((3, 7))
    G = rng.standard_normal((7, 7))
    S = G @ G.T + np.eye(7)
    expected = np.zeros((3, 3))
    for i in range(3):
        for j in range(3):
            for k in range(7):
                for l in range(7):
                    expected[i, j] += A[i, k] * S[k, l] * A[j, l]
    np.testing.assert_allclose(predicted_covariance(_problem(A, S=S)), expected,
                               rtol=1e-12, atol=1e-12)


def test_check_predictability_margins():
    ok, margin = check_predictability(_problem(2.0 * np.eye(2)))
    assert ok and margin == pytest.approx(3.0)
    ok, margin = check_predictability(_problem(np.sqrt(0.5) * np.eye(2)))
    assert not ok and margin == pytest.approx(-0.5)


def test_wme_problem_with_enough_data_is_predictable(rng):
    M = rng.standard_normal((3, 5))
    sigmas = np.array([0.5, 1.0, 2.0])
    counts = min_data_for_predictability(LinearMeasurementSet(M), np.eye(5), sigmas)
    data = MeasurementData(tuple(rng.standard_normal(n) for n in counts), sigmas)
    affine = assemble_wme_affine(LinearMeasurementSet(M), data)
    prob = _problem(affine.matrix, b=affine.bias)
    assert check_predictability(prob)[0]


def test_mud_square_invertible(rng):
    A = rng.standard_normal((4, 4)) + 4 * np.eye(4)
    b, mu = rng.standard_normal(4), rng.standard_normal(4)
    prob = _problem(A, b=b, mu=mu, S=100 * np.eye(4))
    np.testing.assert_allclose(mud_point(prob).estimate, np.linalg.solve(A, mu - b),
                               rtol=1e-9, atol=1e-9)


def test_mud_zero_residual_returns_initial_mean(rng):
    A = rng.standard_normal((2, 5))
    b, lam0 = rng.standard_normal(2), rng.standard_normal(5)
    prob = _problem(A, b=b, lam0=lam0, mu=A @ lam0 + b, So=1e-3 * np.eye(2))
    np.testing.assert_allclose(mud_point(prob).estimate, lam0, atol=1e-12)


def test_mud_alt_identity_map_agrees():
    prob = _problem(np.eye(3), mu=[0.3, -1.0, 2.0], So=0.04 * np.eye(3))
    np.testing.assert_allclose(mud_point_alt(prob).estimate, mud_point(prob).estimate,
                               atol=1e-12)


def test_updated_covariance_equals_initial_when_observed_matches_predicted(rng):
    A = rng.standard_normal((2, 4))
    G = rng.standard_normal((4, 4))
    S = G @ G.T + np.eye(4)
    prob = _problem(A, S=S, So=A @ S @ A.T)
    np.testing.assert_allclose(updated_covariance(prob), S, rtol=1e-9, atol=1e-9)


def test_updated_covariance_identity_map():
    prob = _problem(np.eye(3), So=0.01 * np.eye(3))
    np.testing.assert_allclose(updated_covariance(prob), 0.01 * np.eye(3), atol=1e-12)


def test_regularization_single_row():
    prob = _problem([[1.0, 0.0]], So=[[0.5]])
    np.testing.assert_allclose(effective_regularization(prob), np.diag([0.0, 1.0]), atol=1e-12)


def test_regularization_null_space_dimension(rng):
    A = rng.standard_normal((3, 8))
    prob = _problem(A, So=1e-3 * np.eye(3))
    eig = np.linalg.eigvalsh(effective_regularization(prob))
    assert np.sum(np.abs(eig) <= 1e-10) == 3


def test_objective_t_scalar():
    prob = _problem([[1.0]], mu=[1.0])
    assert float(np.ravel(objective_T(prob, [1.0]))[0]) == pytest.approx(1.0)


def test_map_scalar():
    prob = _problem([[1.0]], mu=[1.0])
    assert map_point(prob).estimate[0] == pytest.approx(0.5)


def test_map_approaches_mud_as_data_sharpen(rng):
    A = rng.standard_normal((2, 4))
    mu = rng.standard_normal(2)
    prob = _problem(A, mu=mu, So=1e-6 * np.eye(2))
    np.testing.assert_allclose(map_point(prob).estimate, mud_point(prob).estimate, atol=1e-3)


def test_least_squares_at_bias_is_zero(rng):
    b = rng.standard_normal(3)
    lam = least_squares(AffineMap(rng.standard_normal((3, 6)), b), b)
    np.testing.assert_allclose(lam, 0.0, atol=1e-14)


def test_least_squares_min_norm_against_normal_equations(rng):
    A = rng.standard_normal((5, 9))
    b, mu = rng.standard_normal(5), rng.standard_normal(5)
    lam = least_squares(AffineMap(A, b), mu)
    np.testing.assert_allclose(lam, A.T @ np.linalg.solve(A @ A.T, mu - b), atol=1e-9)


# --- QoI maps --------------------------------------------------------------

def test_q_me_symmetric_residuals():
    np.testing.assert_allclose(q_me(MeasurementData(([1.0, 2.0, 3.0],), [1.0]), [2.0]), [0.0])


def test_q_me_mean_residual():
    data = MeasurementData(([1.0, 2.0, 3.0, 4.0],), [1.0])
    np.testing.assert_allclose(q_me(data, [3.0]), [0.5])


def test_q_wme_hand_value():
    data = MeasurementData(([1.0, 2.0, 3.0, 4.0],), [1.0])
    np.testing.assert_allclose(q_wme(data, [3.0]), [1.0])


def test_q_wme_is_standard_normal_at_truth():
    rng = np.random.default_rng(3)
    sigma, n, reps, truth = 0.1, 50, 10_000, 0.7
    vals = np.array([q_wme(MeasurementData((truth + sigma * rng.standard_normal(n),), [sigma]),
                           [truth])[0] for _ in range(reps)])
    assert abs(vals.mean()) <= 3 / np.sqrt(reps)
    assert abs(vals.var(ddof=1) - 1.0) <= 0.05


def test_assemble_wme_single_datum():
    affine = assemble_wme_affine(LinearMeasurementSet([[1.0, 0.0]]),
                                 MeasurementData(([0.5],), [1.0]))
    np.testing.assert_allclose(affine.matrix, [[1.0, 0.0]])
    np.testing.assert_allclose(affine.bias, [-0.5])


def test_wme_predicted_variance_grows_linearly():
    assert wme_predicted_variance([1.0], [[1.0]], 1, 1.0) == pytest.approx(1.0)
    assert wme_predicted_variance([1.0], [[1.0]], 100, 1.0) == pytest.approx(100.0)


def test_wme_variance_inverse_square_in_noise():
    base = wme_predicted_variance([1.0], [[1.0]], 3, 1.0)
    assert wme_predicted_variance([1.0], [[1.0]], 300, 10.0) == pytest.approx(base)


def test_min_data_strict_inequality():
    np.testing.assert_array_equal(
        min_data_for_predictability(LinearMeasurementSet([[1.0]]), [[1.0]], [1.0]), [2])
    # variance N / sigma^2 must exceed 1, so sigma = 10 needs N = 101
    np.testing.assert_array_equal(
        min_data_for_predictability(LinearMeasurementSet([[1.0]]), [[1.0]], [10.0]), [101])


def test_zscore_residual_row():
    data = MeasurementData(([1.0], [1.0]), [1.0, 2.0])
    np.testing.assert_allclose(zscore_residuals([[2.0, 3.0]], data), [[1.0, 1.0]])


def test_fit_pca_rank_one():
    v = np.array([1.0, -2.0, 2.0])
    X = np.outer([1.0, -3.0, 0.5, 2.0, -0.5], v)
    pca = fit_pca(X)
    assert pca.n_components == 1
    assert pca.explained_variance_ratio[0] == pytest.approx(1.0)
    assert abs(pca.components[0] @ v) / np.linalg.norm(v) == pytest.approx(1.0)


def test_fit_pca_axis_aligned():
    X = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 2.0], [0.0, -2.0]])
    pca = fit_pca(X, variance_threshold=1.0)
    np.testing.assert_allclose(pca.components, [[0.0, 1.0], [1.0, 0.0]], atol=1e-12)
    assert pca.explained_variance[0] / pca.explained_variance[1] == pytest.approx(4.0)


def test_fit_pca_full_threshold_keeps_rank(rng):
    X = rng.standard_normal((30, 3)) @ rng.standard_normal((3, 6))
    assert fit_pca(X, variance_threshold=1.0).n_components == 3


def test_q_pca_basis_projection():
    pca = PcaMap(np.eye(2), np.array([1.0, 1.0]), np.array([0.5, 0.5]), 1)
    np.testing.assert_allclose(q_pca(pca, [[3.0, 7.0]]), [[3.0]])


# --- densities and the update ------------------------------------------------

def test_kde_recovers_standard_normal():
    x = np.random.default_rng(11).standard_normal((100_000, 1))
    grid = np.linspace(-3, 3, 121)[:, None]
    dev = np.abs(fit_kde(x).pdf(grid) - stats.norm.pdf(grid[:, 0]))
    assert dev.max() <= 0.02


def test_kde_tiny_cluster_is_unimodal(rng):
    x0 = 0.3
    kde = fit_kde(x0 + 1e-4 * rng.standard_normal((200, 1)))
    offsets = np.linspace(0.0, 1e-3, 20)
    vals = kde.pdf((x0 + offsets)[:, None])
    assert np.all(np.diff(vals) < 0)
    vals = kde.pdf((x0 - offsets)[:, None])
    assert np.all(np.diff(vals) < 0)


def test_constant_map_uses_floor_bandwidth():
    with pytest.warns(RuntimeWarning, match="degenerate"):
        kde = fit_kde(np.full((50, 1), 2.5))
    assert 0 < kde.bandwidth.ravel()[0] < 1e-6


def test_concentrated_weights_peak_at_that_sample(rng):
    x = rng.standard_normal((50, 1))
    w = np.zeros(50)
    w[7] = 1.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        kde = fit_kde(x, weights=w)
    vals = kde.pdf(x)
    assert np.isfinite(vals).all()
    assert np.argmax(vals) == 7


def test_sample_argmax_matches_closed_form_in_one_dimension():
    prob = _problem([[2.0]], mu=[1.0], So=[[0.25]])
    exact = mud_point(prob).estimate[0]
    lam = np.linspace(-3.0, 3.0, 601)
    spacing = lam[1] - lam[0]
    ens = SampleEnsemble(lam, 2.0 * lam, GaussianDensity([0.0], [[1.0]]))
    result = update(ens, GaussianDensity([1.0], [[0.25]]), GaussianDensity([0.0], [[4.0]]))
    assert abs(result.mud_point[0] - exact) <= spacing


def test_select_single_candidate():
    ens, data, _ = make_pca_surrogate(0, n_samples=300)
    chosen, table = select_pca_components(ens, data, [1])
    assert chosen == 1
    assert len(table) == 1 and np.isfinite(table[0]["e_r"])
