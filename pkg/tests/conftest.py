import numpy as np
import pytest

from mud_est.linalg import AffineMap, GaussianDensity
from mud_est.linear import LinearGaussianProblem

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_spd(rng, n, floor=0.1):
    G = rng.standard_normal((n, n))
    return G @ G.T / n + floor * np.eye(n)


def random_problem(rng, p=None, m=None, margin=None, lam0=True):
    """Random full-row-rank affine Gaussian problem.

    ``margin="positive"`` rescales the observed covariance so that its
    largest eigenvalue is half the smallest predicted eigenvalue.
    """
    p = int(rng.integers(1, 51)) if p is None else p
    m = int(rng.integers(1, p + 1)) if m is None else m
    A = rng.standard_normal((m, p))
    b = rng.standard_normal(m)
    S = random_spd(rng, p)
    mean0 = rng.standard_normal(p) if lam0 else np.zeros(p)
    S_obs = random_spd(rng, m)
    if margin == "positive":
        pred_min = np.linalg.eigvalsh(A @ S @ A.T)[0]
        S_obs = S_obs * (0.5 * pred_min / np.linalg.eigvalsh(S_obs)[-1])
    mu = A @ rng.standard_normal(p) + b + 0.1 * rng.standard_normal(m)
    return LinearGaussianProblem(AffineMap(A, b), GaussianDensity(mean0, S),
                                 GaussianDensity(mu, S_obs))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def fixture_2d():
    return LinearGaussianProblem.from_arrays(
        A=[[1.0, 1.0]], b=[0.0],
        initial_mean=[0.25, 0.25], initial_cov=[[1.0, -0.25], [-0.25, 0.5]],
        observed_mean=[1.0], observed_cov=[[0.25]],
    )
