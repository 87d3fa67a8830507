import numpy as np
import pytest
from hypothesis import settings
from scipy.optimize import minimize

from smoothsvm.smoothing import Dataset

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


def random_dataset(rng, n=20, p=5, shift=0.3):
    y = rng.choice([-1.0, 1.0], size=n)
    X = rng.standard_normal((n, p)) + shift * y[:, None]
    return Dataset(X, y)


def split_oracle_solve(obj, lam):
    """Reference solution: L-BFGS-B on ``beta = (b0, u - v)`` with ``u, v >= 0``."""
    p = obj.dim - 1

    def unpack(z):
        return np.concatenate([[z[0]], z[1 : p + 1] - z[p + 1 :]])

    def fun(z):
        f, g = obj.value_and_grad(unpack(z))
        grad = np.concatenate([[g[0]], g[1:] + lam, -g[1:] + lam])
        return f + lam * float(z[1:].sum()), grad

    bounds = [(None, None)] + [(0, None)] * (2 * p)
    res = minimize(
        fun, np.zeros(2 * p + 1), jac=True, method="L-BFGS-B", bounds=bounds,
        options={"ftol": 1e-15, "gtol": 1e-12, "maxiter": 20000, "maxcor": 30},
    )
    return unpack(res.x), float(res.fun)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_data(rng):
    return random_dataset(rng)


# one line per acceptance criterion, printed after the run
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
