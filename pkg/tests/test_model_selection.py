import cvxpy as cp
import numpy as np
import pytest
from hypothesis import given, strategies as st

from smoothsvm.exceptions import InvalidArgumentError
from smoothsvm.model_selection import (
    DegenerateDataWarning,
    clip_delta_grid,
    cv_delta,
    cv_lambda,
    default_delta_grid,
    kfold_split,
    lambda_grid,
    matrix_score,
)
from smoothsvm.prox_lasso import OfflineObjective, fit_lasso, kkt_residual
from smoothsvm.simgen import ScenarioConfig, sample_scenario
from smoothsvm.smoothing import Dataset, empirical_hessian, empirical_loss

from conftest import random_dataset, split_oracle_solve


def test_kfold_even_sizes():
    plan = kfold_split(10, 5, seed=1)
    assert sorted(np.bincount(plan.assignments)) == [2] * 5


def test_kfold_uneven_sizes():
    plan = kfold_split(11, 5, seed=1)
    assert sorted(np.bincount(plan.assignments)) == [2, 2, 2, 2, 3]


def test_kfold_deterministic():
    a = kfold_split(37, 5, seed=4)
    b = kfold_split(37, 5, seed=4)
    assert np.array_equal(a.assignments, b.assignments)
    assert not np.array_equal(a.assignments, kfold_split(37, 5, seed=5).assignments)


@given(st.integers(2, 300), st.integers(2, 10), st.integers(0, 2**32 - 1))
def test_kfold_partition_properties(n, k, seed):
    if n < k:
        with pytest.raises(InvalidArgumentError):
            kfold_split(n, k, seed)
        return
    plan = kfold_split(n, k, seed)
    sizes = np.bincount(plan.assignments, minlength=k)
    assert sizes.max() - sizes.min() <= 1
    seen = np.concatenate([val for _, val in plan.splits()])
    assert np.array_equal(np.sort(seen), np.arange(n))
    for train, val in plan.splits():
        assert np.intersect1d(train, val).size == 0
        assert train.size + val.size == n


def test_kfold_guards():
    with pytest.raises(InvalidArgumentError):
        kfold_split(10, 1)
    with pytest.raises(InvalidArgumentError):
        kfold_split(3, 5)


def test_lambda_grid_construction(small_data):
    grid = lambda_grid(small_data, 0.3)
    assert grid.size == 20
    assert np.all(np.diff(grid) < 0)
    assert abs(grid[-1] / grid[0] - 0.01) <= 1e-12
    obj = OfflineObjective(small_data, 0.3)
    fit = fit_lasso(obj, grid[0])
    assert np.all(fit.beta[1:] == 0)
    assert kkt_residual(fit.beta, obj, grid[0]) <= 1e-8


def test_lambda_grid_size_guard(small_data):
    with pytest.raises(InvalidArgumentError):
        lambda_grid(small_data, 0.3, grid_size=1)


def test_lambda_grid_single_class_warns():
    rng = np.random.default_rng(0)
    data = Dataset(rng.standard_normal((10, 3)), np.ones(10))
    with pytest.warns(DegenerateDataWarning):
        grid = lambda_grid(data, 0.3)
    assert grid.size == 20 and np.all(grid > 0)


def test_cv_lambda_single_element(small_data):
    plan = kfold_split(small_data.n, 5, 0)
    assert cv_lambda(small_data, 0.3, plan, [0.07]) == 0.07


def test_cv_lambda_duplicate_values_take_first():
    # lambdas above lambda_max all give the intercept-only fit, so their scores tie
    rng = np.random.default_rng(1)
    data = random_dataset(rng, n=30, p=3)
    plan = kfold_split(30, 5, 0)
    grid = lambda_grid(data, 0.3)
    big = 50 * grid[0]
    lam, curve = cv_lambda(data, 0.3, plan, [big, big, big], return_curve=True)
    assert lam == big
    assert curve[0] == curve[1] == curve[2]


def test_cv_lambda_matches_independent_recomputation():
    data = sample_scenario(ScenarioConfig(case=1, cov_type="III", p=20, n=200, seed=11))
    h = 0.3
    plan = kfold_split(data.n, 5, seed=3)
    grid = lambda_grid(data, h, grid_size=8)
    lam, curve = cv_lambda(data, h, plan, grid, return_curve=True)

    ref = np.zeros(grid.size)
    for f in range(5):
        tr = plan.assignments != f
        train = Dataset(data.X[tr], data.y[tr])
        val = Dataset(data.X[~tr], data.y[~tr])
        obj = OfflineObjective(train, h)
        for i, g in enumerate(grid):
            beta, _ = split_oracle_solve(obj, g)
            ref[i] += empirical_loss(beta, val, h) / 5
    assert np.allclose(curve, ref, atol=1e-5)
    assert lam == grid[int(np.argmin(ref))]


def test_cv_lambda_scale_invariant(small_data):
    plan = kfold_split(small_data.n, 5, 0)
    grid = lambda_grid(small_data, 0.3, grid_size=6)
    a = cv_lambda(small_data, 0.3, plan, grid)
    b = cv_lambda(small_data, 0.3, plan, grid, score=lambda beta, d, h: 7.5 * empirical_loss(beta, d, h))
    assert a == b


def test_cv_lambda_trains_on_training_folds_only():
    rng = np.random.default_rng(2)
    data = random_dataset(rng, n=25, p=3)
    plan = kfold_split(25, 5, 0)
    seen = []

    def make_objective(train):
        seen.append(train.n)
        return OfflineObjective(train, 0.3)

    cv_lambda(data, 0.3, plan, lambda_grid(data, 0.3, 4), make_objective=make_objective)
    assert seen == [20] * 5


def test_cv_lambda_deterministic(small_data):
    plan = kfold_split(small_data.n, 5, 0)
    grid = lambda_grid(small_data, 0.3, grid_size=6)
    assert cv_lambda(small_data, 0.3, plan, grid) == cv_lambda(small_data, 0.3, plan, grid)


def test_cv_delta_identity_example(small_data):
    plan = kfold_split(small_data.n, 5, 0)
    beta = np.zeros(small_data.p + 1)
    eye = np.eye(small_data.p + 1)
    d, scores = cv_delta(
        small_data, 0.3, beta, plan, [0.0, 0.5], fold_hessian=lambda s: eye, return_curve=True
    )
    assert d == 0.0
    assert np.allclose(scores, [0.0, 0.5])


def test_cv_delta_single_element(small_data):
    plan = kfold_split(small_data.n, 5, 0)
    assert cv_delta(small_data, 0.3, np.zeros(6), plan, [0.2]) == 0.2


def test_cv_delta_ties_go_to_larger():
    data = random_dataset(np.random.default_rng(3), n=20, p=2)
    plan = kfold_split(20, 5, 0)
    eye = np.eye(3)
    # both levels leave H Theta - I at its largest entry 1 for the same reason
    zero = np.zeros((3, 3))
    d = cv_delta(data, 0.3, np.zeros(3), plan, [1.0, 2.0], fold_hessian=lambda s: eye if s.n == 16 else zero)
    assert d == 2.0


def test_cv_delta_matches_independent_recomputation():
    data = sample_scenario(ScenarioConfig(case=1, cov_type="III", p=6, n=120, seed=5))
    h = 0.4
    beta = fit_lasso(OfflineObjective(data, h), 0.02).beta
    plan = kfold_split(data.n, 2, seed=9)
    grid = [0.0, 0.02, 0.05, 0.1, 0.2]
    d, scores = cv_delta(data, h, beta, plan, grid, return_curve=True)

    # independent recomputation with an interior-point LP per column
    def clime_ref(H, delta):
        m = H.shape[0]
        cols = []
        for j in range(m):
            t = cp.Variable(m)
            cons = [cp.norm_inf(H @ t - np.eye(m)[j]) <= delta]
            cp.Problem(cp.Minimize(cp.norm1(t)), cons).solve(solver=cp.CLARABEL)
            cols.append(t.value)
        return np.column_stack(cols)

    ref = np.zeros(len(grid))
    for f in range(2):
        tr = plan.assignments != f
        Ht = empirical_hessian(beta, Dataset(data.X[tr], data.y[tr]), h)
        Hv = empirical_hessian(beta, Dataset(data.X[~tr], data.y[~tr]), h)
        for i, delta in enumerate(grid):
            ref[i] += np.abs(Hv @ clime_ref(Ht, delta) - np.eye(7)).max() / 2
    assert np.allclose(scores, ref, atol=1e-5)
    assert d == grid[int(np.argmin(ref))]


def test_clip_raises_grid_to_feasible_floor():
    v = np.array([1.0, 0.0])
    grid, floor = clip_delta_grid([0.0, 0.5, 2.0], [np.outer(v, v)])
    assert floor == pytest.approx(1.0, abs=1e-8)
    assert np.allclose(grid, [floor, floor, 2.0])
    grid, floor = clip_delta_grid([0.0, 0.5], [np.eye(2)])
    assert floor == 0.0 and np.array_equal(grid, [0.0, 0.5])


def test_cv_delta_guards(small_data):
    plan = kfold_split(small_data.n, 5, 0)
    with pytest.raises(InvalidArgumentError):
        cv_delta(small_data, 0.3, np.zeros(6), plan, [])
    with pytest.raises(InvalidArgumentError):
        cv_delta(small_data, 0.3, np.zeros(6), plan, [-0.1, 0.2])


def test_matrix_score():
    assert matrix_score(np.eye(3), 0.5 * np.eye(3)) == 0.5
    assert matrix_score(2 * np.eye(2), 0.5 * np.eye(2)) == 0.0


def test_default_delta_grid():
    grid = default_delta_grid(400, 60)
    scale = np.sqrt(np.log(61) / 400)
    assert np.allclose(grid, scale * np.array([0.0, 0.125, 0.25, 0.5]))
