import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cilo.errors import EmptyGrid
from cilo.geometry import Polyhedron, lp_minimize_batch
from cilo.losses import beta_bounds, cilo_loss, regret, slo_loss, spo_plus_loss, target_loss
from cilo.model import Dataset, FeatureMap, LinearHypothesis
from cilo.optimize import (
    GDConfig,
    beta_grid_values,
    gd_backtracking,
    train_cilo,
    train_slo,
    train_spo_plus,
)
from cilo.smoothing import SmoothedCilo, landscape_scale

from helpers import random_instance


def test_quadratic_converges():
    a = np.array([3.0, -1.0, 2.0])
    run = gd_backtracking(lambda x: (0.5 * (x - a) @ (x - a), x - a), np.zeros(3), GDConfig(max_iters=200, grad_tol=1e-8))
    assert run.grad_norm <= 1e-8
    np.testing.assert_allclose(run.x, a, atol=1e-8)


def test_zero_gradient_returns_immediately():
    run = gd_backtracking(lambda x: (1.0, np.zeros_like(x)), np.ones(2), GDConfig())
    assert run.iterations == 0 and len(run.trace) == 1


def test_config_validation():
    with pytest.raises(ValueError):
        GDConfig(backtrack_factor=1.5)
    with pytest.raises(ValueError):
        GDConfig(sufficient_decrease=0.6)


@given(seed=st.integers(0, 10_000))
def test_accepted_steps_are_monotone(seed):
    rng, W, data = random_instance(seed)
    b = beta_bounds(data, W)
    sm = SmoothedCilo(data, W, rng.uniform(b.beta_min, b.beta_max))
    run = gd_backtracking(sm.s_cilo, rng.standard_normal(data.m), GDConfig(max_iters=30))
    vals = [v for _, v, _ in run.trace]
    assert np.all(np.diff(vals) <= 0)


def test_ex1_s_cilo_run_satisfies_landscape_bound(ex1):
    sm = SmoothedCilo(ex1.data, ex1.W, 1.0, tol=1e-12)
    run = gd_backtracking(sm.s_cilo, np.zeros(3), GDConfig(max_iters=500, grad_tol=1e-6))
    pair = sm.prox_pair(run.x)
    scale = landscape_scale(ex1.data, ex1.W)
    assert cilo_loss(pair.theta_budget, 1.0, ex1.data, ex1.W).value <= 8 * scale * run.grad_norm + 1e-9


def test_train_cilo_ex1(ex1):
    res = train_cilo(ex1.data, ex1.data, ex1.W, [1.0], GDConfig(max_iters=200))
    assert regret(res.theta, ex1.data, ex1.W) <= 1e-3
    assert res.beta_used == 1.0


def test_train_cilo_inactive_budget(ex1):
    res = train_cilo(ex1.data, ex1.data, ex1.W, [2.0], GDConfig(max_iters=50))
    best = min(c.val_loss for c in res.candidates)
    assert target_loss(res.theta, ex1.data, ex1.W).value == best


@settings(max_examples=10)
@given(seed=st.integers(0, 10_000))
def test_train_cilo_consistent_and_selects_best(seed):
    rng, W, data = random_instance(seed, n_range=(2, 5))
    b = beta_bounds(data, W)
    res = train_cilo(data, data, W, (b.beta_min, b.beta_max, 8), GDConfig(max_iters=100))
    ok = [c for c in res.candidates if c.theta is not None]
    assert len(res.candidates) == 8
    loss = target_loss(res.theta, data, W).value
    assert all(loss <= c.val_loss + 1e-12 for c in ok)
    # zero surrogate at the chosen budget certifies the budget, given unique decisions
    unique = lp_minimize_batch(data.predict_all(res.theta), W).is_unique.all()
    if unique and cilo_loss(res.theta, res.beta_used, data, W).value <= 1e-8:
        assert loss <= res.beta_used + 1e-6


def test_empty_grid_and_clamp(ex1):
    with pytest.raises(EmptyGrid):
        beta_grid_values([])
    with pytest.raises(EmptyGrid):
        beta_grid_values((0.0, 1.0, 0))
    np.testing.assert_allclose(beta_grid_values((0.0, 2.0, 3), ex1.data, ex1.W), [1.0, 1.5, 2.0])
    np.testing.assert_allclose(beta_grid_values([0.5, 1.5], ex1.data, ex1.W), [1.0, 1.5])


def test_warm_start_runs(ex1):
    res = train_cilo(ex1.data, ex1.data, ex1.W, (1.0, 2.0, 3), GDConfig(max_iters=50), warm_start=True)
    assert len(res.candidates) == 3


def test_spo_plus_ex1(ex1):
    res = train_spo_plus(ex1.data, ex1.W, GDConfig(max_iters=500))
    assert spo_plus_loss(res.theta, ex1.data, ex1.W).value <= 1.1


def test_spo_plus_zero_costs():
    data = Dataset(np.ones((3, 1)), np.zeros((3, 2)), LinearHypothesis(2, FeatureMap(1)))
    W = Polyhedron.simplex(2)
    res = train_spo_plus(data, W, GDConfig(max_iters=20))
    np.testing.assert_array_equal(res.theta, 0)
    assert all(v == 0 for _, v, _ in res.trace)


def test_spo_plus_well_specified():
    rng = np.random.default_rng(0)
    hyp = LinearHypothesis(3, FeatureMap(1))
    theta_star = rng.standard_normal(3)
    X = rng.uniform(0.5, 2.0, (200, 1))
    data = Dataset(X, X * theta_star, hyp)
    W = Polyhedron.simplex(3)
    res = train_spo_plus(data, W, GDConfig(max_iters=300))
    assert regret(res.theta, data, W) <= 1e-2


def test_slo_ex1_and_duplicates(ex1):
    res = train_slo(ex1.data)
    np.testing.assert_allclose(res.theta, [1, 2, 2], atol=1e-6)
    assert slo_loss(res.theta, ex1.data).value <= 1e-12
    _, _, data = random_instance(2, n_range=(4, 5))
    dup = Dataset(np.vstack([data.X, data.X]), np.vstack([data.C, data.C]), data.hypothesis)
    np.testing.assert_allclose(train_slo(dup).theta, train_slo(data).theta, atol=1e-8)


def test_slo_truncated_matches_grid():
    rng = np.random.default_rng(5)
    hyp = LinearHypothesis(1, FeatureMap(2, removed=1))  # m = 2, x1*x2 dropped
    X = rng.uniform(0.1, 2.0, (6, 2))
    C = (X[:, 0] * X[:, 1])[:, None] + X[:, :1]
    data = Dataset(X, C, hyp)
    theta = train_slo(data).theta
    best = slo_loss(theta, data).value
    assert best > 0
    grid = np.linspace(-3, 3, 121)
    brute = min(slo_loss(np.array([a, b]), data).value for a in grid for b in grid)
    assert best <= brute + 1e-9
    assert brute - best <= 0.05 * (1 + best)
