import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from instances import grid_instance, oracle_grid
from sklearn.base import clone

from explore_sched import (
    ExplorationPlanner,
    InputError,
    NumericalError,
    ObjectiveConfig,
    SolverConfig,
    make_prior,
    objective_value,
    project,
    sgd_solve,
)
from explore_sched import optimizer as optimizer_module


class TestProject:
    def test_clamps(self):
        assert project([-0.2, 1.3]).tolist() == [0.0, 1.0]

    def test_lower_bound(self):
        assert project([0.02, 0.5], 0.05, 1.0).tolist() == [0.05, 0.5]

    @settings(max_examples=100)
    @given(arrays(np.float64, st.integers(1, 8), elements=st.floats(-3, 3)), st.floats(0, 0.5), st.floats(0.5, 1))
    def test_idempotent_and_feasible(self, v, lo, hi):
        p = project(v, lo, hi)
        assert np.all((p >= lo) & (p <= hi))
        assert np.array_equal(project(p, lo, hi), p)


class TestSolverConfig:
    @pytest.mark.parametrize(
        "kw", [dict(eps_min=-0.1), dict(eps_max=1.5), dict(eps_min=0.6, eps_max=0.4), dict(n_steps=0),
               dict(step_size=-1), dict(momentum=1.0), dict(gap_floor=-1)]
    )
    def test_rejects(self, kw):
        with pytest.raises(InputError):
            SolverConfig(**kw)


class TestSolve:
    def test_single_period_goes_to_lower_bound(self):
        rng = np.random.default_rng(0)
        cfg = ObjectiveConfig.from_users(rng.standard_normal((20, 3)) / 2, [300.0], 3)
        post = make_prior(3, 3, rng.standard_normal((3, 3)) * 0.5, 1.0, diagonal=True)
        res = sgd_solve(post, cfg, SolverConfig(seed=1))
        assert res.schedule.rates[0] == pytest.approx(0.0, abs=1e-12)

    def test_zero_step_returns_init(self):
        post, cfg = grid_instance()
        res = sgd_solve(post, cfg, SolverConfig(step_size=0.0, init=0.3, seed=0))
        assert res.schedule.rates.tolist() == [0.3, 0.0]
        res = sgd_solve(post, cfg, SolverConfig(step_size=0.0, pin_terminal=False, seed=0), init=[0.1, 0.9])
        assert res.schedule.rates.tolist() == [0.1, 0.9]

    def test_gradient_alone_drives_terminal_rate_down(self):
        post, cfg = grid_instance()
        res = sgd_solve(post, cfg, SolverConfig(pin_terminal=False, seed=3))
        assert res.schedule.rates[-1] <= 0.01

    def test_flat_single_period_pinned(self):
        cfg = ObjectiveConfig.from_users(np.eye(2), [100.0], 2)
        res = sgd_solve(make_prior(2, 2, diagonal=True), cfg, SolverConfig(eps_min=0.05, seed=0))
        assert res.schedule.rates.tolist() == [0.05]

    def test_seed_determinism(self):
        post, cfg = grid_instance()
        solver = SolverConfig(n_steps=80, seed=5, record_trace=True)
        a, b = sgd_solve(post, cfg, solver), sgd_solve(post, cfg, solver)
        assert np.array_equal(a.schedule.rates, b.schedule.rates)
        assert a.objective == b.objective
        assert all(np.array_equal(x[2], y[2]) for x, y in zip(a.trace, b.trace))

    def test_iterates_feasible(self):
        post, cfg = grid_instance()
        res = sgd_solve(post, cfg, SolverConfig(eps_min=0.05, eps_max=0.8, record_trace=True, seed=2))
        assert len(res.trace) == 301
        for _, value, rates in res.trace:
            assert np.all((rates >= 0.05) & (rates <= 0.8)) and np.isfinite(value)

    def test_momentum_stays_feasible(self):
        post, cfg = grid_instance()
        res = sgd_solve(post, cfg, SolverConfig(momentum=0.9, record_trace=True, seed=2))
        assert all(np.all((r >= 0) & (r <= 1)) for _, _, r in res.trace)

    def test_single_item_objective_does_not_move(self):
        rng = np.random.default_rng(3)
        X = rng.standard_normal((20, 2)) / 2
        post = make_prior(1, 2, rng.standard_normal((1, 2)), 1.0, diagonal=True)
        cfg = ObjectiveConfig.from_users(X, [100.0, 200.0, 300.0], 1)
        res = sgd_solve(post, cfg, SolverConfig(seed=4))
        assert np.all((res.schedule.rates >= 0) & (res.schedule.rates <= 1))
        big = ObjectiveConfig.from_users(X, [100.0, 200.0, 300.0], 1, n_paths=20_000)
        from explore_sched.objective import objective_paths

        start = objective_paths(np.full(3, 0.5), post, big, rng=8)
        end = objective_paths(res.schedule.rates, post, big, rng=9)
        se = np.sqrt(start.var(ddof=1) / len(start) + end.var(ddof=1) / len(end))
        assert abs(end.mean() - start.mean()) < 3 * se

    def test_monotone_trend(self):
        post, cfg = grid_instance()
        res = sgd_solve(post, cfg, SolverConfig(record_trace=True, seed=6))
        big = grid_instance(n_paths=10_000)[1]
        from explore_sched.objective import objective_paths

        at = [objective_paths(res.trace[k][2], post, big, rng=123) for k in (0, 150, 300)]
        for before, after in zip(at, at[1:]):
            se = np.sqrt(before.var(ddof=1) / len(before) + after.var(ddof=1) / len(after))
            assert after.mean() <= before.mean() + 3 * se

    def test_near_grid_optimum(self):
        post, cfg = grid_instance()
        res = sgd_solve(post, cfg, SolverConfig(seed=7))
        grid = np.linspace(0, 1, 21)
        Z = np.random.default_rng(1).standard_normal((4000, 2, 2, 2))
        from instances import GRID_MEAN, GRID_SIZES, GRID_USERS

        table = oracle_grid(GRID_USERS, GRID_MEAN, 1.0, GRID_SIZES, 2, grid, grid, Z)
        mine = objective_value(res.schedule.rates, post, cfg.with_horizon(GRID_SIZES), noise=Z)
        assert mine <= table.min() * 0.98

    def test_nonfinite_gradient_aborts(self, monkeypatch):
        post, cfg = grid_instance()
        real = optimizer_module.value_and_gradient
        calls = {"n": 0}

        def flaky(*args, **kwargs):
            value, grad = real(*args, **kwargs)
            calls["n"] += 1
            if calls["n"] == 4:
                grad = grad.copy()
                grad[1] = np.nan
            return value, grad

        monkeypatch.setattr(optimizer_module, "value_and_gradient", flaky)
        with pytest.raises(NumericalError, match="step 3, coordinate 1"):
            sgd_solve(post, cfg, SolverConfig(seed=0))


class TestEstimator:
    def test_fit(self):
        rng = np.random.default_rng(0)
        X = rng.standard_normal((50, 3)) / 2
        est = ExplorationPlanner(n_items=3, n_steps=50, random_state=1).fit(X, [20, 100, 100])
        assert est.schedule_.shape == (3,) and est.n_features_in_ == 3
        assert np.isfinite(est.objective_)

    def test_params_and_clone(self):
        est = ExplorationPlanner(n_items=4, eps_min=0.05)
        assert est.get_params()["eps_min"] == 0.05
        twin = clone(est)
        assert twin.get_params() == est.get_params()
        assert est.set_params(step_size=0.1).step_size == 0.1

    def test_constraint(self):
        X = np.random.default_rng(1).standard_normal((30, 2)) / 2
        est = ExplorationPlanner(n_items=2, n_steps=40, eps_min=0.05, random_state=0).fit(X, [10, 50, 50])
        assert np.all(est.schedule_ >= 0.05)

    def test_bad_users(self):
        with pytest.raises(InputError):
            ExplorationPlanner().fit(np.array([[np.nan, 1.0]]), [1, 2])
