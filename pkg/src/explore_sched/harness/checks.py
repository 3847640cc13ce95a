"""Fast invariant checks run by ``explore-sched check``.

Each check draws random instances from its own seed and returns a short
detail string; a failing check raises ``AssertionError``.
"""

from __future__ import annotations

import time

import numpy as np

from ..environment import BatchPlan, arrival_pattern, episode_context, run_episode, synth_instance
from ..model import InteractionBatch, ItemEmbeddings, per_user_regret
from ..objective import ObjectiveConfig, covariance_path, draw_noise, objective_value, value_and_gradient
from ..optimizer import SolverConfig, project, sgd_solve
from ..policies import EpsGreedy, make_strategy
from ..posterior import make_prior, posterior_update


def _random_batch(rng, n, K, d, eps=0.5):
    X = rng.standard_normal((n, d)) / np.sqrt(d)
    return InteractionBatch(X, rng.integers(K, size=n), rng.standard_normal(n), rng.random(n) < eps)


def check_regret_nonnegative(rng):
    for _ in range(200):
        K, d = rng.integers(1, 6), rng.integers(1, 6)
        items = ItemEmbeddings(rng.standard_normal((K, d)))
        p = rng.dirichlet(np.ones(K))
        assert per_user_regret(rng.standard_normal(d), p, items) >= -1e-12
    return "200 random users and distributions"


def check_posterior_updates(rng):
    for _ in range(20):
        K, d = rng.integers(1, 4), rng.integers(1, 5)
        prior = make_prior(K, d, 0.0, rng.uniform(0.5, 2.0))
        b1, b2 = _random_batch(rng, 30, K, d), _random_batch(rng, 20, K, d)
        seq = posterior_update(posterior_update(prior, b1, 1.0), b2, 1.0)
        once = posterior_update(prior, b1.concat(b2), 1.0)
        assert np.allclose(seq.mean, once.mean, atol=1e-10)
        assert np.allclose(seq.covariance, once.covariance, atol=1e-10)
        drop = prior.covariance - posterior_update(prior, b1, 1.0).covariance
        assert np.linalg.eigvalsh(drop).min() >= -1e-12
    return "sequential = combined update; covariance shrinks in Loewner order"


def check_covariance_path_monotone(rng):
    K, d, H = 3, 4, 5
    cfg = ObjectiveConfig.from_users(rng.standard_normal((50, d)) / 2, rng.integers(10, 100, H), K)
    prior = make_prior(K, d, 0.0, 1.0, diagonal=True)
    eps = rng.uniform(0, 1, H)
    base = covariance_path(prior, eps, cfg)
    for l in range(H - 1):
        bumped = eps.copy()
        bumped[l] = min(1.0, bumped[l] + 0.1)
        assert np.all(covariance_path(prior, bumped, cfg)[l + 1:] < base[l + 1:])
    return "raising eps_l lowers every later variance"


def check_gradient(rng):
    worst = 0.0
    for _ in range(10):
        K, d, H = rng.integers(2, 5), rng.integers(1, 6), rng.integers(1, 6)
        cfg = ObjectiveConfig.from_users(rng.standard_normal((20, d)) / np.sqrt(d), rng.integers(5, 60, H), K, n_paths=4)
        post = make_prior(K, d, rng.standard_normal((K, d)) * 0.3, rng.uniform(0.5, 2), diagonal=True)
        eps = rng.uniform(0.05, 0.95, H)
        noise = draw_noise(rng, cfg, K, d)
        g = value_and_gradient(eps, post, cfg, noise=noise)[1]
        for j in range(H):
            e = np.zeros(H)
            e[j] = 1e-4
            fd = (objective_value(eps + e, post, cfg, noise=noise) - objective_value(eps - e, post, cfg, noise=noise)) / 2e-4
            worst = max(worst, abs(fd - g[j]) / max(abs(fd), 1e-8))
    assert worst < 1e-3, worst
    return f"worst relative error {worst:.2e}"


def check_solver_feasible(rng):
    cfg = ObjectiveConfig.from_users(rng.standard_normal((30, 3)) / 2, [20, 80, 100], 2)
    prior = make_prior(2, 3, 0.0, 1.0, diagonal=True)
    res = sgd_solve(prior, cfg, SolverConfig(n_steps=60, eps_min=0.05, eps_max=0.9, record_trace=True, seed=1))
    for _, _, rates in res.trace:
        assert np.all((rates >= 0.05) & (rates <= 0.9))
    assert np.array_equal(project(res.schedule.rates, 0.05, 0.9), res.schedule.rates)
    return "every iterate inside the box"


def check_batched_feedback(rng):
    inst = synth_instance(3, 4, 200, rng)
    plan = BatchPlan.sample(300, arrival_pattern("increasing"), rng)
    seed = int(rng.integers(2**32))
    ep = run_episode(inst, EpsGreedy(0.3), plan, seed, keep_log=True, record_fingerprints=True)
    replay = EpsGreedy(0.3)
    replay.start(episode_context(inst, plan, seed))
    for t, batch in enumerate(ep.batches):
        assert np.array_equal(replay.fingerprint(), ep.fingerprints[t])
        replay.observe(batch)
    assert np.isclose(ep.cumulative_regret, sum(r.sum() for r in ep.user_regret))
    return "assignments in period t depend only on periods < t; regret is additive"


def check_determinism(rng):
    inst = synth_instance(3, 4, 200, rng)
    plan = BatchPlan.sample(400, arrival_pattern("spike"), rng)
    a = run_episode(inst, make_strategy("mpc", n_steps=30), plan, 11)
    b = run_episode(inst, make_strategy("mpc", n_steps=30), plan, 11)
    assert np.array_equal(a.period_regret, b.period_regret) and a.rates == b.rates
    return "identical seeds give identical episodes"


CHECKS = [
    ("regret is non-negative", check_regret_nonnegative),
    ("posterior updates are exact and monotone", check_posterior_updates),
    ("covariance path is monotone", check_covariance_path_monotone),
    ("gradient matches finite differences", check_gradient),
    ("solver iterates stay feasible", check_solver_feasible),
    ("batched feedback and regret additivity", check_batched_feedback),
    ("episodes are seed-deterministic", check_determinism),
]


def run_checks(seed: int = 0, out=print) -> bool:
    """Run every check, print one line each, return whether all passed."""
    ok = True
    for i, (name, fn) in enumerate(CHECKS):
        t0 = time.perf_counter()
        try:
            detail = fn(np.random.default_rng([seed, i]))
            out(f"PASS  {name} ({detail}; {time.perf_counter() - t0:.1f}s)")
        except AssertionError as exc:
            ok = False
            out(f"FAIL  {name}: {exc}")
    return ok
