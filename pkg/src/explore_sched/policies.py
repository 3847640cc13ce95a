"""Assignment policies and exploration-rate strategies.

Every strategy follows the same period protocol driven by
:func:`explore_sched.environment.run_episode`::

    strategy.start(context)
    for t in 1..T:
        strategy.begin_period(t, n_t)      # fixes the period's rate / belief
        strategy.assign(X, rng)            # no learning inside the period
        strategy.observe(batch)            # batched feedback at period end
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import as_matrix, as_vector
from .exceptions import InputError
from .model import InteractionBatch, greedy_actions
from .objective import ObjectiveConfig
from .optimizer import SolverConfig, sgd_solve
from .posterior import GaussianPosterior, make_prior, posterior_update

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------- estimators


def ridge_fit(batch: InteractionBatch, a: int, nu: float = 1.0, d: int | None = None, include_exploit: bool = False):
    """Ridge coefficients ``(X^T X + nu I)^-1 X^T R`` over rows assigned ``a``.

    Only explore-group rows are used unless ``include_exploit``.
    """
    if nu <= 0:
        raise InputError("ridge regularizer must be positive")
    d = batch.X.shape[1] if d is None else d
    mask = batch.actions == a
    if not include_exploit:
        mask &= batch.explored
    X, R = batch.X[mask], batch.rewards[mask]
    if len(X) == 0:
        return np.zeros(d)
    return np.linalg.solve(X.T @ X + nu * np.eye(d), X.T @ R)


class RidgeGreedy(BaseEstimator):
    """Per-item ridge regression with greedy argmax prediction.

    ``partial_fit`` accumulates sufficient statistics so a history never has
    to be stored; ``fit`` starts over.
    """

    def __init__(self, n_items=2, alpha=1.0, include_exploit=False, initial_coef=None):
        self.n_items = n_items
        self.alpha = alpha
        self.include_exploit = include_exploit
        self.initial_coef = initial_coef

    def _reset(self, d):
        self.n_features_in_ = d
        self.gram_ = np.zeros((self.n_items, d, d))
        self.xr_ = np.zeros((self.n_items, d))
        self.n_obs_ = np.zeros(self.n_items, dtype=int)
        if self.initial_coef is not None:
            self.coef_ = as_matrix(self.initial_coef, "initial_coef", n_features=d).copy()
        else:
            self.coef_ = np.zeros((self.n_items, d))

    def fit(self, X, actions, rewards, explored=None):
        X = as_matrix(X, "X")
        self._reset(X.shape[1])
        return self.partial_fit(X, actions, rewards, explored)

    def partial_fit(self, X, actions, rewards, explored=None):
        X = as_matrix(X, "X")
        if not hasattr(self, "coef_"):
            self._reset(X.shape[1])
        actions = np.asarray(actions, dtype=int)
        rewards = as_vector(rewards, "rewards", size=len(X))
        keep = np.ones(len(X), bool) if explored is None or self.include_exploit else np.asarray(explored, bool)
        X, actions, rewards = X[keep], actions[keep], rewards[keep]
        if len(X) == 0:
            return self
        onehot = np.zeros((len(X), self.n_items))
        onehot[np.arange(len(X)), actions] = 1.0
        self.gram_ += np.einsum("ik,ij,il->kjl", onehot, X, X)
        self.xr_ += onehot.T @ (X * rewards[:, None])
        self.n_obs_ += onehot.sum(axis=0).astype(int)
        d = self.n_features_in_
        for a in np.flatnonzero(self.n_obs_):
            self.coef_[a] = np.linalg.solve(self.gram_[a] + self.alpha * np.eye(d), self.xr_[a])
        return self

    def predict(self, X):
        return greedy_actions(as_matrix(X, "X", n_features=self.n_features_in_), self.coef_)


# ---------------------------------------------------------------- assignment rules


def uniform_policy_assign(X, eps: float, coef, rng: np.random.Generator):
    """Epsilon-greedy assignment for a batch of users.

    Returns
    -------
    actions : ndarray of int, shape (n,)
    explored : ndarray of bool, shape (n,)
    probs : ndarray of shape (n, K)
        The assignment distribution ``eps/K + (1-eps) 1{greedy}`` for each user.
    """
    if not 0.0 <= eps <= 1.0:
        raise InputError(f"exploration rate {eps} outside [0, 1]")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    coef = np.asarray(coef)
    K, n = coef.shape[0], len(X)
    greedy = greedy_actions(X, coef) if n else np.zeros(0, int)
    explored = rng.random(n) < eps
    actions = np.where(explored, rng.integers(K, size=n), greedy)
    probs = np.full((n, K), eps / K)
    probs[np.arange(n), greedy] += 1.0 - eps
    return actions, explored, probs


def etc_rate(budget: float, spent: float, n_t: float) -> float:
    """Explore-then-commit rate ``clip((B - spent) / n_t, 0, 1)``; 0 for an empty batch."""
    if budget < 0:
        raise InputError("budget must be non-negative")
    if n_t <= 0:
        return 0.0
    return float(np.clip((budget - spent) / n_t, 0.0, 1.0))


def theory_etc_budget(c: float, d: int, N: float) -> float:
    """Budget ``c d^(1/3) N^(2/3)``."""
    if c <= 0:
        raise InputError("c must be positive")
    return c * np.cbrt(d) * np.cbrt(N) ** 2


def batched_ts_assign(post: GaussianPosterior, X, rng: np.random.Generator):
    """One posterior draw shared by the whole batch; returns greedy actions under it."""
    theta = post.sample(rng)
    return greedy_actions(np.atleast_2d(X), theta), theta


# ---------------------------------------------------------------- strategies


@dataclass
class EpisodeContext:
    """What a strategy knows when an episode starts."""

    K: int
    d: int
    horizon: int
    N: int
    fractions: np.ndarray
    user_sample: np.ndarray
    noise_std: float = 1.0
    seed: int = 0
    rng: np.random.Generator = field(default_factory=np.random.default_rng)

    def forecast_sizes(self, fractions=None) -> np.ndarray:
        lam = self.fractions if fractions is None else fractions
        return self.N * np.asarray(lam, dtype=np.float64)


class Strategy(BaseEstimator):
    """Base class; subclasses implement the period protocol."""

    kind = "base"
    has_rates = True

    def start(self, ctx: EpisodeContext):
        self.ctx_ = ctx
        self.rates_ = []

    def begin_period(self, t: int, n_t: int):
        raise NotImplementedError

    def assign(self, X, rng):
        raise NotImplementedError

    def observe(self, batch: InteractionBatch):
        raise NotImplementedError

    def fingerprint(self):
        """Snapshot of whatever drives assignments (used by feedback-timing checks)."""
        raise NotImplementedError


class UniformExploration(Strategy):
    """Epsilon-greedy with ridge-greedy exploitation; subclasses pick ``eps_t``."""

    def __init__(self, eps_min=0.0, nu=1.0, include_exploit=False, initial_coef=None):
        self.eps_min = eps_min
        self.nu = nu
        self.include_exploit = include_exploit
        self.initial_coef = initial_coef

    def start(self, ctx):
        super().start(ctx)
        self.ridge_ = RidgeGreedy(ctx.K, self.nu, self.include_exploit, self.initial_coef)
        self.ridge_._reset(ctx.d)
        self.spent_ = 0.0

    def _rate(self, t, n_t):
        raise NotImplementedError

    def begin_period(self, t, n_t):
        eps = float(np.clip(max(self._rate(t, n_t), self.eps_min), 0.0, 1.0))
        self.current_rate_ = eps
        self.rates_.append(eps)
        self.spent_ += eps * n_t
        return eps

    def assign(self, X, rng):
        return uniform_policy_assign(X, self.current_rate_, self.ridge_.coef_, rng)

    def observe(self, batch):
        if len(batch):
            self.ridge_.partial_fit(batch.X, batch.actions, batch.rewards, batch.explored)

    def fingerprint(self):
        return self.ridge_.coef_.copy()


class EpsGreedy(UniformExploration):
    kind = "eps_greedy"

    def __init__(self, eps=0.1, eps_min=0.0, nu=1.0, include_exploit=False, initial_coef=None):
        super().__init__(eps_min, nu, include_exploit, initial_coef)
        self.eps = eps

    def _rate(self, t, n_t):
        return self.eps


class FixedSchedule(UniformExploration):
    """Deploys a given schedule open loop."""

    kind = "fixed"

    def __init__(self, schedule=(0.5,), eps_min=0.0, nu=1.0, include_exploit=False, initial_coef=None):
        super().__init__(eps_min, nu, include_exploit, initial_coef)
        self.schedule = schedule

    def start(self, ctx):
        if len(self.schedule) != ctx.horizon:
            raise InputError(f"schedule has {len(self.schedule)} periods, plan has {ctx.horizon}")
        super().start(ctx)

    def _rate(self, t, n_t):
        return self.schedule[t - 1]


class TheoryETC(UniformExploration):
    kind = "theory_etc"

    def __init__(self, c=0.1, eps_min=0.0, nu=1.0, include_exploit=False, initial_coef=None):
        super().__init__(eps_min, nu, include_exploit, initial_coef)
        self.c = c

    def start(self, ctx):
        super().start(ctx)
        self.budget_ = theory_etc_budget(self.c, ctx.d, ctx.N)

    def _rate(self, t, n_t):
        return etc_rate(self.budget_, self.spent_, n_t)


class SimpleETC(UniformExploration):
    """Explore fully in period 1, then commit: ETC with budget ``n_1``."""

    kind = "simple_etc"

    def _rate(self, t, n_t):
        if t == 1:
            self.budget_ = float(n_t)
        return etc_rate(self.budget_, self.spent_, n_t)


def solve_seed(seed, period):
    """Solver seed for the solve made at ``period``; Planner and MPC share period 1."""
    return (int(seed), int(period))


class _OptimizingStrategy(UniformExploration):
    """Shared configuration for Planner and MPC."""

    def __init__(
        self,
        eps_min=0.0,
        eps_max=1.0,
        n_steps=300,
        step_size=0.05,
        n_paths=1,
        init=0.5,
        momentum=0.0,
        tau=1e-12,
        prior_variance=1.0,
        noisy_forecast=False,
        concentration=None,
        record_trace=False,
        nu=1.0,
        include_exploit=False,
        initial_coef=None,
    ):
        super().__init__(eps_min, nu, include_exploit, initial_coef)
        self.eps_max = eps_max
        self.n_steps = n_steps
        self.step_size = step_size
        self.n_paths = n_paths
        self.init = init
        self.momentum = momentum
        self.tau = tau
        self.prior_variance = prior_variance
        self.noisy_forecast = noisy_forecast
        self.concentration = concentration
        self.record_trace = record_trace

    def start(self, ctx):
        super().start(ctx)
        self.traces_ = []
        self.plans_ = []
        fractions = ctx.fractions
        if self.noisy_forecast:
            from .environment import noisy_forecast

            conc = ctx.K if self.concentration is None else self.concentration
            fractions = noisy_forecast(ctx.fractions, conc, ctx.rng)
        self.forecast_ = ctx.forecast_sizes(fractions)
        self.prior_ = make_prior(ctx.K, ctx.d, 0.0, self.prior_variance)

    def _solver(self, period, eval_paths=200):
        return SolverConfig(
            n_steps=self.n_steps,
            step_size=self.step_size,
            eps_min=self.eps_min,
            eps_max=self.eps_max,
            init=self.init,
            momentum=self.momentum,
            eval_paths=eval_paths,
            record_trace=self.record_trace,
            seed=solve_seed(self.ctx_.seed, period),
        )

    def _solve(self, post, t, init=None):
        ctx = self.ctx_
        cfg = ObjectiveConfig.from_users(
            ctx.user_sample, self.forecast_[t - 1 :], ctx.K, ctx.noise_std, n_paths=self.n_paths, tau=self.tau
        )
        result = sgd_solve(post, cfg, self._solver(t), init=init)
        self.plans_.append((t, result.schedule.rates.copy()))
        if self.record_trace:
            self.traces_.append((t, result.trace))
        return result


class Planner(_OptimizingStrategy):
    """One solve under the prior before period 1, deployed open loop."""

    kind = "planner"

    def start(self, ctx):
        super().start(ctx)
        result = self._solve(self.prior_, 1)
        self.schedule_ = result.schedule.rates
        self.objective_ = result.objective

    def _rate(self, t, n_t):
        return self.schedule_[t - 1]


class MPC(_OptimizingStrategy):
    """Receding-horizon control: re-solve on the current posterior every period."""

    kind = "mpc"

    def start(self, ctx):
        super().start(ctx)
        self.posterior_ = self.prior_
        self.posterior_trail_ = [self.prior_]
        self.previous_plan_ = None
        self.faults_ = []

    def _rate(self, t, n_t):
        prev = self.previous_plan_
        warm = None if prev is None or len(prev) < 2 else prev[1:]
        try:
            plan = self._solve(self.posterior_, t, init=warm).schedule.rates
        except Exception as exc:  # solver faults must not stop the episode
            fallback = self.eps_min if prev is None or len(prev) < 2 else prev[1]
            logger.warning("MPC solve failed at period %d (%s); using planned rate %.4g", t, exc, fallback)
            self.faults_.append((t, repr(exc)))
            plan = np.full(self.ctx_.horizon - t + 1, fallback)
        self.previous_plan_ = plan
        return plan[0]

    def observe(self, batch):
        super().observe(batch)
        self.posterior_ = posterior_update(self.posterior_, batch, self.ctx_.noise_std)
        self.posterior_trail_.append(self.posterior_)


class BatchedTS(Strategy):
    """Batched Thompson sampling on the exact Gaussian posterior.

    One draw per period serves the whole batch; the update uses every
    observation in the batch, not only an explore group.
    """

    kind = "batched_ts"
    has_rates = False

    def __init__(self, prior_variance=1.0):
        self.prior_variance = prior_variance

    def start(self, ctx):
        super().start(ctx)
        self.posterior_ = make_prior(ctx.K, ctx.d, 0.0, self.prior_variance)

    def begin_period(self, t, n_t):
        self.sample_rng_ = self.ctx_.rng
        self.theta_ = self.posterior_.sample(self.sample_rng_)
        return None

    def assign(self, X, rng):
        X = np.atleast_2d(X)
        actions = greedy_actions(X, self.theta_) if len(X) else np.zeros(0, int)
        probs = np.zeros((len(X), self.ctx_.K))
        probs[np.arange(len(X)), actions] = 1.0
        return actions, np.zeros(len(X), bool), probs

    def observe(self, batch):
        everything = InteractionBatch(batch.X, batch.actions, batch.rewards, np.ones(len(batch), bool))
        self.posterior_ = posterior_update(self.posterior_, everything, self.ctx_.noise_std)

    def fingerprint(self):
        return self.posterior_.mean.copy()


STRATEGIES = {
    cls.kind: cls for cls in (EpsGreedy, TheoryETC, SimpleETC, Planner, MPC, BatchedTS, FixedSchedule)
}


def make_strategy(kind: str, **params) -> Strategy:
    """Instantiate a strategy by its config name."""
    try:
        cls = STRATEGIES[kind]
    except KeyError:
        raise InputError(f"unknown strategy {kind!r}; expected one of {sorted(STRATEGIES)}") from None
    return cls(**params)
