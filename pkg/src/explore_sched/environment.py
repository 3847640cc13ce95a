"""Batched bandit simulation: arrivals, synthetic instances and the episode loop.

Random streams are derived hierarchically from one ``SeedSequence`` per
replication: ``(period, purpose)`` keys give every draw its own stream, so any
sub-result can be reproduced in isolation and strategies run on the same
replication see the same users, arrivals and reward noise.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from ._validation import as_vector
from .exceptions import InputError
from .model import DEFAULT_NORM_BOUND, BanditInstance, InteractionBatch, ItemEmbeddings, batch_regret
from .policies import EpisodeContext, Strategy

ARRIVAL_PATTERNS = {
    "increasing": (0.02, 0.18, 0.20, 0.20, 0.20, 0.20),
    "spike": (0.05, 0.35, 0.20, 0.20, 0.20),
    "constant": (0.10,) * 10,
}

# purpose codes for stream derivation
_USERS, _NOISE, _POLICY, _CONTEXT, _SIZES, _INSTANCE = range(6)


def arrival_pattern(name: str) -> np.ndarray:
    """Fraction of the total arrivals landing in each period."""
    try:
        return np.array(ARRIVAL_PATTERNS[name.lower()])
    except KeyError:
        raise InputError(f"unknown arrival pattern {name!r}; known: {sorted(ARRIVAL_PATTERNS)}") from None


def check_fractions(fractions) -> np.ndarray:
    lam = as_vector(fractions, "fractions")
    if np.any(lam < 0) or abs(lam.sum() - 1.0) > 1e-9:
        raise InputError(f"arrival fractions must be non-negative and sum to 1, got sum {lam.sum()}")
    return lam


def sample_batch_sizes(N: int, fractions, rng: np.random.Generator) -> np.ndarray:
    """Independent ``Binomial(N, lambda_t)`` batch sizes."""
    if N < 1:
        raise InputError("N must be >= 1")
    return rng.binomial(N, check_fractions(fractions))


def noisy_forecast(fractions, concentration: float, rng: np.random.Generator) -> np.ndarray:
    """Dirichlet draw with parameter ``concentration * lambda``.

    Zero fractions are floored at 1e-6 first.
    """
    if concentration <= 0:
        raise InputError("concentration must be positive")
    lam = check_fractions(fractions)
    if len(lam) == 1:
        return np.ones(1)
    draw = rng.dirichlet(concentration * np.maximum(lam, 1e-6))
    return draw / draw.sum()


@dataclass(frozen=True)
class BatchPlan:
    """Horizon, scale and arrival fractions, plus realized batch sizes."""

    N: int
    fractions: np.ndarray
    sizes: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "fractions", check_fractions(self.fractions))
        sizes = np.asarray(self.sizes, dtype=np.int64)
        if sizes.shape != self.fractions.shape or np.any(sizes < 0):
            raise InputError("realized sizes must be non-negative and match the horizon")
        object.__setattr__(self, "sizes", sizes)

    @property
    def horizon(self) -> int:
        return len(self.fractions)

    @classmethod
    def sample(cls, N, fractions, rng) -> "BatchPlan":
        return cls(N, fractions, sample_batch_sizes(N, fractions, rng))


def sample_users(n, d, rng, scale=None, norm_bound=DEFAULT_NORM_BOUND):
    """``N(0, scale^2 I)`` users, rejecting any with squared norm above the bound."""
    scale = 1.0 / np.sqrt(d) if scale is None else scale
    out = np.empty((0, d))
    while len(out) < n:
        draw = scale * rng.standard_normal((2 * (n - len(out)) + 8, d))
        draw = draw[np.einsum("ij,ij->i", draw, draw) <= norm_bound]
        out = np.vstack([out, draw])
    return out[:n]


def synth_instance(
    K: int,
    d: int,
    pool_size: int,
    rng: np.random.Generator,
    prior_mean=0.0,
    prior_variance=1.0,
    noise_std=1.0,
    user_scale=None,
    norm_bound=DEFAULT_NORM_BOUND,
) -> BanditInstance:
    """Items drawn from the prior ``N(prior_mean, diag(prior_variance))`` and a
    pool of bounded Gaussian users."""
    if min(K, d, pool_size) < 1:
        raise InputError("K, d and pool_size must be >= 1")
    var = np.broadcast_to(np.asarray(prior_variance, dtype=np.float64), (d,))
    theta = np.asarray(prior_mean) + np.sqrt(var) * rng.standard_normal((K, d))
    users = sample_users(pool_size, d, rng, user_scale, norm_bound)
    return BanditInstance(ItemEmbeddings(theta), users, noise_std, norm_bound)


def stream(seed_seq: np.random.SeedSequence, *key) -> np.random.Generator:
    """Generator for a sub-stream identified by ``key`` under ``seed_seq``."""
    child = np.random.SeedSequence(seed_seq.entropy, spawn_key=tuple(seed_seq.spawn_key) + tuple(key))
    return np.random.default_rng(child)


def as_seed_sequence(seed) -> np.random.SeedSequence:
    return seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)


@dataclass
class RegretReport:
    """Regret aggregated over replications.

    ``period_mean``/``period_se`` are per-period cumulative regret within the
    period; ``mean_regret`` is the average per-user regret of an episode.
    """

    period_mean: np.ndarray
    period_se: np.ndarray
    cumulative_mean: float
    cumulative_se: float
    mean_regret: float
    mean_regret_se: float
    replications: int


@dataclass
class EpisodeResult:
    period_regret: np.ndarray
    batch_sizes: np.ndarray
    rates: list
    batches: list = field(default_factory=list)
    user_regret: list = field(default_factory=list)
    fingerprints: list = field(default_factory=list)

    @property
    def cumulative_regret(self) -> float:
        return float(self.period_regret.sum())

    @property
    def mean_regret(self) -> float:
        n = self.batch_sizes.sum()
        return self.cumulative_regret / n if n else 0.0

    def report(self) -> RegretReport:
        return aggregate([self])

    def write_log(self, path) -> None:
        """CSV log: period, user index, action, reward, explored flag, running regret."""
        running = 0.0
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["period", "user_index", "action", "reward", "explored", "running_regret"])
            for t, (batch, reg) in enumerate(zip(self.batches, self.user_regret), start=1):
                for j in range(len(batch)):
                    running += reg[j]
                    w.writerow([t, int(batch.user_index[j]), int(batch.actions[j]),
                                f"{batch.rewards[j]:.6g}", int(batch.explored[j]), f"{running:.6g}"])


def aggregate(episodes) -> RegretReport:
    per = np.array([ep.period_regret for ep in episodes])
    cum = per.sum(axis=1)
    avg = np.array([ep.mean_regret for ep in episodes])
    r = len(episodes)

    def se(v):
        return v.std(axis=0, ddof=1) / np.sqrt(r) if r > 1 else np.zeros_like(v.mean(axis=0))

    return RegretReport(per.mean(axis=0), se(per), float(cum.mean()), float(se(cum)),
                        float(avg.mean()), float(se(avg)), r)


def episode_context(instance: BanditInstance, plan: BatchPlan, seed, user_sample_size=100) -> EpisodeContext:
    seq = as_seed_sequence(seed)
    ctx_rng = stream(seq, 0, _CONTEXT)
    idx = ctx_rng.integers(len(instance.users), size=user_sample_size)
    return EpisodeContext(
        K=instance.K,
        d=instance.d,
        horizon=plan.horizon,
        N=plan.N,
        fractions=plan.fractions,
        user_sample=instance.users[idx],
        noise_std=instance.noise_std,
        seed=int(ctx_rng.integers(2**62)),
        rng=stream(seq, 0, _POLICY),
    )


def run_episode(
    instance: BanditInstance,
    strategy: Strategy,
    plan: BatchPlan,
    seed=None,
    user_sample_size: int = 100,
    keep_log: bool = False,
    record_fingerprints: bool = False,
) -> EpisodeResult:
    """Run one batched episode and account regret exactly.

    Each period draws ``n_t`` users uniformly with replacement from the pool,
    asks the strategy for assignments, draws rewards, and only then lets the
    strategy learn. A user's regret is the expectation over the policy's
    assignment distribution, computed against the true embeddings.
    """
    seq = as_seed_sequence(seed)
    ctx = episode_context(instance, plan, seq, user_sample_size)
    strategy.start(ctx)
    values_pool = instance.pool_values()
    period_regret = np.zeros(plan.horizon)
    result = EpisodeResult(period_regret, plan.sizes.copy(), [])
    for t in range(1, plan.horizon + 1):
        n_t = int(plan.sizes[t - 1])
        idx = stream(seq, t, _USERS).integers(len(instance.users), size=n_t)
        X = instance.users[idx]
        if record_fingerprints:
            result.fingerprints.append(strategy.fingerprint())
        rate = strategy.begin_period(t, n_t)
        actions, explored, probs = strategy.assign(X, stream(seq, t, _POLICY))
        values = values_pool[idx]
        noise = stream(seq, t, _NOISE).standard_normal(n_t)
        rewards = values[np.arange(n_t), actions] + instance.noise_std * noise
        regret = batch_regret(values, probs) if n_t else np.zeros(0)
        period_regret[t - 1] = regret.sum()
        batch = InteractionBatch(X, actions, rewards, explored, user_index=idx)
        strategy.observe(batch)
        result.rates.append(rate)
        if keep_log:
            result.batches.append(batch)
            result.user_regret.append(regret)
    return result
