"""Differentiable Monte-Carlo approximation of Bayesian regret.

For a schedule ``eps`` over periods ``t..T`` the future posterior covariance is
replaced by its large-batch limit

    Sigma_bar_s^-1 = Sigma_t^-1 + sum_{l<s} eps_l n_l I_pop

and the future posterior mean is reparameterized as
``beta_s = beta_t + (Sigma_t - Sigma_bar_s + tau)^(1/2) Z_s``. The objective is

    J(eps) = -sum_s n_s mean_i [eps_s x_i.beta_bar + (1 - eps_s) max_a x_i.beta_{s,a}]

which differs from Bayesian regret only by the eps-free term ``n E[r*(X)]``.
Index ``s`` below is relative to the conditioning period (``s = 0`` is ``t``).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._validation import as_matrix, as_vector
from .exceptions import InputError, NumericalError
from .posterior import DesignMatrix, GaussianPosterior, dumps, population_design

DEFAULT_TAU = 1e-12


@dataclass(frozen=True)
class ExplorationSchedule:
    """Per-period exploration rates starting at ``start_period``."""

    rates: np.ndarray
    start_period: int = 1
    eps_min: float = 0.0
    eps_max: float = 1.0

    def __post_init__(self):
        rates = as_vector(self.rates, "rates")
        if not 0.0 <= self.eps_min <= self.eps_max <= 1.0:
            raise InputError(f"invalid box [{self.eps_min}, {self.eps_max}]")
        if np.any(rates < self.eps_min - 1e-12) or np.any(rates > self.eps_max + 1e-12):
            raise InputError("schedule rates outside their box")
        object.__setattr__(self, "rates", rates)

    def __len__(self):
        return len(self.rates)

    @property
    def end_period(self) -> int:
        return self.start_period + len(self.rates) - 1


@dataclass(frozen=True)
class ObjectiveConfig:
    """Inputs to the objective besides the schedule and the current posterior.

    Parameters
    ----------
    user_sample : ndarray of shape (m, d)
    batch_sizes : ndarray of shape (H,)
        Forecast arrivals for each remaining period.
    design : DesignMatrix
        Population design; diagonal unless full-mode evaluation is wanted.
    n_paths : int
        Monte-Carlo paths per evaluation.
    tau : float
        Floor added inside the square root of the variance gap.
    noise_std : float
        Reward noise, used only by the stochastic-design evaluator.
    """

    user_sample: np.ndarray
    batch_sizes: np.ndarray
    design: DesignMatrix
    n_paths: int = 1
    tau: float = DEFAULT_TAU
    noise_std: float = 1.0
    seed: int | None = None

    def __post_init__(self):
        X = as_matrix(self.user_sample, "user_sample")
        if len(X) < 1:
            raise InputError("user_sample must contain at least one user")
        n = as_vector(self.batch_sizes, "batch_sizes")
        if np.any(n < 0):
            raise InputError("batch sizes must be non-negative")
        if self.n_paths < 1 or self.tau <= 0:
            raise InputError("need n_paths >= 1 and tau > 0")
        if self.design.d != X.shape[1]:
            raise InputError("design matrix and user sample dimensions differ")
        object.__setattr__(self, "user_sample", X)
        object.__setattr__(self, "batch_sizes", n)

    @property
    def horizon(self) -> int:
        return len(self.batch_sizes)

    @classmethod
    def from_users(cls, user_sample, batch_sizes, K, noise_std=1.0, diagonal=True, **kwargs):
        design = population_design(user_sample, K, noise_std, diagonal=diagonal)
        return cls(user_sample, batch_sizes, design, noise_std=noise_std, **kwargs)

    def with_horizon(self, batch_sizes) -> "ObjectiveConfig":
        return ObjectiveConfig(
            self.user_sample, batch_sizes, self.design, self.n_paths, self.tau, self.noise_std, self.seed
        )


@dataclass(frozen=True)
class PosteriorPath:
    """Simulated future beliefs for one schedule.

    ``covariances`` has shape (H, K, d) in diagonal mode or (H, K, d, d);
    ``means`` and ``noise`` have shape (P, H, K, d).
    """

    covariances: np.ndarray
    means: np.ndarray
    noise: np.ndarray
    start_period: int = 1
    diagonal: bool = True

    def snapshots(self, path: int = 0) -> list[str]:
        """Debug dump: one posterior snapshot per period for a single path."""
        out = []
        for s in range(self.covariances.shape[0]):
            cov = self.covariances[s]
            prec = 1.0 / cov if self.diagonal else np.linalg.inv(cov)
            out.append(dumps(GaussianPosterior(self.means[path, s], prec, self.start_period + s, self.diagonal)))
        return out


def _check_inputs(rates, post: GaussianPosterior, cfg: ObjectiveConfig):
    rates = as_vector(rates, "rates", size=cfg.horizon)
    if cfg.user_sample.shape[1] != post.d:
        raise InputError(f"user sample has dimension {cfg.user_sample.shape[1]}, posterior has {post.d}")
    return rates


def _exclusive_info(rates, n):
    """``c_s = sum_{l<s} eps_l n_l`` for each period, shape (H,)."""
    en = rates * n
    return np.concatenate([[0.0], np.cumsum(en)[:-1]])


def covariance_path(post: GaussianPosterior, rates, cfg: ObjectiveConfig) -> np.ndarray:
    """Approximate covariances ``Sigma_bar_s`` for every remaining period.

    Returns (H, K, d) marginal variances when the posterior is diagonal, else
    (H, K, d, d) matrices.
    """
    rates = _check_inputs(rates, post, cfg)
    c = _exclusive_info(rates, cfg.batch_sizes)
    if post.diagonal:
        prec = post.precision[None] + c[:, None, None] * cfg.design.diag()[None, None, :]
        return 1.0 / prec
    prec = post.precision[None] + c[:, None, None, None] * cfg.design.dense()[None, None]
    return np.linalg.inv(prec)


def draw_noise(rng: np.random.Generator, cfg: ObjectiveConfig, K: int, d: int) -> np.ndarray:
    """Standard-normal draws, independent per path, period, item and coordinate."""
    return rng.standard_normal((cfg.n_paths, cfg.horizon, K, d))


def _gap(post: GaussianPosterior, cov_path, tau):
    """Variance gap ``Sigma_t - Sigma_bar_s + tau`` and its square root."""
    if post.diagonal:
        gap = post.covariance[None] - cov_path + tau
        if np.any(gap < 0):
            raise NumericalError("variance gap below -tau: covariance path is not monotone")
        return gap, np.sqrt(gap)
    cov_t = post.covariance
    d = post.d
    gap = cov_t[None] - cov_path + tau * np.eye(d)
    return gap, _psd_sqrt(gap, tau)


def _psd_sqrt(mats, tau):
    w, v = np.linalg.eigh(mats)
    if np.any(w < -tau):
        raise NumericalError("variance gap matrix has eigenvalue below -tau")
    w = np.clip(w, 0.0, None)
    return np.einsum("...ij,...j,...kj->...ik", v, np.sqrt(w), v)


def _sample_means(post, root, Z, diagonal):
    if diagonal:
        return post.mean + root * Z
    return post.mean + np.einsum("...kij,...kj->...ki", root, Z)


def sample_posterior_path(post: GaussianPosterior, rates, cfg: ObjectiveConfig, rng=None, noise=None) -> PosteriorPath:
    """Draw ``beta_s = beta_t + (Sigma_t - Sigma_bar_s + tau)^(1/2) Z_s`` for each period."""
    cov_path = covariance_path(post, rates, cfg)
    if noise is None:
        noise = draw_noise(np.random.default_rng(rng if rng is not None else cfg.seed), cfg, post.K, post.d)
    _, root = _gap(post, cov_path, cfg.tau)
    means = _sample_means(post, root[None], noise, post.diagonal)
    return PosteriorPath(cov_path, means, noise, post.period, post.diagonal)


def _greedy_values(X, beta):
    """Per-path, per-period ``mean_i max_a x_i.beta_{s,a}`` and the winning items."""
    scores = beta @ X.T  # (P, H, K, m)
    best = np.argmax(scores, axis=-2)
    top = np.take_along_axis(scores, best[..., None, :], axis=-2)[..., 0, :]
    return top.mean(axis=-1), best


def _uniform_value(X, post):
    return float(X.mean(axis=0) @ post.mean.mean(axis=0))


def _path_objective(rates, n, explore_value, greedy_value):
    """Per-path objective; ``n`` may be (H,) or (P, H)."""
    per_period = rates * explore_value + (1.0 - rates) * greedy_value
    return -(n * per_period).sum(axis=-1)


def _resolve_noise(rng, cfg, post, noise):
    if noise is not None:
        return noise
    rng = np.random.default_rng(rng if rng is not None else cfg.seed)
    return draw_noise(rng, cfg, post.K, post.d)


def objective_paths(rates, post: GaussianPosterior, cfg: ObjectiveConfig, rng=None, noise=None) -> np.ndarray:
    """Per-path objective values, shape (P,). Works in full and diagonal mode."""
    rates = _check_inputs(rates, post, cfg)
    noise = _resolve_noise(rng, cfg, post, noise)
    path = sample_posterior_path(post, rates, cfg, noise=noise)
    M, _ = _greedy_values(cfg.user_sample, path.means)
    return _path_objective(rates, cfg.batch_sizes, _uniform_value(cfg.user_sample, post), M)


def objective_value(rates, post: GaussianPosterior, cfg: ObjectiveConfig, rng=None, noise=None) -> float:
    """Monte-Carlo estimate of the objective averaged over ``cfg.n_paths`` paths."""
    return float(objective_paths(rates, post, cfg, rng, noise).mean())


def value_and_gradient(rates, post: GaussianPosterior, cfg: ObjectiveConfig, rng=None, noise=None,
                       gap_floor=0.0):
    """Objective estimate and its exact gradient on common random numbers.

    Only the diagonal approximation is differentiated. The max over items uses
    the argmax subgradient with ties to the lowest index.

    The pathwise derivative of ``(Sigma_t - Sigma_bar_s)^(1/2)`` is unbounded as
    the gap closes, so a schedule sitting at ``eps = 0`` yields gradient draws
    of order ``tau^(-1/2)`` with random sign. ``gap_floor > 0`` replaces the gap
    in that denominator by ``max(gap, gap_floor * Sigma_t)``, trading a bias
    toward zero near the boundary for bounded variance. ``gap_floor = 0`` gives
    the exact derivative of the sampled objective.

    Returns
    -------
    value : float
    grad : ndarray of shape (H,)
    """
    rates = _check_inputs(rates, post, cfg)
    if not post.diagonal:
        raise InputError("gradients are only available for diagonal posteriors")
    noise = _resolve_noise(rng, cfg, post, noise)
    X, n, tau = cfg.user_sample, cfg.batch_sizes, cfg.tau
    info = cfg.design.diag()

    vbar = covariance_path(post, rates, cfg)
    _, root = _gap(post, vbar, tau)
    beta = post.mean + root[None] * noise
    M, best = _greedy_values(X, beta)
    u = _uniform_value(X, post)
    values = _path_objective(rates, n, u, M)

    # d beta_{s,a,j} / d eps_l = n_l * W_{s,a,j} for every l < s
    denom = np.sqrt(np.maximum(root**2, gap_floor * post.variances())) if gap_floor > 0 else root
    W = noise * (vbar**2 * info / (2.0 * denom))[None]
    G = np.take_along_axis(W @ X.T, best[..., None, :], axis=-2)[..., 0, :].mean(axis=-1)
    weighted = n * (1.0 - rates) * G
    # downstream_l = sum_{s>l} weighted_s
    downstream = np.cumsum(weighted[:, ::-1], axis=1)[:, ::-1]
    downstream = np.concatenate([downstream[:, 1:], np.zeros((len(weighted), 1))], axis=1)
    grad = n * (M - u) - n * downstream
    return float(values.mean()), grad.mean(axis=0)


def objective_gradient(rates, post: GaussianPosterior, cfg: ObjectiveConfig, rng=None, noise=None) -> np.ndarray:
    return value_and_gradient(rates, post, cfg, rng, noise)[1]


def _stochastic_covariances(rates, post, X_pool, n_paths_sizes, noise_std, rng):
    """Covariances driven by sampled empirical designs, shape (P, H, K, d[, d]).

    For every path and period ``l``, ``n_l`` users are drawn from the pool with
    replacement, each joins the explore group w.p. ``eps_l`` and is assigned a
    uniform item.
    """
    P, H = n_paths_sizes.shape
    K, d = post.K, post.d
    out = np.empty((P, H) + post.precision.shape)
    for p in range(P):
        prec = post.precision.copy()
        for s in range(H):
            out[p, s] = 1.0 / prec if post.diagonal else np.linalg.inv(prec)
            n_l = int(n_paths_sizes[p, s])
            if s == H - 1 or n_l == 0:
                continue
            explore = rng.random(n_l) < rates[s]
            m = int(explore.sum())
            if m == 0:
                continue
            Xs = X_pool[rng.integers(len(X_pool), size=m)]
            A = rng.integers(K, size=m)
            onehot = np.zeros((m, K))
            onehot[np.arange(m), A] = 1.0
            if post.diagonal:
                prec = prec + onehot.T @ (Xs * Xs) / noise_std**2
            else:
                prec = prec + np.einsum("ik,ij,il->kjl", onehot, Xs, Xs) / noise_std**2
    return out


def _sizes_per_path(batch_sizes, P, H):
    n = np.asarray(batch_sizes, dtype=np.float64)
    if n.ndim == 1:
        n = np.broadcast_to(n, (P, H))
    if n.shape != (P, H):
        raise InputError(f"batch sizes must have shape ({H},) or ({P}, {H}), got {n.shape}")
    return n


def stochastic_objective_paths(rates, post, cfg, rng=None, noise=None, pool=None, batch_sizes=None):
    """Per-path objective with exact (sampled) empirical designs instead of the
    deterministic population path.

    ``pool`` defaults to the config's user sample; ``batch_sizes`` may be a
    (P, H) array of realized sizes per path.
    """
    rates = _check_inputs(rates, post, cfg)
    rng = np.random.default_rng(rng if rng is not None else cfg.seed)
    noise = _resolve_noise(rng, cfg, post, noise)
    P, H = noise.shape[:2]
    pool = cfg.user_sample if pool is None else as_matrix(pool, "pool", n_features=post.d)
    n = _sizes_per_path(cfg.batch_sizes if batch_sizes is None else batch_sizes, P, H)
    covs = _stochastic_covariances(rates, post, pool, n, cfg.noise_std, rng)
    _, root = _gap(post, covs, cfg.tau)
    beta = _sample_means(post, root, noise, post.diagonal)
    M, _ = _greedy_values(cfg.user_sample, beta)
    return _path_objective(rates, n, _uniform_value(cfg.user_sample, post), M)


def bayesian_regret(rates, post, cfg, rng=None, stochastic_design=False, pool=None, batch_sizes=None):
    """Monte-Carlo estimate of expected cumulative Bayesian regret.

    Adds the eps-free oracle term ``n E[max_a x.theta_a]`` (with ``theta``
    drawn from ``post``) to the objective. ``batch_sizes`` may be (P, H) to
    average over random arrivals.

    Returns
    -------
    mean, stderr : float
    """
    rng = np.random.default_rng(rng if rng is not None else cfg.seed)
    rates = _check_inputs(rates, post, cfg)
    P, H = cfg.n_paths, cfg.horizon
    n = _sizes_per_path(cfg.batch_sizes if batch_sizes is None else batch_sizes, P, H)
    noise = draw_noise(rng, cfg, post.K, post.d)
    if stochastic_design:
        J = stochastic_objective_paths(rates, post, cfg, rng, noise, pool, n)
    else:
        J = np.array([
            objective_paths(rates, post, cfg.with_horizon(n[p]), noise=noise[p : p + 1])[0] for p in range(P)
        ]) if batch_sizes is not None else objective_paths(rates, post, cfg, noise=noise)
    X = cfg.user_sample
    theta = np.stack([post.sample(rng) for _ in range(P)])
    oracle = np.einsum("id,pkd->pik", X, theta).max(axis=-1).mean(axis=-1)
    regret = n.sum(axis=1) * oracle + J
    return float(regret.mean()), float(regret.std(ddof=1) / np.sqrt(P)) if P > 1 else float("nan")
