"""Projected stochastic gradient descent over exploration schedules."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import as_matrix, as_vector
from .exceptions import InputError, NumericalError
from .objective import ExplorationSchedule, ObjectiveConfig, objective_value, value_and_gradient
from .posterior import GaussianPosterior, make_prior

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverConfig:
    """Settings for :func:`sgd_solve`.

    ``step_size`` is applied to the gradient of the objective divided by the
    mean forecast batch size, which makes each coordinate a per-user quantity
    of order one, so it does not need retuning when ``N`` or ``H`` changes.
    After ``n_steps / 2`` iterations the step decays as ``1/sqrt(k)``.
    ``gap_floor`` bounds the gradient variance at ``eps = 0``; see
    :func:`~explore_sched.objective.value_and_gradient`.
    ``pin_terminal`` fixes the last rate at ``eps_min``. Its derivative is
    nonnegative on every path, so that is always optimal, and pinning settles
    the flat case (zero prior mean, one period) that SGD would leave at ``init``.
    """

    n_steps: int = 300
    step_size: float = 0.05
    eps_min: float = 0.0
    eps_max: float = 1.0
    init: float | tuple = 0.5
    decay: bool = True
    momentum: float = 0.0
    normalize: bool = True
    eval_paths: int = 200
    gap_floor: float = 1e-3
    pin_terminal: bool = True
    record_trace: bool = False
    seed: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.eps_min <= self.eps_max <= 1.0:
            raise InputError(f"need 0 <= eps_min <= eps_max <= 1, got [{self.eps_min}, {self.eps_max}]")
        if self.n_steps < 1:
            raise InputError("n_steps must be >= 1")
        if self.step_size < 0:
            raise InputError("step_size must be >= 0")
        if self.gap_floor < 0:
            raise InputError("gap_floor must be >= 0")
        if not 0.0 <= self.momentum < 1.0:
            raise InputError("momentum must lie in [0, 1)")


@dataclass
class SolveResult:
    schedule: ExplorationSchedule
    objective: float
    trace: list = field(default_factory=list)


def project(v, eps_min: float = 0.0, eps_max: float = 1.0) -> np.ndarray:
    """Euclidean projection onto the box ``[eps_min, eps_max]^H``."""
    return np.clip(np.asarray(v, dtype=np.float64), eps_min, eps_max)


def _initial_rates(init, H, solver):
    if np.ndim(init) == 0:
        rates = np.full(H, float(init))
    else:
        rates = as_vector(init, "init", size=H)
    return _feasible(rates, solver)


def _feasible(rates, solver):
    rates = project(rates, solver.eps_min, solver.eps_max)
    if solver.pin_terminal and len(rates):
        rates[-1] = solver.eps_min
    return rates


def _step_size(k, solver):
    half = solver.n_steps // 2
    if solver.decay and half > 0 and k >= half:
        return solver.step_size / np.sqrt(k - half + 1)
    return solver.step_size


def sgd_solve(post: GaussianPosterior, cfg: ObjectiveConfig, solver: SolverConfig, init=None) -> SolveResult:
    """Minimize the objective over ``[eps_min, eps_max]^H`` by projected SGD.

    Each of the ``n_steps`` iterations draws fresh noise, evaluates value and
    gradient on those common draws and takes ``eps <- Proj(eps - alpha * grad)``.
    The returned objective is re-evaluated on an independent stream with
    ``solver.eval_paths`` paths.
    """
    post = post.to_diagonal()
    H = cfg.horizon
    step_seq, eval_seq = np.random.SeedSequence(solver.seed).spawn(2)
    rng = np.random.default_rng(step_seq)
    rates = _initial_rates(solver.init if init is None else init, H, solver)
    scale = H / max(cfg.batch_sizes.sum(), 1.0) if solver.normalize else 1.0
    velocity = np.zeros(H)
    trace = []
    for k in range(solver.n_steps):
        value, grad = value_and_gradient(rates, post, cfg, rng, gap_floor=solver.gap_floor)
        bad = np.flatnonzero(~np.isfinite(grad))
        if bad.size:
            raise NumericalError(f"non-finite gradient at step {k}, coordinate {int(bad[0])}")
        if solver.record_trace:
            trace.append((k, value, rates.copy()))
        velocity = solver.momentum * velocity + grad * scale
        rates = _feasible(rates - _step_size(k, solver) * velocity, solver)
    held_out = ObjectiveConfig(
        cfg.user_sample, cfg.batch_sizes, cfg.design, solver.eval_paths, cfg.tau, cfg.noise_std
    )
    final = objective_value(rates, post, held_out, np.random.default_rng(eval_seq))
    if solver.record_trace:
        trace.append((solver.n_steps, final, rates.copy()))
    schedule = ExplorationSchedule(rates, post.period, solver.eps_min, solver.eps_max)
    logger.debug("solved period %d: rates=%s objective=%.6g", post.period, np.round(rates, 4), final)
    return SolveResult(schedule, final, trace)


class ExplorationPlanner(BaseEstimator):
    """Estimator wrapper around :func:`sgd_solve`.

    ``fit`` takes a sample of user embeddings and forecast batch sizes and
    learns the exploration schedule under a Gaussian prior (or a supplied
    posterior).

    Attributes
    ----------
    schedule_ : ndarray of shape (H,)
    objective_ : float
    trace_ : list of (step, objective, rates)
    """

    def __init__(
        self,
        n_items=2,
        n_steps=300,
        step_size=0.05,
        eps_min=0.0,
        eps_max=1.0,
        init=0.5,
        n_paths=1,
        tau=1e-12,
        momentum=0.0,
        prior_mean=0.0,
        prior_variance=1.0,
        noise_std=1.0,
        record_trace=False,
        random_state=None,
    ):
        self.n_items = n_items
        self.n_steps = n_steps
        self.step_size = step_size
        self.eps_min = eps_min
        self.eps_max = eps_max
        self.init = init
        self.n_paths = n_paths
        self.tau = tau
        self.momentum = momentum
        self.prior_mean = prior_mean
        self.prior_variance = prior_variance
        self.noise_std = noise_std
        self.record_trace = record_trace
        self.random_state = random_state

    def solver_config(self) -> SolverConfig:
        return SolverConfig(
            n_steps=self.n_steps,
            step_size=self.step_size,
            eps_min=self.eps_min,
            eps_max=self.eps_max,
            init=self.init,
            momentum=self.momentum,
            record_trace=self.record_trace,
            seed=self.random_state,
        )

    def fit(self, X, batch_sizes, posterior: GaussianPosterior | None = None):
        X = as_matrix(X, "X")
        if posterior is None:
            posterior = make_prior(self.n_items, X.shape[1], self.prior_mean, self.prior_variance, diagonal=True)
        cfg = ObjectiveConfig.from_users(
            X, batch_sizes, posterior.K, self.noise_std, n_paths=self.n_paths, tau=self.tau
        )
        result = sgd_solve(posterior, cfg, self.solver_config())
        self.n_features_in_ = X.shape[1]
        self.schedule_ = result.schedule.rates
        self.objective_ = result.objective
        self.trace_ = result.trace
        return self
