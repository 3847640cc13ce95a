"""Optimized exploration schedules for batched linear contextual bandits."""

import logging

from .environment import (
    ARRIVAL_PATTERNS,
    BatchPlan,
    EpisodeResult,
    RegretReport,
    aggregate,
    arrival_pattern,
    noisy_forecast,
    run_episode,
    sample_batch_sizes,
    synth_instance,
)
from .exceptions import InputError, NumericalError
from .model import (
    BanditInstance,
    InteractionBatch,
    ItemEmbeddings,
    expected_reward,
    load_embeddings,
    oracle_value,
    per_user_regret,
    sample_reward,
    save_embeddings,
)
from .objective import (
    ExplorationSchedule,
    ObjectiveConfig,
    bayesian_regret,
    covariance_path,
    objective_gradient,
    objective_value,
    sample_posterior_path,
    value_and_gradient,
)
from .optimizer import ExplorationPlanner, SolverConfig, SolveResult, project, sgd_solve
from .policies import (
    MPC,
    STRATEGIES,
    BatchedTS,
    EpsGreedy,
    FixedSchedule,
    Planner,
    RidgeGreedy,
    SimpleETC,
    TheoryETC,
    batched_ts_assign,
    etc_rate,
    make_strategy,
    ridge_fit,
    theory_etc_budget,
    uniform_policy_assign,
)
from .posterior import (
    DesignMatrix,
    GaussianPosterior,
    empirical_design,
    make_prior,
    population_design,
    posterior_predictive_mean,
    posterior_update,
)

logging.getLogger(__name__).addHandler(logging.NullHandler())

__version__ = "0.1.0"
