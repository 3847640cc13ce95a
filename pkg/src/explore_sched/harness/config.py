"""Experiment configuration.

A config file is a flat YAML mapping. Plain keys set experiment-wide values;
dotted keys address one strategy::

    K: [5, 10]
    N: [2000]
    patterns: [increasing, spike]
    strategies: [eps_greedy, simple_etc, planner, mpc]
    replications: 200
    seed: 0
    eps_min: 0.05
    strategy.planner.n_steps: 300
    sweep.eps_greedy: [0.05, 0.01, 0.1, 0.5, 1.0]

Every key is optional; ``sweep.<kind>: null`` disables a sweep.
:func:`dump_config` renders the fully resolved config in the same layout, so
a run can be audited and replayed from its echo.
"""

from __future__ import annotations

import inspect
from dataclasses import dataclass, field, fields

import numpy as np
import yaml

from ..environment import ARRIVAL_PATTERNS, check_fractions
from ..exceptions import InputError
from ..policies import STRATEGIES

# constants swept for the fixed-rate baselines; order kept as listed
DEFAULT_GRID = (0.05, 0.01, 0.1, 0.5, 1.0)
SWEPT_PARAM = {"eps_greedy": "eps", "theory_etc": "c"}
OPTIMIZING = ("planner", "mpc")
# set by the harness itself, not from the config file
RESERVED_PARAMS = ("eps_min", "noisy_forecast", "concentration", "record_trace")


@dataclass(frozen=True)
class ExperimentConfig:
    """Resolved experiment configuration.

    ``fractions`` replaces ``patterns`` with one explicit arrival vector,
    reported under the pattern name ``custom``. ``forecast_concentration``
    switches Planner and MPC to Dirichlet-noised forecasts (``"K"`` means the
    item count of the cell). ``embeddings`` loads items and users from a file
    instead of synthesizing an instance per replication.
    """

    K: tuple = (5,)
    N: tuple = (2000,)
    patterns: tuple = ("increasing", "spike")
    fractions: tuple | None = None
    d: int = 16
    pool_size: int = 2000
    prior_mean: float = 0.0
    prior_variance: float = 1.0
    noise_std: float = 1.0
    norm_bound: float = 4.0
    embeddings: str | None = None
    forecast_concentration: float | str | None = None
    user_sample: int = 100
    strategies: tuple = ("eps_greedy", "theory_etc", "simple_etc", "planner", "mpc", "batched_ts")
    strategy_params: dict = field(default_factory=dict)
    sweeps: dict = field(default_factory=lambda: {k: DEFAULT_GRID for k in SWEPT_PARAM})
    replications: int = 200
    seed: int = 0
    eps_min: float = 0.0
    out: str = "results"
    workers: int = 1

    def __post_init__(self):
        _validate(self)

    @property
    def cell_patterns(self) -> tuple:
        return ("custom",) if self.fractions is not None else self.patterns

    def pattern_fractions(self, pattern: str) -> np.ndarray:
        if pattern == "custom":
            return np.asarray(self.fractions, dtype=np.float64)
        return np.asarray(ARRIVAL_PATTERNS[pattern], dtype=np.float64)

    def variants(self):
        """``(label, kind, params, constant)`` for every strategy cell.

        Swept kinds expand to one variant per grid constant, labelled
        ``kind=<constant>``.
        """
        out = []
        for kind in self.strategies:
            params = dict(self.strategy_params.get(kind, {}))
            if kind in self.sweeps:
                for c in self.sweeps[kind]:
                    out.append((f"{kind}={c:g}", kind, {**params, SWEPT_PARAM[kind]: float(c)}, float(c)))
            else:
                out.append((kind, kind, params, None))
        return out

    def replace(self, **changes) -> "ExperimentConfig":
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(changes)
        return ExperimentConfig(**values)


def _strategy_keys(kind):
    return set(inspect.signature(STRATEGIES[kind].__init__).parameters) - {"self"}


def _fail(key, msg):
    raise InputError(f"config key {key!r}: {msg}")


def _validate(cfg: ExperimentConfig):
    for key in ("K", "N"):
        vals = getattr(cfg, key)
        if not vals or any(int(v) != v or v < 1 for v in vals):
            _fail(key, f"expected a non-empty list of positive integers, got {list(vals)}")
    for key in ("d", "pool_size", "user_sample", "replications", "workers"):
        if getattr(cfg, key) < 1:
            _fail(key, f"must be >= 1, got {getattr(cfg, key)}")
    for key in ("prior_variance", "noise_std", "norm_bound"):
        if not getattr(cfg, key) > 0:
            _fail(key, f"must be > 0, got {getattr(cfg, key)}")
    if not 0.0 <= cfg.eps_min <= 1.0:
        _fail("eps_min", f"must lie in [0, 1], got {cfg.eps_min}")
    if cfg.seed < 0:
        _fail("seed", "must be a non-negative integer")
    if cfg.fractions is not None:
        try:
            check_fractions(cfg.fractions)
        except InputError as exc:
            _fail("fractions", str(exc))
    else:
        for p in cfg.patterns:
            if p not in ARRIVAL_PATTERNS:
                _fail("patterns", f"unknown arrival pattern {p!r}; known: {sorted(ARRIVAL_PATTERNS)}")
    conc = cfg.forecast_concentration
    if conc is not None and conc != "K" and not (isinstance(conc, (int, float)) and conc > 0):
        _fail("forecast_concentration", f"expected a positive number, 'K' or null, got {conc!r}")
    if not cfg.strategies:
        _fail("strategies", "at least one strategy is required")
    for kind in cfg.strategies:
        if kind not in STRATEGIES or kind == "fixed":
            _fail("strategies", f"unknown strategy {kind!r}; known: {sorted(set(STRATEGIES) - {'fixed'})}")
    for kind, params in cfg.strategy_params.items():
        if kind not in STRATEGIES:
            _fail(f"strategy.{kind}", "unknown strategy")
        allowed = _strategy_keys(kind) - set(RESERVED_PARAMS)
        for name in params:
            if name not in allowed:
                _fail(f"strategy.{kind}.{name}", f"unknown parameter; allowed: {sorted(allowed)}")
    for kind, grid in cfg.sweeps.items():
        if kind not in SWEPT_PARAM:
            _fail(f"sweep.{kind}", f"only {sorted(SWEPT_PARAM)} can be swept")
        if not grid:
            _fail(f"sweep.{kind}", "grid must be non-empty")
        if kind == "eps_greedy" and any(not 0.0 <= c <= 1.0 for c in grid):
            _fail("sweep.eps_greedy", "rates must lie in [0, 1]")
        if kind == "theory_etc" and any(c <= 0 for c in grid):
            _fail("sweep.theory_etc", "constants must be > 0")


_LIST_KEYS = ("K", "N", "patterns", "strategies")
_SCALAR_KEYS = {f.name for f in fields(ExperimentConfig)} - set(_LIST_KEYS) - {"strategy_params", "sweeps"}


def _as_list(key, value):
    if isinstance(value, (list, tuple)):
        return tuple(value)
    if value is None:
        _fail(key, "must not be null")
    return (value,)


def config_from_mapping(raw: dict) -> ExperimentConfig:
    """Build a config from a flat mapping, rejecting unknown keys."""
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise InputError("config must be a mapping of flat keys")
    kwargs, params, sweeps = {}, {}, {}
    for key, value in raw.items():
        key = str(key)
        if key.startswith("strategy."):
            parts = key.split(".")
            if len(parts) != 3:
                _fail(key, "expected strategy.<kind>.<parameter>")
            params.setdefault(parts[1], {})[parts[2]] = value
        elif key.startswith("sweep."):
            kind = key.split(".", 1)[1]
            sweeps[kind] = None if value is None else tuple(float(c) for c in _as_list(key, value))
        elif key in _LIST_KEYS:
            kwargs[key] = tuple(v.lower() if isinstance(v, str) else v for v in _as_list(key, value))
        elif key == "fractions":
            kwargs[key] = None if value is None else tuple(float(v) for v in _as_list(key, value))
        elif key in _SCALAR_KEYS:
            kwargs[key] = value
        else:
            _fail(key, "unknown key")
    kwargs["strategy_params"] = params
    if sweeps:
        # a null grid turns the sweep off so strategy.<kind>.<param> applies
        base = {k: DEFAULT_GRID for k in SWEPT_PARAM}
        base.update(sweeps)
        kwargs["sweeps"] = {k: v for k, v in base.items() if v is not None}
    try:
        return ExperimentConfig(**kwargs)
    except TypeError as exc:
        raise InputError(f"invalid config value: {exc}") from None


def load_config(path) -> ExperimentConfig:
    """Parse and validate a config file; missing keys take their defaults."""
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except FileNotFoundError:
        raise InputError(f"config file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise InputError(f"config file {path} is not valid YAML: {exc}") from None
    return config_from_mapping(raw)


def config_to_mapping(cfg: ExperimentConfig) -> dict:
    """Flat mapping with every resolved value; inverse of :func:`config_from_mapping`."""
    out = {}
    for f in fields(cfg):
        if f.name in ("strategy_params", "sweeps"):
            continue
        value = getattr(cfg, f.name)
        out[f.name] = list(value) if isinstance(value, tuple) else value
    for kind in sorted(cfg.strategy_params):
        for name in sorted(cfg.strategy_params[kind]):
            out[f"strategy.{kind}.{name}"] = cfg.strategy_params[kind][name]
    for kind in sorted(SWEPT_PARAM):
        out[f"sweep.{kind}"] = list(cfg.sweeps[kind]) if kind in cfg.sweeps else None
    return out


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(config_to_mapping(cfg), sort_keys=False, default_flow_style=None)
