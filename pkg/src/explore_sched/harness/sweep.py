"""Sweep orchestration over strategies x K x N x arrival pattern.

Replication ``r`` of environment cell ``e`` (one ``(K, N, pattern)`` triple)
is seeded by ``SeedSequence(master, spawn_key=(e, r))``. Every strategy in
that cell sees the same instance, arrivals, users and reward noise, and the
worker count never changes any number.
"""

from __future__ import annotations

import functools
import itertools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..environment import _INSTANCE, _SIZES, BatchPlan, run_episode, stream, synth_instance
from ..model import load_embeddings
from ..policies import make_strategy
from .config import OPTIMIZING, SWEPT_PARAM, ExperimentConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EnvCell:
    index: int
    K: int
    N: int
    pattern: str


@dataclass
class TaskResult:
    label: str
    env: int
    replication: int
    value: float = math.nan
    rates: list = field(default_factory=list)
    trace: list = field(default_factory=list)
    error: str | None = None


@dataclass
class CellResult:
    """Aggregate over replications for one strategy variant in one environment cell.

    ``values`` holds each replication's cumulative regret divided by ``N``;
    ``mean_regret`` and ``se`` are their mean and standard error.
    """

    strategy: str
    kind: str
    constant: float | None
    K: int
    N: int
    pattern: str
    values: np.ndarray
    failures: list = field(default_factory=list)
    schedules: list = field(default_factory=list)
    trace: list = field(default_factory=list)

    @property
    def replications(self) -> int:
        return len(self.values)

    @property
    def mean_regret(self) -> float:
        return float(self.values.mean()) if len(self.values) else math.nan

    @property
    def se(self) -> float:
        r = len(self.values)
        return float(self.values.std(ddof=1) / math.sqrt(r)) if r > 1 else math.nan

    @property
    def key(self):
        return (self.strategy, self.K, self.N, self.pattern)


@dataclass
class SweepResult:
    """All cells of a sweep plus the best constant of every swept strategy.

    ``best`` maps ``(kind, K, N, pattern)`` to the label of the variant with
    the lowest mean regret (first in grid order on ties).
    """

    cells: list = field(default_factory=list)
    best: dict = field(default_factory=dict)

    def cell(self, strategy, K, N, pattern) -> CellResult:
        for c in self.cells:
            if c.key == (strategy, K, N, pattern):
                return c
        raise KeyError((strategy, K, N, pattern))

    def table(self):
        """Rows ``(strategy, K, N, pattern, mean_regret, se)``.

        A swept strategy contributes one row per constant and a row under its
        bare kind carrying the best constant's numbers.
        """
        rows = []
        for c in self.cells:
            rows.append((c.strategy, c.K, c.N, c.pattern, c.mean_regret, c.se))
            if c.constant is not None and self.best.get((c.kind, c.K, c.N, c.pattern)) == c.strategy:
                rows.append((c.kind, c.K, c.N, c.pattern, c.mean_regret, c.se))
        return rows


def env_cells(cfg: ExperimentConfig):
    grid = itertools.product(cfg.K, cfg.N, cfg.cell_patterns)
    return [EnvCell(i, int(K), int(N), p) for i, (K, N, p) in enumerate(grid)]


def replication_seed(master: int, env: int, rep: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(master, spawn_key=(env, rep))


@functools.lru_cache(maxsize=4)
def _file_instance(path, noise_std, norm_bound):
    return load_embeddings(path, noise_std, norm_bound)


def build_replication(cfg: ExperimentConfig, cell: EnvCell, rep: int):
    """Instance, batch plan and seed for one replication of a cell."""
    seq = replication_seed(cfg.seed, cell.index, rep)
    if cfg.embeddings is not None:
        instance = _file_instance(cfg.embeddings, cfg.noise_std, cfg.norm_bound)
        if instance.K != cell.K or instance.d != cfg.d:
            raise ValueError(f"embedding file has K={instance.K}, d={instance.d}; config asks K={cell.K}, d={cfg.d}")
    else:
        instance = synth_instance(
            cell.K, cfg.d, cfg.pool_size, stream(seq, 0, _INSTANCE),
            prior_mean=cfg.prior_mean, prior_variance=cfg.prior_variance,
            noise_std=cfg.noise_std, norm_bound=cfg.norm_bound,
        )
    plan = BatchPlan.sample(cell.N, cfg.pattern_fractions(cell.pattern), stream(seq, 0, _SIZES))
    return instance, plan, seq


def strategy_params(cfg: ExperimentConfig, kind: str, params: dict, K: int, trace: bool) -> dict:
    """Config parameters plus the harness-controlled ones for ``kind``."""
    out = dict(params)
    if kind != "batched_ts":
        out["eps_min"] = cfg.eps_min
    if kind in OPTIMIZING:
        out.setdefault("prior_variance", cfg.prior_variance)
        out["record_trace"] = trace
        if cfg.forecast_concentration is not None:
            out["noisy_forecast"] = True
            conc = cfg.forecast_concentration
            out["concentration"] = float(K) if conc == "K" else float(conc)
    return out


def _flatten_trace(traces):
    rows = []
    for period, trace in traces:
        for step, value, rates in trace:
            rows.append((period, step, value, list(rates)))
    return rows


def run_task(cfg: ExperimentConfig, cell: EnvCell, variant, rep: int) -> TaskResult:
    """One replication of one strategy variant; failures are captured, not raised."""
    label, kind, params, _ = variant
    result = TaskResult(label, cell.index, rep)
    try:
        instance, plan, seq = build_replication(cfg, cell, rep)
        want_trace = kind in OPTIMIZING and rep == 0
        strategy = make_strategy(kind, **strategy_params(cfg, kind, params, cell.K, want_trace))
        episode = run_episode(instance, strategy, plan, seq, user_sample_size=cfg.user_sample)
        result.value = episode.cumulative_regret / cell.N
        if kind in OPTIMIZING:
            result.rates = [float(r) for r in episode.rates]
        if want_trace:
            result.trace = _flatten_trace(strategy.traces_)
    except Exception as exc:  # recorded per cell; the sweep goes on
        result.error = f"{type(exc).__name__}: {exc}"
        logger.warning("%s K=%d N=%d %s replication %d failed: %s",
                       label, cell.K, cell.N, cell.pattern, rep, result.error)
    return result


def _run(args):
    return run_task(*args)


def run_sweep(cfg: ExperimentConfig, workers: int | None = None) -> SweepResult:
    """Run every cell x replication and aggregate.

    Parameters
    ----------
    workers : int, optional
        Process count; defaults to ``cfg.workers``. Results do not depend on it.
    """
    workers = cfg.workers if workers is None else workers
    cells = env_cells(cfg)
    variants = cfg.variants()
    tasks = [(cfg, cell, v, r) for cell in cells for v in variants for r in range(cfg.replications)]
    logger.info("sweep: %d cells x %d variants x %d replications on %d worker(s)",
                len(cells), len(variants), cfg.replications, workers)
    if workers > 1:
        chunk = max(1, len(tasks) // (8 * workers))
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(_run, tasks, chunksize=chunk))
    else:
        outputs = [_run(t) for t in tasks]
    return aggregate_tasks(cfg, cells, variants, outputs)


def aggregate_tasks(cfg, cells, variants, outputs) -> SweepResult:
    by_key = {}
    for out in outputs:
        by_key.setdefault((out.env, out.label), []).append(out)
    result = SweepResult()
    for cell in cells:
        for label, kind, _, constant in variants:
            runs = sorted(by_key.get((cell.index, label), []), key=lambda o: o.replication)
            ok = [o for o in runs if o.error is None]
            result.cells.append(CellResult(
                strategy=label, kind=kind, constant=constant, K=cell.K, N=cell.N, pattern=cell.pattern,
                values=np.array([o.value for o in ok]),
                failures=[(o.replication, o.error) for o in runs if o.error is not None],
                schedules=[(o.replication, o.rates) for o in ok if o.rates],
                trace=[row for o in ok for row in o.trace],
            ))
        for kind in SWEPT_PARAM:
            swept = [c for c in result.cells
                     if c.kind == kind and c.constant is not None and (c.K, c.N, c.pattern) == (cell.K, cell.N, cell.pattern)]
            finite = [c for c in swept if not math.isnan(c.mean_regret)]
            if finite:
                best = min(finite, key=lambda c: c.mean_regret)
                result.best[(kind, cell.K, cell.N, cell.pattern)] = best.strategy
    return result
