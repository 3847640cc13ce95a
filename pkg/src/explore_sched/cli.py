"""Command-line interface.

    explore-sched run --config exp.yaml [--seed S] [--workers W] [--out DIR]
    explore-sched solve [--config exp.yaml] [--strategy planner]
    explore-sched simulate --strategy mpc [--config exp.yaml] [--out DIR]
    explore-sched check [--seed S]

The output directory is ``--out`` if given, else ``$EXPLORE_SCHED_OUT``, else
the config's ``out`` key.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .environment import episode_context, run_episode
from .exceptions import InputError, NumericalError
from .harness.checks import run_checks
from .harness.config import OPTIMIZING, ExperimentConfig, dump_config, load_config
from .harness.reports import emit_reports, fmt
from .harness.sweep import build_replication, env_cells, run_sweep, strategy_params
from .policies import STRATEGIES, make_strategy

OUT_ENV = "EXPLORE_SCHED_OUT"


def _seed(text):
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _positive(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="explore-sched", description="Exploration schedules for batched bandits.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p, strategy=False):
        p.add_argument("--config", help="flat YAML experiment config (defaults if omitted)")
        p.add_argument("--seed", type=_seed, help="master seed, overrides the config")
        p.add_argument("--out", help=f"output directory (overrides ${OUT_ENV} and the config)")
        if strategy:
            p.add_argument("--strategy", help="strategy name")

    p = sub.add_parser("run", help="run the configured sweep and write CSV reports")
    common(p)
    p.add_argument("--workers", type=_positive, help="worker processes (results do not depend on it)")
    common(sub.add_parser("solve", help="one Planner solve under the prior; prints the schedule"), strategy=True)
    common(sub.add_parser("simulate", help="one episode with one strategy; writes its interaction log"), strategy=True)
    p = sub.add_parser("check", help="run the invariant suite")
    p.add_argument("--seed", type=_seed, default=0)
    return parser


def resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if getattr(args, "workers", None) is not None:
        changes["workers"] = args.workers
    out = args.out or os.environ.get(OUT_ENV)
    if out:
        changes["out"] = out
    return cfg.replace(**changes) if changes else cfg


def cmd_run(args) -> int:
    cfg = resolve_config(args)
    print("# resolved config")
    print(dump_config(cfg), end="")
    out = Path(cfg.out)
    result = run_sweep(cfg)
    paths = emit_reports(result, out)
    (out / "config.yaml").write_text(dump_config(cfg))
    failures = sum(len(c.failures) for c in result.cells)
    print(f"\n{'strategy':<22}{'K':>4}{'N':>7}  {'pattern':<11}{'mean_regret':>12}{'se':>12}")
    for strategy, K, N, pattern, mean, se in result.table():
        print(f"{strategy:<22}{K:>4}{N:>7}  {pattern:<11}{fmt(mean):>12}{fmt(se):>12}")
    print("\nwrote " + ", ".join(str(p) for p in paths))
    if failures:
        print(f"warning: {failures} replication(s) failed; see the log", file=sys.stderr)
    return 0


def _first_cell(cfg):
    cell = env_cells(cfg)[0]
    return cell, build_replication(cfg, cell, 0)


def cmd_solve(args) -> int:
    cfg = resolve_config(args)
    kind = args.strategy or "planner"
    if kind not in OPTIMIZING:
        raise InputError(f"solve needs one of {list(OPTIMIZING)}, got {kind!r}")
    cell, (instance, plan, seq) = _first_cell(cfg)
    # MPC's first solve is the Planner's solve
    params = strategy_params(cfg, "planner", cfg.strategy_params.get(kind, {}), cell.K, trace=False)
    planner = make_strategy("planner", **params)
    planner.start(episode_context(instance, plan, seq, cfg.user_sample))
    print(f"K={cell.K} N={cell.N} pattern={cell.pattern} d={cfg.d}")
    print("forecast n_t: " + " ".join(fmt(n) for n in planner.forecast_))
    print("schedule:     " + " ".join(f"{r:.4f}" for r in planner.schedule_))
    print(f"objective:    {fmt(planner.objective_)}")
    return 0


def cmd_simulate(args) -> int:
    cfg = resolve_config(args)
    kind = args.strategy
    if kind is None:
        raise InputError("simulate needs --strategy")
    if kind not in STRATEGIES or kind == "fixed":
        raise InputError(f"unknown strategy {kind!r}")
    cell, (instance, plan, seq) = _first_cell(cfg)
    params = strategy_params(cfg, kind, cfg.strategy_params.get(kind, {}), cell.K, trace=False)
    episode = run_episode(instance, make_strategy(kind, **params), plan, seq, cfg.user_sample, keep_log=True)
    print(f"K={cell.K} N={cell.N} pattern={cell.pattern} strategy={kind}")
    print(f"{'period':>6}{'n_t':>7}{'eps_t':>9}{'regret':>12}")
    for t, (n, rate, reg) in enumerate(zip(plan.sizes, episode.rates, episode.period_regret), start=1):
        shown = "-" if rate is None else f"{rate:.4f}"
        print(f"{t:>6}{n:>7}{shown:>9}{fmt(reg):>12}")
    print(f"cumulative regret {fmt(episode.cumulative_regret)}; per user {fmt(episode.mean_regret)}")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    log = out / f"episode_{kind}.csv"
    episode.write_log(log)
    print(f"wrote {log}")
    return 0


def cmd_check(args) -> int:
    return 0 if run_checks(args.seed) else 1


COMMANDS = {"run": cmd_run, "solve": cmd_solve, "simulate": cmd_simulate, "check": cmd_check}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = [logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.verb](args)
    except (InputError, NumericalError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
