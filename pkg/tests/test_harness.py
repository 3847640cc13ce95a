import csv
import math

import numpy as np
import pytest
import yaml

from explore_sched import InputError, save_embeddings, synth_instance
from explore_sched.cli import OUT_ENV, main
from explore_sched.environment import _USERS, stream
from explore_sched.harness import (
    DEFAULT_GRID,
    ExperimentConfig,
    SweepResult,
    build_replication,
    config_from_mapping,
    config_to_mapping,
    dump_config,
    emit_reports,
    env_cells,
    load_config,
    read_regret_table,
    read_schedules,
    run_sweep,
    same_value,
    strategy_params,
)
from explore_sched.policies import make_strategy

TINY = dict(K=[3], N=[300], d=4, pool_size=150, replications=3, seed=1)


def tiny(**kw):
    return config_from_mapping({**TINY, **kw})


class TestConfig:
    def test_defaults_echoed(self):
        echo = config_to_mapping(ExperimentConfig())
        assert echo["K"] == [5] and echo["N"] == [2000] and echo["d"] == 16
        assert echo["patterns"] == ["increasing", "spike"]
        assert echo["replications"] == 200 and echo["eps_min"] == 0.0
        assert echo["sweep.eps_greedy"] == list(DEFAULT_GRID) == echo["sweep.theory_etc"]

    def test_empty_file(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("")
        assert load_config(path) == ExperimentConfig()

    def test_round_trip(self, tmp_path):
        cfg = tiny(**{"strategy.planner.n_steps": 50, "sweep.theory_etc": None, "strategy.theory_etc.c": 0.3,
                      "forecast_concentration": "K"})
        path = tmp_path / "c.yaml"
        path.write_text(dump_config(cfg))
        assert load_config(path) == cfg

    def test_eps_min_reaches_every_rate_strategy(self):
        cfg = tiny(eps_min=0.05)
        for kind in ("eps_greedy", "theory_etc", "simple_etc", "planner", "mpc"):
            params = strategy_params(cfg, kind, {}, 3, trace=False)
            assert params["eps_min"] == 0.05
            assert make_strategy(kind, **params).eps_min == 0.05
        assert "eps_min" not in strategy_params(cfg, "batched_ts", {}, 3, trace=False)

    def test_concentration_k(self):
        params = strategy_params(tiny(forecast_concentration="K"), "mpc", {}, 7, trace=False)
        assert params["noisy_forecast"] and params["concentration"] == 7.0

    @pytest.mark.parametrize(
        "raw, key",
        [
            ({"replications": -1}, "replications"),
            ({"K": [0]}, "K"),
            ({"eps_min": 1.5}, "eps_min"),
            ({"patterns": ["weekly"]}, "patterns"),
            ({"strategies": ["ucb"]}, "strategies"),
            ({"bogus": 1}, "bogus"),
            ({"strategy.planner.eps_min": 0.1}, "strategy.planner.eps_min"),
            ({"strategy.mpc.nope": 1}, "strategy.mpc.nope"),
            ({"sweep.mpc": [0.1]}, "sweep.mpc"),
            ({"fractions": [0.5, 0.6]}, "fractions"),
            ({"forecast_concentration": -2}, "forecast_concentration"),
        ],
    )
    def test_rejects_with_key_path(self, raw, key):
        with pytest.raises(InputError, match=f"'{key}'"):
            config_from_mapping(raw)

    def test_bad_yaml(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("K: [1, 2\n")
        with pytest.raises(InputError):
            load_config(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(InputError):
            load_config(tmp_path / "missing.yaml")

    def test_variants(self):
        cfg = tiny(strategies=["eps_greedy", "planner"], **{"sweep.eps_greedy": [0.1, 0.5]})
        assert [v[0] for v in cfg.variants()] == ["eps_greedy=0.1", "eps_greedy=0.5", "planner"]

    def test_custom_fractions(self):
        cfg = tiny(fractions=[0.25, 0.75])
        assert cfg.cell_patterns == ("custom",)
        assert env_cells(cfg)[0].pattern == "custom"


def small_sweep(**kw):
    base = dict(strategies=["eps_greedy", "simple_etc", "planner", "mpc"], patterns=["spike"],
                **{"strategy.planner.n_steps": 30, "strategy.mpc.n_steps": 30, "sweep.eps_greedy": [0.05, 0.5]})
    base.update(kw)
    return tiny(**base)


class TestSweep:
    def test_deterministic(self):
        cfg = small_sweep()
        a, b = run_sweep(cfg), run_sweep(cfg)
        assert [(c.strategy, c.values.tolist()) for c in a.cells] == [(c.strategy, c.values.tolist()) for c in b.cells]

    def test_no_exploration_matches_first_item_regret(self):
        cfg = tiny(strategies=["eps_greedy"], **{"sweep.eps_greedy": [0.0]}, replications=2)
        res = run_sweep(cfg)
        cell = env_cells(cfg)[0]
        for rep, value in enumerate(res.cells[0].values):
            instance, plan, seq = build_replication(cfg, cell, rep)
            vals = instance.pool_values()
            total = 0.0
            for t, n_t in enumerate(plan.sizes, start=1):
                idx = stream(seq, t, _USERS).integers(len(instance.users), size=n_t)
                total += np.sum(vals[idx].max(axis=1) - vals[idx, 0])
            assert value == pytest.approx(total / cell.N, rel=1e-12)

    def test_planner_mpc_first_period_agree(self):
        res = run_sweep(small_sweep())
        planner = res.cell("planner", 3, 300, "spike").schedules
        mpc = res.cell("mpc", 3, 300, "spike").schedules
        assert len(planner) == 3
        for (_, p), (_, m) in zip(planner, mpc):
            assert p[0] == m[0]

    def test_se_shrinks_with_replications(self):
        base = tiny(strategies=["simple_etc"], patterns=["spike"])
        se = [run_sweep(base.replace(replications=r)).cells[0].se for r in (200, 400)]
        assert 0.6 <= se[1] / se[0] <= 0.8

    def test_best_constant(self):
        res = run_sweep(small_sweep())
        swept = [c for c in res.cells if c.kind == "eps_greedy"]
        best = res.best[("eps_greedy", 3, 300, "spike")]
        assert all(res.cell(best, 3, 300, "spike").mean_regret <= c.mean_regret for c in swept)
        rows = {r[0]: r for r in res.table()}
        assert rows["eps_greedy"][4:] == rows[best][4:]

    def test_single_replication_has_nan_se(self):
        res = run_sweep(tiny(strategies=["simple_etc"], replications=1, patterns=["spike"]))
        assert math.isnan(res.cells[0].se) and not math.isnan(res.cells[0].mean_regret)

    def test_failures_recorded(self, tmp_path):
        path = tmp_path / "emb.txt"
        save_embeddings(synth_instance(2, 4, 20, np.random.default_rng(0)), path)
        res = run_sweep(tiny(strategies=["simple_etc"], embeddings=str(path), patterns=["spike"]))
        cell = res.cells[0]
        assert cell.replications == 0 and len(cell.failures) == 3
        assert "K=2" in cell.failures[0][1]

    def test_embedding_file_used(self, tmp_path):
        path = tmp_path / "emb.txt"
        inst = synth_instance(3, 4, 20, np.random.default_rng(0))
        save_embeddings(inst, path)
        cfg = tiny(strategies=["simple_etc"], embeddings=str(path), patterns=["spike"])
        got, _, _ = build_replication(cfg, env_cells(cfg)[0], 0)
        assert np.array_equal(got.items.theta, inst.items.theta)


class TestReports:
    def test_empty(self, tmp_path):
        paths = emit_reports(SweepResult(), tmp_path)
        assert [p.read_text() for p in paths] == [
            "strategy,K,N,pattern,mean_regret,se\n",
            "strategy,K,N,pattern,replication\n",
            "strategy,K,N,pattern,replication,solve_period,step,objective\n",
        ]

    def test_round_trip_and_ragged_rows(self, tmp_path):
        cfg = small_sweep(patterns=["increasing", "spike"], replications=2)
        res = run_sweep(cfg)
        paths = emit_reports(res, tmp_path)
        table = read_regret_table(paths[0])
        assert len(table) == len(res.table())
        for got, want in zip(table, res.table()):
            assert got[:4] == want[:4]
            assert same_value(got[4], want[4]) and same_value(got[5], want[5])
        horizons = {"increasing": 6, "spike": 5}
        rows = read_schedules(paths[1])
        assert {r[0] for r in rows} == {"planner", "mpc"}
        assert all(len(r[5]) == horizons[r[3]] for r in rows)
        with open(paths[2]) as fh:
            conv = list(csv.reader(fh))[1:]
        assert conv and all(r[4] == "0" for r in conv)
        for r in conv:
            assert len(r) - 8 == horizons[r[3]] - int(r[5]) + 1

    def test_unwritable(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(OSError):
            emit_reports(SweepResult(), blocker / "sub")


class TestCli:
    def write(self, tmp_path, **kw):
        path = tmp_path / "cfg.yaml"
        raw = {**TINY, "strategies": ["simple_etc", "planner"], "patterns": ["spike"],
               "strategy.planner.n_steps": 20, "replications": 2, **kw}
        path.write_text(yaml.safe_dump(raw))
        return str(path)

    def test_run(self, tmp_path, capsys):
        out = tmp_path / "out"
        assert main(["run", "--config", self.write(tmp_path), "--out", str(out)]) == 0
        printed = capsys.readouterr().out
        assert "pool_size: 150" in printed and "simple_etc" in printed
        for name in ("regret_table.csv", "schedules.csv", "convergence.csv", "config.yaml"):
            assert (out / name).exists()
        assert load_config(out / "config.yaml").out == str(out)

    def test_env_override(self, tmp_path, monkeypatch):
        out = tmp_path / "from_env"
        monkeypatch.setenv(OUT_ENV, str(out))
        assert main(["run", "--config", self.write(tmp_path, out=str(tmp_path / "ignored"))]) == 0
        assert (out / "regret_table.csv").exists() and not (tmp_path / "ignored").exists()

    def test_seed_flag(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        main(["run", "--config", self.write(tmp_path), "--out", str(a), "--seed", "5"])
        main(["run", "--config", self.write(tmp_path), "--out", str(b), "--seed", "5"])
        assert (a / "regret_table.csv").read_bytes() == (b / "regret_table.csv").read_bytes()

    def test_solve(self, tmp_path, capsys):
        assert main(["solve", "--config", self.write(tmp_path)]) == 0
        printed = capsys.readouterr().out
        rates = [float(v) for v in printed.split("schedule:")[1].splitlines()[0].split()]
        assert len(rates) == 5 and all(0 <= r <= 1 for r in rates)

    def test_simulate(self, tmp_path, capsys):
        out = tmp_path / "sim"
        assert main(["simulate", "--strategy", "batched_ts", "--config", self.write(tmp_path), "--out", str(out)]) == 0
        assert (out / "episode_batched_ts.csv").exists()

    def test_bad_config_exit_code(self, tmp_path, capsys):
        assert main(["run", "--config", self.write(tmp_path, replications=-3)]) == 2
        assert "'replications'" in capsys.readouterr().err

    def test_unwritable_exit_code(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        assert main(["run", "--config", self.write(tmp_path), "--out", str(blocker / "sub")]) == 3

    def test_missing_strategy(self, tmp_path):
        assert main(["simulate", "--config", self.write(tmp_path)]) == 2

    def test_check(self, capsys):
        assert main(["check"]) == 0
        assert "FAIL" not in capsys.readouterr().out
