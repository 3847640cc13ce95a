"""CSV emission for sweep results.

Files
-----
regret_table.csv
    ``strategy, K, N, pattern, mean_regret, se``; see :meth:`SweepResult.table`.
schedules.csv
    One row per replication of every Planner/MPC cell with the deployed rates
    ``eps_1..eps_T``. Rows carry exactly ``T`` rate columns for their own
    pattern, so rows of shorter patterns are shorter than the header.
convergence.csv
    Solver iterates of replication 0: ``solve_period, step, objective`` and
    the iterate ``eps_1..eps_H`` (``H = T - solve_period + 1``), also ragged.

All reals are written with 6 significant digits.
"""

from __future__ import annotations

import csv
import math
import os
from pathlib import Path

from .sweep import SweepResult

TABLE_HEADER = ["strategy", "K", "N", "pattern", "mean_regret", "se"]
KEY_HEADER = ["strategy", "K", "N", "pattern", "replication"]


def fmt(x) -> str:
    return f"{float(x):.6g}"


def _writer(path):
    fh = open(path, "w", newline="")
    return fh, csv.writer(fh, lineterminator="\n")


def emit_reports(result: SweepResult, out_dir) -> list[Path]:
    """Write the three report files into ``out_dir`` (created if missing).

    Raises
    ------
    OSError
        If the directory cannot be created or written.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise PermissionError(f"output directory {out} is not writable")
    paths = [out / "regret_table.csv", out / "schedules.csv", out / "convergence.csv"]

    fh, w = _writer(paths[0])
    with fh:
        w.writerow(TABLE_HEADER)
        for strategy, K, N, pattern, mean, se in result.table():
            w.writerow([strategy, K, N, pattern, fmt(mean), fmt(se)])

    horizon = max((len(r) for c in result.cells for _, r in c.schedules), default=0)
    fh, w = _writer(paths[1])
    with fh:
        w.writerow(KEY_HEADER + [f"eps_{t}" for t in range(1, horizon + 1)])
        for c in result.cells:
            for rep, rates in c.schedules:
                w.writerow([c.strategy, c.K, c.N, c.pattern, rep] + [fmt(r) for r in rates])

    width = max((len(row[3]) for c in result.cells for row in c.trace), default=0)
    fh, w = _writer(paths[2])
    with fh:
        w.writerow(KEY_HEADER + ["solve_period", "step", "objective"] + [f"eps_{h}" for h in range(1, width + 1)])
        for c in result.cells:
            for period, step, value, rates in c.trace:
                w.writerow([c.strategy, c.K, c.N, c.pattern, 0, period, step, fmt(value)] + [fmt(r) for r in rates])
    return paths


def read_regret_table(path) -> list[tuple]:
    """Parse ``regret_table.csv`` back into :meth:`SweepResult.table` rows."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != TABLE_HEADER:
            raise ValueError(f"unexpected regret table header {header}")
        return [(s, int(K), int(N), p, float(m), float(se)) for s, K, N, p, m, se in reader]


def read_schedules(path) -> list[tuple]:
    """``(strategy, K, N, pattern, replication, rates)`` rows of ``schedules.csv``."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        return [(r[0], int(r[1]), int(r[2]), r[3], int(r[4]), [float(v) for v in r[5:]]) for r in reader]


def same_value(a: float, b: float) -> bool:
    """Equality at the 6-significant-digit precision of the reports."""
    if math.isnan(a) or math.isnan(b):
        return math.isnan(a) and math.isnan(b)
    return fmt(a) == fmt(b)
