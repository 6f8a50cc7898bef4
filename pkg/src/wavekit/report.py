"""Aggregation of run directories: per-window statistics and mode speed-ups."""

from __future__ import annotations

import csv
import os

import numpy as np

__all__ = ["load_history", "load_summary", "compare_runs"]


def load_summary(run_dir):
    path = os.path.join(run_dir, "summary.csv")
    with open(path) as f:
        rows = list(csv.DictReader(f))
    if len(rows) != 1:
        raise ValueError(f"{path}: expected exactly one summary row")
    return rows[0]


def load_history(run_dir):
    with open(os.path.join(run_dir, "history.csv")) as f:
        return list(csv.DictReader(f))


def _window_stats(history):
    """Per-(cycle, window) mean/std/total of iteration counts and seconds."""
    groups = {}
    for row in history:
        key = (int(row["cycle"]), int(row["window"]))
        groups.setdefault(key, []).append(row)
    stats = {}
    for key, rows in sorted(groups.items()):
        iters = np.array([float(r["fgmres_iters_total"]) for r in rows])
        secs = np.array([float(r["seconds"]) for r in rows])
        stats[key] = {
            "mean_iters": float(iters.mean()), "std_iters": float(iters.std()),
            "total_iters": float(iters.sum()),
            "mean_seconds": float(secs.mean()), "std_seconds": float(secs.std()),
            "total_seconds": float(secs.sum()),
        }
    return stats


def _schedule_key(history):
    return sorted({(r["cycle"], r["window"], r["gn_iter"], r["phase"]) for r in history})


def compare_runs(run_dirs):
    """Aggregate runs and compute pairwise speed-ups on totals.

    All runs must share one schedule (same cycle/window/GN structure).
    Returns (text_report, table_rows); each table row is a flat dict.
    """
    if not run_dirs:
        raise ValueError("no run directories given")
    runs = []
    for d in run_dirs:
        history = load_history(d)
        summary = load_summary(d)
        label = f"{os.path.basename(os.path.normpath(d))}({summary.get('mode', '?')})"
        runs.append({"dir": d, "label": label, "summary": summary,
                     "history": history, "stats": _window_stats(history)})
    key0 = _schedule_key(runs[0]["history"])
    for r in runs[1:]:
        if _schedule_key(r["history"]) != key0:
            raise ValueError(f"run {r['dir']} has a different schedule than {runs[0]['dir']}")

    rows = []
    lines = ["per-window iteration statistics", "=" * 34]
    for r in runs:
        lines.append(f"\nrun {r['label']}")
        for (cycle, window), s in r["stats"].items():
            lines.append(
                f"  cycle {cycle} window {window}: iters/record "
                f"{s['mean_iters']:.1f} +- {s['std_iters']:.1f}, "
                f"total {s['total_iters']:.0f} its / {s['total_seconds']:.2f}s")
            rows.append({"run": r["label"], "cycle": cycle, "window": window, **s})
        total_i = float(r["summary"]["total_fgmres_iterations"])
        total_s = float(r["summary"]["total_solve_seconds"])
        lines.append(f"  run totals: {total_i:.0f} iterations, {total_s:.2f} s")

    lines.append("\nspeed-ups (first run relative to second)")
    lines.append("=" * 40)
    for i in range(len(runs)):
        for j in range(len(runs)):
            if i == j:
                continue
            a, b = runs[i], runs[j]
            ai = float(a["summary"]["total_fgmres_iterations"])
            bi = float(b["summary"]["total_fgmres_iterations"])
            at = float(a["summary"]["total_solve_seconds"])
            bt = float(b["summary"]["total_solve_seconds"])
            sp_i = 100.0 * (1.0 - ai / bi) if bi > 0 else 0.0
            sp_t = 100.0 * (1.0 - at / bt) if bt > 0 else 0.0
            lines.append(f"{a['label']} vs {b['label']}: iterations {sp_i:+.1f}%, "
                         f"solve-time {sp_t:+.1f}%")
            rows.append({"run": f"{a['label']} vs {b['label']}", "cycle": -1, "window": -1,
                         "speedup_iterations_pct": sp_i, "speedup_seconds_pct": sp_t})
    return "\n".join(lines) + "\n", rows
