"""Run-directory artifacts: CSV logs, model snapshots, PGM images."""

from __future__ import annotations

import json
import os

import numpy as np

from .fileio import CsvWriter, save_field

__all__ = ["RunLogger", "write_pgm", "canonical_csv_bytes"]

# columns carrying wall-clock measurements; excluded from determinism checks
TIMING_COLUMNS = ("seconds",)


def write_pgm(path, values):
    """8-bit binary PGM with min/max normalization (grayscale model image)."""
    a = np.asarray(values, dtype=np.float64)
    lo, hi = float(a.min()), float(a.max())
    if hi > lo:
        img = np.round(255.0 * (a - lo) / (hi - lo)).astype(np.uint8)
    else:
        img = np.zeros(a.shape, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{a.shape[1]} {a.shape[0]}\n255\n".encode())
        f.write(img.tobytes())


def canonical_csv_bytes(path):
    """CSV content with wall-clock columns removed (the deterministic part)."""
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines:
        return b""
    header = lines[0].split(",")
    keep = [i for i, name in enumerate(header) if name not in TIMING_COLUMNS]
    out = []
    for line in lines:
        cells = line.split(",")
        out.append(",".join(cells[i] for i in keep))
    return ("\n".join(out) + "\n").encode()


class RunLogger:
    """Writes the per-run CSV set and model snapshots into one directory."""

    def __init__(self, run_dir):
        self.run_dir = run_dir
        os.makedirs(run_dir, exist_ok=True)
        self.solves = CsvWriter(self._p("solves.csv"),
                                ["solve_id", "kind", "omega", "tol", "iterations",
                                 "relres", "seconds"])
        self.history = CsvWriter(self._p("history.csv"),
                                 ["cycle", "window", "gn_iter", "phase", "omega_set",
                                  "fgmres_iters_total", "seconds", "misfit_value"])
        self.gn = CsvWriter(self._p("gn.csv"),
                            ["cycle", "window", "gn_iter", "phi_before", "phi_after",
                             "step_scale", "stalled", "grad_norm"])
        self.retrain = CsvWriter(self._p("retrain.csv"),
                                 ["window_id", "omega_max", "dataset_final",
                                  "epochs_run", "final_mse", "seconds"])
        self._solve_id = 0
        self.total_iterations = 0
        self.total_solve_seconds = 0.0
        self.total_retrain_seconds = 0.0
        self.stagnated_solves = 0
        self._notes_path = self._p("notes.txt")

    def _p(self, name):
        return os.path.join(self.run_dir, name)

    def log_solve(self, kind, omega, report):
        self.solves.write_row(self._solve_id, kind, omega, report.tol,
                              report.iterations, report.achieved_relres,
                              report.wall_time)
        self._solve_id += 1
        self.total_iterations += report.iterations
        self.total_solve_seconds += report.wall_time
        if not report.converged:
            self.stagnated_solves += 1

    def log_gn_iteration(self, record):
        info = record["info"]
        omega_set = ";".join(repr(f) for f in record["omega_set"])
        rows = [
            ("misfit", record["misfit_iters"], record["misfit_seconds"], info.phi_after),
            ("gradient", record["gradient_iters"], record["gradient_seconds"], info.phi_before),
            ("hessvec", record["hessvec_iters"], record["hessvec_seconds"], info.phi_before),
        ]
        for phase, iters, seconds, value in rows:
            self.history.write_row(record["cycle"], record["window"], record["gn_iter"],
                                   phase, omega_set, iters, seconds, value)
        self.gn.write_row(record["cycle"], record["window"], record["gn_iter"],
                          info.phi_before, info.phi_after, info.step_scale,
                          info.stalled, info.grad_norm)

    def log_retrain(self, window_id, f_top, report):
        self.retrain.write_row(window_id, 2.0 * np.pi * f_top, report.dataset_final,
                               report.epochs_run, report.final_mse, report.seconds)
        self.total_retrain_seconds += report.seconds

    def log_window(self, window_record):
        m = window_record["model"]
        stem = f"model_c{window_record['cycle']}_w{window_record['window']}"
        save_field(self._p(stem + ".wkf"), m)
        write_pgm(self._p(stem + ".pgm"), m.values)

    def log_note(self, text):
        with open(self._notes_path, "a") as f:
            f.write(text + "\n")

    def write_summary(self, fields):
        """One-row summary CSV; fields is an ordered mapping."""
        writer = CsvWriter(self._p("summary.csv"), list(fields.keys()))
        writer.write_row(*fields.values())

    def save_config(self, config_dict):
        with open(self._p("config.json"), "w") as f:
            json.dump(config_dict, f, indent=2, sort_keys=True)
            f.write("\n")
