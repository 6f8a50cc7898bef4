"""Reproducible experiment runner: train, invert, report."""

from __future__ import annotations

import argparse
import csv
import os
import sys
import time

import numpy as np
import torch

from .config import ConfigError, load_config
from .data import DatasetSpec, build_dataset
from .fileio import CsvWriter, save_field
from .grid import SlownessSquaredField, resample_to_grid
from .inversion import (
    PreconditionerFactory,
    SolverFailure,
    frequency_continuation,
    schedule_grids,
    simulate_observations,
)
from .media import build_model
from .nets import EncoderSolver, load_checkpoint, save_checkpoint
from .report import compare_runs
from .retrain import retrain
from .runio import RunLogger, write_pgm
from .training import evaluate_mse, train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_STAGNATION = 4

INVERT_MODES = ("retrain", "frozen", "vcycle_only")


def _rms(a, b):
    return float(np.sqrt(np.mean((np.asarray(a) - np.asarray(b)) ** 2)))


def cmd_train(cfg, out_dir):
    """Build the initial dataset, train the encoder-solver, write the checkpoint."""
    os.makedirs(out_dir, exist_ok=True)
    t0 = time.perf_counter()
    grid = cfg.base_grid()
    abl_nodes = cfg.policy().abl_nodes_for(grid)
    omega = 2.0 * np.pi * cfg.frequencies[-1]
    tr = cfg.training
    spec = DatasetSpec(count=tr.samples, grid=grid, omega=omega,
                       v_top_range=tr.v_top_range, v_bottom_range=tr.v_bottom_range,
                       seed=cfg.seed, abl_nodes=abl_nodes)
    dataset = build_dataset(spec)
    val_spec = DatasetSpec(count=tr.val_samples, grid=grid, omega=omega,
                           v_top_range=tr.v_top_range, v_bottom_range=tr.v_bottom_range,
                           seed=cfg.seed + tr.samples, abl_nodes=abl_nodes)
    val_dataset = build_dataset(val_spec)

    model = EncoderSolver(seed=cfg.seed)
    loss_csv = CsvWriter(os.path.join(out_dir, "loss.csv"), ["epoch", "mse"])

    def on_epoch(epoch, loss, seconds):
        loss_csv.write_row(epoch, loss)
        print(f"epoch {epoch}: mse {loss:.6g} ({seconds:.1f}s)", flush=True)

    history = train(model, dataset.samples, omega, tr.training_config(cfg.seed), on_epoch)
    val_mse = evaluate_mse(model, val_dataset.samples, omega)
    ckpt = os.path.join(out_dir, "checkpoint.wkw")
    save_checkpoint(model, ckpt)

    logger = RunLogger(out_dir)
    logger.save_config(cfg.to_dict())
    logger.write_summary({
        "command": "train", "samples": tr.samples, "epochs": tr.epochs,
        "final_train_mse": history[-1], "val_mse": val_mse,
        "seconds": time.perf_counter() - t0,
    })
    print(f"final training mse {history[-1]:.6g}, validation mse {val_mse:.6g}")
    print(f"checkpoint written to {ckpt}")
    return EXIT_OK


def cmd_invert(cfg, mode, out_dir, checkpoint_path):
    """Simulate observations, run frequency continuation in the given mode."""
    if mode not in INVERT_MODES:
        raise ConfigError("mode", f"expected one of {INVERT_MODES}, got {mode!r}")
    os.makedirs(out_dir, exist_ok=True)
    t0 = time.perf_counter()
    policy = cfg.policy()
    geometry = cfg.geometry()
    base_grid = cfg.base_grid()
    m_true = build_model(base_grid, cfg.true_model)
    m0 = build_model(base_grid, cfg.initial_model)

    survey = simulate_observations(
        m_true, geometry, policy, cfg.frequencies, noise_fraction=cfg.noise_fraction,
        rng=np.random.default_rng([cfg.seed, 17]), settings=cfg.solver,
        grids=schedule_grids(policy, cfg.frequencies, cfg.schedule()))

    model = None
    if mode in ("retrain", "frozen"):
        if not os.path.exists(checkpoint_path):
            raise ConfigError("checkpoint",
                              f"no checkpoint at {checkpoint_path}; run `wavekit train` first")
        model = load_checkpoint(checkpoint_path)
        factory = PreconditionerFactory("mvu", model)
    else:
        factory = PreconditionerFactory("vcycle")

    logger = RunLogger(out_dir)
    logger.save_config({**cfg.to_dict(), "mode": mode})

    retrain_hook = None
    if mode == "retrain":
        def retrain_hook(m_w, gamma_w, omega, window_index):
            _, report = retrain(model, m_w, gamma_w, omega, cfg.retrain,
                                seed=cfg.seed + 7000 * (window_index + 1))
            return report

    m_final, history = frequency_continuation(
        m0, survey, cfg.schedule(), precond_factory=factory,
        retrain_hook=retrain_hook, retrain_stride=cfg.retrain_stride,
        bounds=cfg.m_bounds(), settings=cfg.solver, seed=cfg.seed,
        strict=False, logger=logger)

    rms_initial = _rms(m0.values, m_true.values)
    rms_final = _rms(m_final.values, m_true.values)
    save_field(os.path.join(out_dir, "model_true.wkf"), m_true)
    save_field(os.path.join(out_dir, "model_initial.wkf"), m0)
    save_field(os.path.join(out_dir, "model_final.wkf"), m_final)
    write_pgm(os.path.join(out_dir, "model_true.pgm"), m_true.values)
    write_pgm(os.path.join(out_dir, "model_final.pgm"), m_final.values)

    stalled_windows = sum(1 for w in history for g in w["gn"] if g["info"].stalled)
    logger.write_summary({
        "command": "invert", "mode": mode, "windows": len(history),
        "total_fgmres_iterations": logger.total_iterations,
        "stagnated_solves": logger.stagnated_solves,
        "stalled_gn_steps": stalled_windows,
        "rms_initial": rms_initial, "rms_final": rms_final,
        "rms_reduction_pct": 100.0 * (1.0 - rms_final / rms_initial) if rms_initial else 0.0,
        "total_solve_seconds": logger.total_solve_seconds,
        "total_retrain_seconds": logger.total_retrain_seconds,
        "seconds": time.perf_counter() - t0,
    })
    print(f"mode {mode}: {logger.total_iterations} FGMRES iterations over "
          f"{len(history)} windows; model RMS {rms_initial:.3e} -> {rms_final:.3e}")
    if logger.stagnated_solves:
        print(f"{logger.stagnated_solves} solves hit the iteration cap", file=sys.stderr)
        return EXIT_STAGNATION
    return EXIT_OK


def cmd_report(run_dirs, out_dir=None):
    text, rows = compare_runs(run_dirs)
    print(text, end="")
    target = out_dir or "."
    os.makedirs(target, exist_ok=True)
    with open(os.path.join(target, "report.txt"), "w") as f:
        f.write(text)
    keys = sorted({k for r in rows for k in r})
    with open(os.path.join(target, "report.csv"), "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=keys)
        writer.writeheader()
        writer.writerows(rows)
    return EXIT_OK


def _build_parser():
    parser = argparse.ArgumentParser(prog="wavekit",
                                     description="frequency-domain FWI with a learned "
                                                 "multigrid-augmented preconditioner")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="JSON experiment config")
    common.add_argument("--seed", type=int, default=None, help="override config seed")
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--out", default=None, help="output directory")

    sub.add_parser("train", parents=[common], help="train the initial encoder-solver")
    p_inv = sub.add_parser("invert", parents=[common], help="run the inversion")
    p_inv.add_argument("--mode", choices=INVERT_MODES, default="retrain")
    p_inv.add_argument("--checkpoint", default=None,
                       help="encoder-solver checkpoint (default: <output>/train/checkpoint.wkw)")

    p_rep = sub.add_parser("report", help="aggregate and compare run directories")
    p_rep.add_argument("run_dirs", nargs="+")
    p_rep.add_argument("--out", default=None)
    return parser


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "report":
            return cmd_report(args.run_dirs, args.out)
        torch.set_num_threads(max(1, args.threads))
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        cfg = load_config(args.config, overrides)
        if args.command == "train":
            out = args.out or os.path.join(cfg.output_dir, "train")
            return cmd_train(cfg, out)
        out = args.out or os.path.join(cfg.output_dir, f"invert_{args.mode}")
        ckpt = args.checkpoint or os.path.join(cfg.output_dir, "train", "checkpoint.wkw")
        return cmd_invert(cfg, args.mode, out, ckpt)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverFailure, FloatingPointError) as e:
        print(f"solver failure: {e}", file=sys.stderr)
        return EXIT_SOLVER
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
