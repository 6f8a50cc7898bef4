"""Experiment configuration: JSON with field-path-carrying validation."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .inversion import CycleSpec, FcSchedule, GridPolicy, SolverSettings, SurveyGeometry
from .retrain import RetrainConfig
from .training import TrainingConfig

__all__ = ["ConfigError", "TrainSetup", "ExperimentConfig", "load_config", "default_config_dict"]


class ConfigError(Exception):
    """Invalid configuration; carries the offending field path."""

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}")


def _section(d, name, required=True):
    v = d.get(name)
    if v is None:
        if required:
            raise ConfigError(name, "section missing")
        return {}
    if not isinstance(v, dict):
        raise ConfigError(name, "expected a mapping")
    return v


def _num(d, path, key, default=None, minimum=None):
    v = d.get(key, default)
    if v is None:
        raise ConfigError(f"{path}.{key}", "value missing")
    if not isinstance(v, (int, float)) or isinstance(v, bool):
        raise ConfigError(f"{path}.{key}", f"expected a number, got {v!r}")
    if minimum is not None and v < minimum:
        raise ConfigError(f"{path}.{key}", f"must be >= {minimum}, got {v}")
    return v


def _int(d, path, key, default=None, minimum=None):
    v = _num(d, path, key, default, minimum)
    if int(v) != v:
        raise ConfigError(f"{path}.{key}", f"expected an integer, got {v!r}")
    return int(v)


@dataclass(frozen=True)
class TrainSetup:
    samples: int = 2000
    val_samples: int = 100
    epochs: int = 40
    batch_size: int = 16
    learning_rate: float = 1e-4
    lr_decay_every: int = 40
    lr_decay_factor: float = 0.5
    v_top_range: tuple = (1500.0, 2500.0)
    v_bottom_range: tuple = (2500.0, 4500.0)

    def training_config(self, seed):
        return TrainingConfig(epochs=self.epochs, batch_size=self.batch_size,
                              learning_rate=self.learning_rate,
                              lr_decay_every=self.lr_decay_every,
                              lr_decay_factor=self.lr_decay_factor, seed=seed)


@dataclass(frozen=True)
class ExperimentConfig:
    extent: tuple
    points_per_wavelength: int
    grid_v_min: float
    abl_frac: float
    frequencies: tuple
    n_sources: int
    n_receivers: int
    source_depth_frac: float
    receiver_depth_frac: float
    lateral_margin_frac: float
    noise_fraction: float
    true_model: dict
    initial_model: dict
    cycles: tuple
    window_size: int
    cg_iters: int
    encoding_p: int
    retrain: RetrainConfig
    retrain_stride: int
    training: TrainSetup
    solver: SolverSettings
    v_bounds: tuple
    seed: int
    output_dir: str

    # -- derived objects ------------------------------------------------------

    def policy(self):
        return GridPolicy(self.extent, self.grid_v_min, self.points_per_wavelength,
                          self.abl_frac)

    def base_grid(self):
        return self.policy().grid_for(self.frequencies[-1])

    def coarsest_grid(self):
        return self.policy().grid_for(self.frequencies[0])

    def m_bounds(self):
        v_lo, v_hi = self.v_bounds
        return (1.0 / v_hi**2, 1.0 / v_lo**2)

    def schedule(self):
        return FcSchedule(self.cycles, window_size=self.window_size,
                          cg_iters=self.cg_iters, encoding_p=self.encoding_p)

    def geometry(self):
        """Sources/receivers placed on nodes of the coarsest grid in play,
        so their positions are exact on every (nested) finer grid."""
        g = self.coarsest_grid()
        lx, _ = g.extent

        def row_y(frac):
            iy = max(1, round(frac * (g.ny - 1)))
            return iy * g.hy

        def spread(n, y):
            margin = max(1, round(self.lateral_margin_frac * (g.nx - 1)))
            idx = np.linspace(margin, g.nx - 1 - margin, n)
            cols = np.unique(np.round(idx).astype(int))
            if cols.size < n:
                raise ConfigError("survey", f"cannot place {n} distinct positions on "
                                            f"the {g.nx}-node coarsest grid")
            return tuple((c * g.hx, y) for c in cols)

        return SurveyGeometry(
            source_xy=spread(self.n_sources, row_y(self.source_depth_frac)),
            receiver_xy=spread(self.n_receivers, row_y(self.receiver_depth_frac)),
        )

    def to_dict(self):
        d = asdict(self)
        d["retrain"] = asdict(self.retrain)
        d["training"] = asdict(self.training)
        d["solver"] = asdict(self.solver)
        d["cycles"] = [asdict(c) for c in self.cycles]
        return d


def load_config(source, overrides=None):
    """Parse a config from a JSON file path, JSON text, or a dict."""
    if isinstance(source, dict):
        raw = dict(source)
    else:
        try:
            if "\n" in str(source) or str(source).lstrip().startswith("{"):
                raw = json.loads(source)
            else:
                with open(source) as f:
                    raw = json.load(f)
        except OSError as e:
            raise ConfigError("config", f"cannot read file: {e}")
        except json.JSONDecodeError as e:
            raise ConfigError("config", f"invalid JSON: {e}")
    if overrides:
        raw.update(overrides)

    grid = _section(raw, "grid")
    extent = grid.get("extent")
    if (not isinstance(extent, (list, tuple)) or len(extent) != 2
            or any(not isinstance(v, (int, float)) or v <= 0 for v in extent)):
        raise ConfigError("grid.extent", f"expected two positive numbers, got {extent!r}")
    ppw = _int(grid, "grid", "points_per_wavelength", 10, minimum=2)
    v_min = _num(grid, "grid", "v_min", 1500.0, minimum=1.0)
    abl_frac = _num(grid, "grid", "abl_frac", 0.125, minimum=0.0)

    freqs = raw.get("frequencies")
    if not isinstance(freqs, (list, tuple)) or not freqs:
        raise ConfigError("frequencies", "expected a non-empty list (Hz)")
    if any(not isinstance(f, (int, float)) or f <= 0 for f in freqs):
        raise ConfigError("frequencies", "all frequencies must be positive numbers")
    if any(b <= a for a, b in zip(freqs, freqs[1:])):
        raise ConfigError("frequencies", "frequencies must be strictly increasing")

    survey = _section(raw, "survey")
    n_sources = _int(survey, "survey", "n_sources", minimum=1)
    n_receivers = _int(survey, "survey", "n_receivers", minimum=1)
    src_depth = _num(survey, "survey", "source_depth_frac", 0.05, minimum=0.0)
    rec_depth = _num(survey, "survey", "receiver_depth_frac", 0.05, minimum=0.0)
    margin = _num(survey, "survey", "lateral_margin_frac", 0.12, minimum=0.0)
    noise = _num(survey, "survey", "noise_fraction", 0.01, minimum=0.0)

    for name in ("true_model", "initial_model"):
        model = _section(raw, name)
        if "kind" not in model:
            raise ConfigError(f"{name}.kind", "value missing")

    sched = _section(raw, "schedule")
    cycles_raw = sched.get("cycles")
    if not isinstance(cycles_raw, (list, tuple)) or not cycles_raw:
        raise ConfigError("schedule.cycles", "expected a non-empty list")
    cycles = []
    for k, c in enumerate(cycles_raw):
        path = f"schedule.cycles[{k}]"
        if not isinstance(c, dict):
            raise ConfigError(path, "expected a mapping")
        i_start = _int(c, path, "i_start", minimum=1)
        i_end = _int(c, path, "i_end", minimum=i_start)
        if i_end > len(freqs):
            raise ConfigError(f"{path}.i_end", f"exceeds the {len(freqs)} frequencies")
        reg_kind = c.get("regularizer", "spline_smoothing")
        if reg_kind not in ("spline_smoothing", "diffusion"):
            raise ConfigError(f"{path}.regularizer", f"unknown kind {reg_kind!r}")
        try:
            cycles.append(CycleSpec(
                i_start=i_start, i_end=i_end,
                gn_iters=_int(c, path, "gn_iters", 5, minimum=1),
                reg_kind=reg_kind,
                alpha=c.get("alpha"),
                alpha_rel=_num(c, path, "alpha_rel", 0.05, minimum=0.0),
            ))
        except ValueError as e:
            raise ConfigError(path, str(e))
    window_size = _int(sched, "schedule", "window_size", 1, minimum=1)
    cg_iters = _int(sched, "schedule", "cg_iters", 5, minimum=1)
    encoding_p = _int(raw.get("encoding", {}), "encoding", "p", 16, minimum=1)

    rt = _section(raw, "retrain", required=False)
    try:
        retrain_cfg = RetrainConfig(
            epochs=_int(rt, "retrain", "epochs", 30, minimum=1),
            data_epochs=_int(rt, "retrain", "data_epochs", 3, minimum=0),
            initial_size=_int(rt, "retrain", "initial_size", 128, minimum=1),
            batch_size=_int(rt, "retrain", "batch_size", 16, minimum=1),
            learning_rate=_num(rt, "retrain", "learning_rate", 1e-4, minimum=0.0),
        )
    except ValueError as e:
        raise ConfigError("retrain", str(e))
    retrain_stride = _int(rt, "retrain", "stride", 1, minimum=0)

    tr = _section(raw, "training", required=False)

    def vrange(key, default):
        v = tr.get(key, default)
        if (not isinstance(v, (list, tuple)) or len(v) != 2
                or any(not isinstance(x, (int, float)) or x <= 0 for x in v) or v[1] < v[0]):
            raise ConfigError(f"training.{key}", f"expected [lo, hi] positive, got {v!r}")
        return (float(v[0]), float(v[1]))

    training = TrainSetup(
        samples=_int(tr, "training", "samples", 2000, minimum=1),
        val_samples=_int(tr, "training", "val_samples", 100, minimum=1),
        epochs=_int(tr, "training", "epochs", 40, minimum=1),
        batch_size=_int(tr, "training", "batch_size", 16, minimum=1),
        learning_rate=_num(tr, "training", "learning_rate", 1e-4, minimum=0.0),
        lr_decay_every=_int(tr, "training", "lr_decay_every", 40, minimum=0),
        lr_decay_factor=_num(tr, "training", "lr_decay_factor", 0.5, minimum=0.0),
        v_top_range=vrange("v_top_range", [1500.0, 2500.0]),
        v_bottom_range=vrange("v_bottom_range", [2500.0, 4500.0]),
    )

    sv = _section(raw, "solver", required=False)
    solver = SolverSettings(
        forward_tol=_num(sv, "solver", "forward_tol", 1e-6, minimum=0.0),
        sensitivity_tol=_num(sv, "solver", "sensitivity_tol", 1e-4, minimum=0.0),
        simulation_tol=_num(sv, "solver", "simulation_tol", 1e-8, minimum=0.0),
        max_iter=_int(sv, "solver", "max_iter", 300, minimum=1),
        restart=_int(sv, "solver", "restart", 30, minimum=1),
    )

    bounds = raw.get("bounds", {})
    v_lo = _num(bounds, "bounds", "v_min", 800.0, minimum=1.0)
    v_hi = _num(bounds, "bounds", "v_max", 6000.0, minimum=v_lo)

    out = _section(raw, "output", required=False)
    output_dir = out.get("dir", "runs/run")

    return ExperimentConfig(
        extent=(float(extent[0]), float(extent[1])),
        points_per_wavelength=ppw,
        grid_v_min=float(v_min),
        abl_frac=float(abl_frac),
        frequencies=tuple(float(f) for f in freqs),
        n_sources=n_sources,
        n_receivers=n_receivers,
        source_depth_frac=float(src_depth),
        receiver_depth_frac=float(rec_depth),
        lateral_margin_frac=float(margin),
        noise_fraction=float(noise),
        true_model=dict(raw["true_model"]),
        initial_model=dict(raw["initial_model"]),
        cycles=tuple(cycles),
        window_size=window_size,
        cg_iters=cg_iters,
        encoding_p=encoding_p,
        retrain=retrain_cfg,
        retrain_stride=retrain_stride,
        training=training,
        solver=solver,
        v_bounds=(float(v_lo), float(v_hi)),
        seed=_int(raw, "config", "seed", 1234),
        output_dir=str(output_dir),
    )


def default_config_dict():
    """A complete desk-scale experiment; the README documents each section."""
    return {
        "grid": {"extent": [1280.0, 640.0], "points_per_wavelength": 10, "v_min": 1500.0,
                 "abl_frac": 0.25},
        "frequencies": [2.5, 3.5, 4.5, 5.5, 6.5, 7.5],
        "survey": {"n_sources": 8, "n_receivers": 16, "source_depth_frac": 0.06,
                   "receiver_depth_frac": 0.06, "lateral_margin_frac": 0.12,
                   "noise_fraction": 0.01},
        "true_model": {"kind": "layered", "interfaces": [0.28, 0.55, 0.8],
                       "velocities": [1500.0, 2100.0, 2700.0, 3400.0]},
        "initial_model": {"kind": "ramp", "v_top": 1500.0, "v_bottom": 3400.0},
        "schedule": {"cycles": [
            {"i_start": 1, "i_end": 3, "gn_iters": 5, "regularizer": "spline_smoothing",
             "alpha_rel": 0.05},
            {"i_start": 4, "i_end": 6, "gn_iters": 5, "regularizer": "diffusion",
             "alpha_rel": 0.05},
        ], "window_size": 1, "cg_iters": 5},
        "encoding": {"p": 4},
        "retrain": {"epochs": 30, "data_epochs": 3, "initial_size": 128,
                    "batch_size": 16, "learning_rate": 1e-4, "stride": 1},
        "training": {"samples": 2000, "val_samples": 100, "epochs": 40,
                     "batch_size": 16, "learning_rate": 1e-4,
                     "v_top_range": [1500.0, 2500.0], "v_bottom_range": [2500.0, 4500.0]},
        "solver": {"forward_tol": 1e-6, "sensitivity_tol": 1e-4, "simulation_tol": 1e-8,
                   "max_iter": 300, "restart": 30},
        "bounds": {"v_min": 1000.0, "v_max": 5000.0},
        "seed": 1234,
        "output": {"dir": "runs/exp"},
    }
