"""Supervision-pair generation: random linear media and partially-converged
GMRES residual/error pairs."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import (
    AttenuationField,
    ComplexField,
    HelmholtzProblem,
    SlownessSquaredField,
    absorbing_layer,
    helmholtz_operator,
)
from .krylov import fgmres
from .multigrid import VCyclePreconditioner

__all__ = [
    "TrainingSample",
    "DatasetSpec",
    "TrainingDataset",
    "default_abl_nodes",
    "random_linear_model",
    "generate_sample",
    "build_dataset",
]

# tolerance no float can reach: forces FGMRES to run exactly max_iter steps
_UNREACHABLE_TOL = 1e-300


@dataclass(frozen=True)
class TrainingSample:
    """One (r, e_true, m, gamma) supervision pair with H(m) e_true = r."""

    r: ComplexField
    e_true: ComplexField
    m: SlownessSquaredField
    gamma: AttenuationField

    def residual_identity_error(self, omega):
        """Relative error of H(m, omega) e_true = r for this sample."""
        p = HelmholtzProblem(self.m, self.gamma, omega)
        h = helmholtz_operator(p)
        lhs = h(self.e_true.values.ravel())
        return np.linalg.norm(lhs - self.r.values.ravel()) / np.linalg.norm(self.r.values)


def default_abl_nodes(grid):
    """Default absorbing-layer thickness: one eighth of the smaller dimension."""
    return max(2, min(grid.nx, grid.ny) // 8)


@dataclass(frozen=True)
class DatasetSpec:
    count: int
    grid: object
    omega: float
    v_top_range: tuple = (1500.0, 2500.0)
    v_bottom_range: tuple = (2500.0, 4500.0)
    seed: int = 0
    abl_nodes: int = None
    max_precondition_iters: int = 10

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("dataset count must be at least 1")
        for lo, hi in (self.v_top_range, self.v_bottom_range):
            if not (0 < lo <= hi):
                raise ValueError("velocity ranges must be positive and ordered")
        if self.abl_nodes is None:
            object.__setattr__(self, "abl_nodes", default_abl_nodes(self.grid))


@dataclass
class TrainingDataset:
    samples: list
    omega: float
    gamma: AttenuationField
    grid: object = field(init=False)

    def __post_init__(self):
        self.grid = self.gamma.grid

    def __len__(self):
        return len(self.samples)

    def __getitem__(self, i):
        return self.samples[i]


def random_linear_model(spec, rng=None):
    """Velocity linear in depth between random top and bottom values; m = 1/v^2."""
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    v_top = rng.uniform(*spec.v_top_range)
    v_bottom = rng.uniform(*spec.v_bottom_range)
    v = np.linspace(v_top, v_bottom, spec.grid.ny)
    vals = np.broadcast_to((1.0 / v**2)[:, None], spec.grid.shape).copy()
    return SlownessSquaredField(spec.grid, vals)


def generate_sample(m, gamma, omega, rng, max_precondition_iters=10,
                    preconditioner=None):
    """Draw one supervision pair without solving the PDE to convergence.

    A random complex-normal vector x defines b = H x exactly; a random
    number (1..max) of V-cycle-preconditioned FGMRES iterations from zero
    produces a partially converged x~, and the pair is r = b - H x~,
    e_true = x - x~. The pair satisfies H e_true = r by linearity, and the
    residual is algebraically smooth because at least one preconditioned
    iteration was applied.
    """
    p = HelmholtzProblem(m, gamma, omega)
    h = helmholtz_operator(p)
    n = p.grid.n_nodes
    x = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / np.sqrt(2.0)
    b = h(x)
    iters = int(rng.integers(1, max_precondition_iters + 1))
    pre = preconditioner if preconditioner is not None else VCyclePreconditioner(p)
    xt, _ = fgmres(h, pre, b, tol=_UNREACHABLE_TOL, max_iter=iters)
    shape = p.grid.shape
    return TrainingSample(
        r=ComplexField(p.grid, (b - h(xt)).reshape(shape)),
        e_true=ComplexField(p.grid, (x - xt).reshape(shape)),
        m=m,
        gamma=gamma,
    )


def build_dataset(spec):
    """Generate spec.count samples over freshly drawn linear media.

    Sample i uses its own stream seeded spec.seed + i, so results do not
    depend on generation order or worker count. All samples share one
    attenuation profile.
    """
    gamma = absorbing_layer(spec.grid, spec.abl_nodes)
    samples = []
    for i in range(spec.count):
        rng = np.random.default_rng(spec.seed + i)
        m = random_linear_model(spec, rng)
        samples.append(generate_sample(m, gamma, spec.omega, rng,
                                       spec.max_precondition_iters))
    return TrainingDataset(samples, spec.omega, gamma)
