"""Geometric multigrid V-cycle for the shifted-Laplacian operator."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .grid import (
    ComplexField,
    HelmholtzProblem,
    SL_ALPHA,
    SL_BETA,
    prolong_values,
    restrict_values,
    shifted_laplacian_dense,
)

__all__ = ["VCycleConfig", "VCyclePreconditioner", "vcycle"]


@dataclass(frozen=True)
class VCycleConfig:
    levels: int = 3
    pre_smooth: int = 1
    post_smooth: int = 1
    jacobi_weight: float = 0.8
    alpha: float = SL_ALPHA
    beta: float = SL_BETA

    def __post_init__(self):
        if self.levels < 2:
            raise ValueError(f"V-cycle needs at least 2 levels, got {self.levels}")
        if self.pre_smooth < 0 or self.post_smooth < 0:
            raise ValueError("smoothing counts must be non-negative")
        if not 0 < self.jacobi_weight <= 1:
            raise ValueError(f"jacobi weight must be in (0, 1], got {self.jacobi_weight}")


class _Level:
    """Per-level data: medium, spacings, operator diagonal, stencil apply."""

    def __init__(self, grid, m, gamma, omega, alpha, beta):
        self.grid = grid
        self.m = m
        self.gamma = gamma
        self.shape = grid.shape
        self.wx = 1.0 / grid.hx**2
        self.wy = 1.0 / grid.hy**2
        self.mass = (omega**2) * complex(alpha, -beta) * m
        self.diag = 2.0 * (self.wx + self.wy) - self.mass

    def apply(self, u):
        out = 2.0 * (self.wx + self.wy) * u
        out[:, 1:] -= self.wx * u[:, :-1]
        out[:, :-1] -= self.wx * u[:, 1:]
        out[1:, :] -= self.wy * u[:-1, :]
        out[:-1, :] -= self.wy * u[1:, :]
        out -= self.mass * u
        return out


class VCyclePreconditioner:
    """Shifted-Laplacian V-cycle bound to one Helmholtz problem.

    Coarse levels rediscretize the operator on restricted media; the
    coarsest level is solved by a cached dense LU factorization. Calling the
    object runs one cycle from a zero initial guess, which is the plain
    multigrid preconditioner for a Krylov method.
    """

    def __init__(self, problem, config=None):
        cfg = config or VCycleConfig()
        grid = problem.grid
        if not grid.can_coarsen(cfg.levels - 1):
            raise ValueError(
                f"{grid.nx}x{grid.ny} grid does not support {cfg.levels} multigrid levels")
        self.problem = problem
        self.config = cfg
        self.levels = []
        m, gamma = problem.m.values, problem.gamma.values
        for _ in range(cfg.levels):
            self.levels.append(_Level(grid, m, gamma, problem.omega, cfg.alpha, cfg.beta))
            if len(self.levels) < cfg.levels:
                m = restrict_values(m)
                gamma = np.clip(restrict_values(gamma), 0.0, 1.0)
                grid = grid.coarsen()
        coarse = self.levels[-1]
        coarse_problem = HelmholtzProblem(
            m=problem.m.__class__(coarse.grid, coarse.m),
            gamma=problem.gamma.__class__(coarse.grid, coarse.gamma),
            omega=problem.omega,
        )
        a_coarse = shifted_laplacian_dense(coarse_problem, cfg.alpha, cfg.beta)
        self._coarse_lu = scipy.linalg.lu_factor(a_coarse)

    def cycle_values(self, e0, r):
        """One V-cycle on 2D arrays: improve the error estimate e0 for residual r."""
        return self._descend(0, e0.astype(np.complex128, copy=True),
                             r.astype(np.complex128, copy=False))

    def _descend(self, li, e, r):
        lev = self.levels[li]
        if li == len(self.levels) - 1:
            sol = scipy.linalg.lu_solve(self._coarse_lu, r.ravel())
            return sol.reshape(lev.shape)
        w = self.config.jacobi_weight
        for _ in range(self.config.pre_smooth):
            e += w * (r - lev.apply(e)) / lev.diag
        rc = restrict_values(r - lev.apply(e))
        ec = self._descend(li + 1, np.zeros_like(rc), rc)
        e += prolong_values(ec, lev.shape)
        for _ in range(self.config.post_smooth):
            e += w * (r - lev.apply(e)) / lev.diag
        return e

    def __call__(self, r_flat):
        """Preconditioner interface: flat residual in, flat correction out."""
        shape = self.levels[0].shape
        e = self.cycle_values(np.zeros(shape, dtype=np.complex128), r_flat.reshape(shape))
        return e.ravel()


def vcycle(p, cfg, e0, r):
    """One shifted-Laplacian V-cycle for problem p (field-level convenience).

    Builds the grid hierarchy on the fly; solver loops should hold a
    VCyclePreconditioner instead to reuse it.
    """
    if r.grid != p.grid or e0.grid != p.grid:
        raise ValueError("fields must live on the problem grid")
    pre = VCyclePreconditioner(p, cfg)
    return ComplexField(p.grid, pre.cycle_values(e0.values, r.values))
