"""Flexible GMRES and forward/adjoint Helmholtz solves."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .grid import ComplexField, helmholtz_dense, helmholtz_operator

__all__ = [
    "SolveReport",
    "fgmres",
    "solve_forward",
    "solve_adjoint",
    "DirectHelmholtzSolver",
    "FORWARD_TOL",
    "SENSITIVITY_TOL",
    "SIMULATION_TOL",
]

# Solve tolerances used across the inversion: forward data simulations during
# the optimization, sensitivity (Jacobian) solves, and the one-off survey
# simulation that generates observed data.
FORWARD_TOL = 1e-6
SENSITIVITY_TOL = 1e-4
SIMULATION_TOL = 1e-8

DEFAULT_MAX_ITER = 300
DEFAULT_RESTART = 30


@dataclass(frozen=True)
class SolveReport:
    iterations: int
    achieved_relres: float
    converged: bool
    wall_time: float
    tol: float
    residual_history: tuple = field(default=(), repr=False)

    def __post_init__(self):
        if self.achieved_relres < 0:
            raise ValueError("relative residual cannot be negative")
        if self.converged != (self.achieved_relres <= self.tol):
            raise ValueError("converged flag inconsistent with achieved residual")


def _givens(a, b):
    """Complex Givens rotation zeroing b: returns (c, s) with c real."""
    if b == 0:
        return 1.0, 0.0 + 0.0j
    if a == 0:
        return 0.0, 1.0 + 0.0j
    t = np.sqrt(abs(a) ** 2 + abs(b) ** 2)
    c = abs(a) / t
    s = (a / abs(a)) * np.conj(b) / t
    return c, s


def fgmres(apply, precond, b, x0=None, tol=1e-6, max_iter=DEFAULT_MAX_ITER,
           restart=DEFAULT_RESTART):
    """Right-preconditioned flexible GMRES on flat complex vectors.

    `precond` may vary between iterations (it can be a nonlinear network);
    the preconditioned vectors are stored so the correction is assembled
    from them directly. Iterations count preconditioner/operator
    applications across restarts. Convergence is always confirmed against a
    freshly recomputed true residual.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if restart < 1:
        raise ValueError("restart must be at least 1")
    b = np.asarray(b, dtype=np.complex128).ravel()
    n = b.size
    if precond is None:
        precond = lambda v: v
    x = np.zeros(n, dtype=np.complex128) if x0 is None else \
        np.asarray(x0, dtype=np.complex128).ravel().copy()

    t0 = time.perf_counter()
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n, dtype=np.complex128), SolveReport(
            0, 0.0, True, time.perf_counter() - t0, tol)

    history = []
    iterations = 0
    relres = np.inf
    while True:
        r = b - apply(x)
        if not np.all(np.isfinite(r)):
            raise FloatingPointError("non-finite residual in FGMRES")
        beta = np.linalg.norm(r)
        relres = beta / bnorm
        if relres <= tol or iterations >= max_iter:
            break

        v = np.empty((restart + 1, n), dtype=np.complex128)
        z = np.empty((restart, n), dtype=np.complex128)
        h = np.zeros((restart + 1, restart), dtype=np.complex128)
        cs = np.zeros(restart, dtype=np.float64)
        sn = np.zeros(restart, dtype=np.complex128)
        g = np.zeros(restart + 1, dtype=np.complex128)
        v[0] = r / beta
        g[0] = beta

        k = 0
        for j in range(restart):
            if iterations >= max_iter:
                break
            z[j] = precond(v[j])
            # copy: the operator may return its argument (e.g. the identity)
            w = np.array(apply(z[j]), dtype=np.complex128)
            iterations += 1
            if not np.all(np.isfinite(w)):
                raise FloatingPointError("non-finite operator output in FGMRES")
            wnorm = np.linalg.norm(w)
            for i in range(j + 1):
                h[i, j] = np.vdot(v[i], w)
                w -= h[i, j] * v[i]
            h[j + 1, j] = np.linalg.norm(w)
            # breakdown = complete cancellation against the current basis
            breakdown = abs(h[j + 1, j]) <= 1e-14 * max(wnorm, 1e-300)
            if not breakdown:
                v[j + 1] = w / h[j + 1, j]
            for i in range(j):
                hi = h[i, j]
                h[i, j] = cs[i] * hi + sn[i] * h[i + 1, j]
                h[i + 1, j] = -np.conj(sn[i]) * hi + cs[i] * h[i + 1, j]
            cs[j], sn[j] = _givens(h[j, j], h[j + 1, j])
            h[j, j] = cs[j] * h[j, j] + sn[j] * h[j + 1, j]
            h[j + 1, j] = 0.0
            g[j + 1] = -np.conj(sn[j]) * g[j]
            g[j] = cs[j] * g[j]
            k = j + 1
            history.append(abs(g[j + 1]) / bnorm)
            if abs(g[j + 1]) / bnorm <= tol or breakdown:
                break
        if k > 0:
            y = scipy.linalg.solve_triangular(h[:k, :k], g[:k])
            x = x + z[:k].T @ y
        else:
            break

    elapsed = time.perf_counter() - t0
    converged = bool(relres <= tol)
    return x, SolveReport(iterations, float(relres), converged, elapsed, tol,
                          tuple(history))


def solve_forward(p, rhs, precond=None, tol=FORWARD_TOL, max_iter=DEFAULT_MAX_ITER,
                  restart=DEFAULT_RESTART, x0=None):
    """Solve H(m, omega) u = rhs with FGMRES; returns (ComplexField, SolveReport)."""
    if rhs.grid != p.grid:
        raise ValueError("right-hand side grid does not match problem grid")
    apply = helmholtz_operator(p)
    x0v = None if x0 is None else x0.values.ravel()
    x, report = fgmres(apply, precond, rhs.values.ravel(), x0=x0v, tol=tol,
                       max_iter=max_iter, restart=restart)
    return ComplexField(p.grid, x.reshape(p.grid.shape)), report


def solve_adjoint(p, rhs, precond=None, tol=FORWARD_TOL, max_iter=DEFAULT_MAX_ITER,
                  restart=DEFAULT_RESTART):
    """Solve the adjoint system H* x = rhs via conjugation.

    H has symmetric real and imaginary parts, so H* x = b is equivalent to
    H conj(x) = conj(b): conjugate the right-hand side, run the standard
    forward machinery (same preconditioner, no adjoint-specific training),
    and conjugate the result.
    """
    conj_rhs = ComplexField(rhs.grid, np.conj(rhs.values))
    y, report = solve_forward(p, conj_rhs, precond=precond, tol=tol,
                              max_iter=max_iter, restart=restart)
    return ComplexField(p.grid, np.conj(y.values)), report


class DirectHelmholtzSolver:
    """Dense LU solver for one Helmholtz problem (oracle / small-grid path)."""

    def __init__(self, problem):
        self.problem = problem
        self._lu = scipy.linalg.lu_factor(helmholtz_dense(problem))

    def solve(self, rhs):
        vals = scipy.linalg.lu_solve(self._lu, rhs.values.ravel())
        return ComplexField(self.problem.grid, vals.reshape(self.problem.grid.shape))

    def solve_adjoint(self, rhs):
        vals = scipy.linalg.lu_solve(self._lu, np.conj(rhs.values.ravel()))
        return ComplexField(self.problem.grid, np.conj(vals).reshape(self.problem.grid.shape))
