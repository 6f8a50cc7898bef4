"""Regular 2D grids, field containers, and the discrete Helmholtz operators.

Fields are stored as 2D arrays of shape (ny, nx); flattening is row-major,
so flat index = iy * nx + ix. Row iy = 0 is the top boundary (the free
surface in geophysical setups); iy grows downward.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "RegularGrid2D",
    "SlownessSquaredField",
    "AttenuationField",
    "ComplexField",
    "HelmholtzProblem",
    "SourceReceiverLayout",
    "helmholtz_apply",
    "shifted_laplacian_apply",
    "helmholtz_dense",
    "shifted_laplacian_dense",
    "absorbing_layer",
    "point_source",
    "grid_for_frequency",
    "restrict",
    "prolong",
    "restrict_values",
    "prolong_values",
    "sample_at_receivers",
    "scatter_at_receivers",
    "resample_to_grid",
]

# Default shift of the complex-shifted Laplacian preconditioner.
SL_ALPHA = 1.0
SL_BETA = 0.5


@dataclass(frozen=True)
class RegularGrid2D:
    """Vertex-centered regular grid: nx-by-ny nodes with spacings hx, hy (meters)."""

    nx: int
    ny: int
    hx: float
    hy: float

    def __post_init__(self):
        if self.nx < 3 or self.ny < 3:
            raise ValueError(f"grid needs at least 3 nodes per dimension, got {self.nx}x{self.ny}")
        if not (self.hx > 0 and self.hy > 0):
            raise ValueError(f"grid spacings must be positive, got hx={self.hx}, hy={self.hy}")

    @property
    def shape(self):
        """Array shape (ny, nx) of a field on this grid."""
        return (self.ny, self.nx)

    @property
    def n_nodes(self):
        return self.nx * self.ny

    @property
    def extent(self):
        """Physical size (Lx, Ly) in meters."""
        return ((self.nx - 1) * self.hx, (self.ny - 1) * self.hy)

    def node_index(self, ix, iy):
        """Flat row-major index of node (ix, iy)."""
        if not (0 <= ix < self.nx and 0 <= iy < self.ny):
            raise ValueError(f"node ({ix}, {iy}) outside {self.nx}x{self.ny} grid")
        return iy * self.nx + ix

    def can_coarsen(self, times=1):
        """True when (n-1) stays even through `times` standard coarsenings."""
        cx, cy = self.nx - 1, self.ny - 1
        for _ in range(times):
            if cx % 2 or cy % 2 or cx < 4 or cy < 4:
                return False
            cx //= 2
            cy //= 2
        return True

    def coarsen(self):
        """The grid with half the cells per dimension (spacings doubled)."""
        if not self.can_coarsen():
            raise ValueError(f"{self.nx}x{self.ny} grid cannot be coarsened")
        return RegularGrid2D((self.nx - 1) // 2 + 1, (self.ny - 1) // 2 + 1,
                             2.0 * self.hx, 2.0 * self.hy)


def _as_grid_array(grid, values, dtype):
    a = np.asarray(values, dtype=dtype)
    if a.size != grid.n_nodes:
        raise ValueError(f"field has {a.size} samples, grid has {grid.n_nodes} nodes")
    return a.reshape(grid.shape)


@dataclass(frozen=True)
class SlownessSquaredField:
    """Squared slowness m(x) = 1/c(x)^2 in s^2/m^2 on a regular grid."""

    grid: RegularGrid2D
    values: np.ndarray

    def __post_init__(self):
        a = _as_grid_array(self.grid, self.values, np.float64)
        if not np.all(np.isfinite(a)) or np.any(a <= 0):
            raise ValueError("squared slowness must be finite and strictly positive")
        object.__setattr__(self, "values", a)

    @property
    def velocity(self):
        """Acoustic velocity c = 1/sqrt(m) in m/s."""
        return 1.0 / np.sqrt(self.values)


@dataclass(frozen=True)
class AttenuationField:
    """Attenuation fraction gamma(x) in [0, 1] on a regular grid."""

    grid: RegularGrid2D
    values: np.ndarray

    def __post_init__(self):
        a = _as_grid_array(self.grid, self.values, np.float64)
        if not np.all(np.isfinite(a)) or np.any(a < 0) or np.any(a > 1):
            raise ValueError("attenuation values must lie in [0, 1]")
        object.__setattr__(self, "values", a)


@dataclass(frozen=True)
class ComplexField:
    """Complex-valued grid function (wavefields, residuals, errors, sources)."""

    grid: RegularGrid2D
    values: np.ndarray

    def __post_init__(self):
        a = _as_grid_array(self.grid, self.values, np.complex128)
        if not np.all(np.isfinite(a)):
            raise ValueError("complex field contains non-finite entries")
        object.__setattr__(self, "values", a)

    @property
    def re(self):
        return self.values.real

    @property
    def im(self):
        return self.values.imag

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros(grid.shape, dtype=np.complex128))


@dataclass(frozen=True)
class HelmholtzProblem:
    """Helmholtz operator data: medium m, attenuation gamma, angular frequency omega."""

    m: SlownessSquaredField
    gamma: AttenuationField
    omega: float

    def __post_init__(self):
        if self.m.grid != self.gamma.grid:
            raise ValueError("m and gamma must share one grid")
        if not self.omega > 0:
            raise ValueError(f"omega must be positive, got {self.omega}")

    @property
    def grid(self):
        return self.m.grid

    def with_medium(self, m):
        return replace(self, m=m)


@dataclass(frozen=True)
class SourceReceiverLayout:
    """Source and receiver node indices plus per-source receiver masks.

    In the default configuration every receiver records every source
    (all-true masks).
    """

    grid: RegularGrid2D
    sources: tuple
    receivers: tuple
    masks: np.ndarray = field(default=None)

    def __post_init__(self):
        src = tuple(int(s) for s in self.sources)
        rec = tuple(int(r) for r in self.receivers)
        n = self.grid.n_nodes
        if any(not 0 <= s < n for s in src) or any(not 0 <= r < n for r in rec):
            raise ValueError("source/receiver node index out of range")
        masks = self.masks
        if masks is None:
            masks = np.ones((len(src), len(rec)), dtype=bool)
        masks = np.asarray(masks, dtype=bool)
        if masks.shape != (len(src), len(rec)):
            raise ValueError("masks must have shape (n_sources, n_receivers)")
        object.__setattr__(self, "sources", src)
        object.__setattr__(self, "receivers", rec)
        object.__setattr__(self, "masks", masks)

    @property
    def n_sources(self):
        return len(self.sources)

    @property
    def n_receivers(self):
        return len(self.receivers)


# ---------------------------------------------------------------------------
# Matrix-free operators
# ---------------------------------------------------------------------------

def neg_laplacian_values(u, hx, hy):
    """-Laplacian of a (ny, nx) array, 5-point stencil, zero Dirichlet closure."""
    out = (2.0 / hx**2 + 2.0 / hy**2) * u
    wx = 1.0 / hx**2
    wy = 1.0 / hy**2
    out[:, 1:] -= wx * u[:, :-1]
    out[:, :-1] -= wx * u[:, 1:]
    out[1:, :] -= wy * u[:-1, :]
    out[:-1, :] -= wy * u[1:, :]
    return out


def _operator_values(m, mass_factor, omega, hx, hy, u):
    """(-Lap - omega^2 * m * mass_factor) applied to a 2D array u."""
    out = neg_laplacian_values(u, hx, hy)
    out -= (omega**2) * m * mass_factor * u
    return out


def _check_apply_args(p, u):
    if u.grid != p.grid:
        raise ValueError("field grid does not match problem grid")
    if not np.all(np.isfinite(u.values)):
        raise ValueError("operator input contains non-finite entries")


def helmholtz_apply(p, u):
    """Apply the discrete Helmholtz operator H = -Lap - omega^2 m (1 - i gamma)."""
    _check_apply_args(p, u)
    mass = 1.0 - 1j * p.gamma.values
    vals = _operator_values(p.m.values, mass, p.omega, p.grid.hx, p.grid.hy,
                            u.values.astype(np.complex128, copy=False))
    return ComplexField(p.grid, vals)


def shifted_laplacian_apply(p, alpha, beta, u):
    """Apply the shifted-Laplacian operator -Lap - omega^2 m (alpha - i beta).

    With beta = 0 and gamma = 0 this runs the exact same stencil path as
    helmholtz_apply, so the two coincide bit for bit.
    """
    _check_apply_args(p, u)
    mass = complex(alpha, -beta)
    vals = _operator_values(p.m.values, mass, p.omega, p.grid.hx, p.grid.hy,
                            u.values.astype(np.complex128, copy=False))
    return ComplexField(p.grid, vals)


def helmholtz_operator(p):
    """Flat-vector callable x -> H x for solver loops (no field wrapping)."""
    m = p.m.values
    mass = 1.0 - 1j * p.gamma.values
    omega, hx, hy = p.omega, p.grid.hx, p.grid.hy
    shape = p.grid.shape

    def apply(x):
        return _operator_values(m, mass, omega, hx, hy, x.reshape(shape)).ravel()

    return apply


def shifted_laplacian_operator(p, alpha=SL_ALPHA, beta=SL_BETA):
    """Flat-vector callable for the shifted-Laplacian operator."""
    m = p.m.values
    mass = complex(alpha, -beta)
    omega, hx, hy = p.omega, p.grid.hx, p.grid.hy
    shape = p.grid.shape

    def apply(x):
        return _operator_values(m, mass, omega, hx, hy, x.reshape(shape)).ravel()

    return apply


# ---------------------------------------------------------------------------
# Dense assembly (independent of the stencil path; used as oracle and for
# coarse-level direct solves)
# ---------------------------------------------------------------------------

def _neg_laplacian_dense(grid):
    def tridiag(n, h):
        t = np.zeros((n, n))
        idx = np.arange(n)
        t[idx, idx] = 2.0 / h**2
        t[idx[:-1], idx[:-1] + 1] = -1.0 / h**2
        t[idx[1:], idx[1:] - 1] = -1.0 / h**2
        return t

    ix = np.eye(grid.nx)
    iy = np.eye(grid.ny)
    return np.kron(iy, tridiag(grid.nx, grid.hx)) + np.kron(tridiag(grid.ny, grid.hy), ix)


def helmholtz_dense(p):
    """Dense (n x n) assembly of the Helmholtz operator."""
    mass = (1.0 - 1j * p.gamma.values).ravel() * p.m.values.ravel()
    return _neg_laplacian_dense(p.grid).astype(np.complex128) - (p.omega**2) * np.diag(mass)


def shifted_laplacian_dense(p, alpha=SL_ALPHA, beta=SL_BETA):
    """Dense assembly of the shifted-Laplacian operator."""
    mass = complex(alpha, -beta) * p.m.values.ravel()
    return _neg_laplacian_dense(p.grid).astype(np.complex128) - (p.omega**2) * np.diag(mass)


# ---------------------------------------------------------------------------
# Absorbing layer, sources, receivers
# ---------------------------------------------------------------------------

def absorbing_layer(grid, thickness_nodes):
    """Quadratic attenuation ramp on the left, right, and bottom boundaries.

    gamma rises from 0 at `thickness_nodes` inward to 1 on the boundary; the
    top row stays 0 (reflecting free surface).
    """
    t = int(thickness_nodes)
    if t < 0 or t >= min(grid.nx, grid.ny) / 2:
        raise ValueError(f"absorbing layer of {t} nodes does not fit a {grid.nx}x{grid.ny} grid")
    g = np.zeros(grid.shape)
    if t > 0:
        ix = np.arange(grid.nx)
        iy = np.arange(grid.ny)
        left = np.clip((t - ix) / t, 0.0, 1.0) ** 2
        right = np.clip((t - (grid.nx - 1 - ix)) / t, 0.0, 1.0) ** 2
        bottom = np.clip((t - (grid.ny - 1 - iy)) / t, 0.0, 1.0) ** 2
        g = np.maximum(np.maximum(left[None, :], right[None, :]), bottom[:, None])
        g[0, :] = 0.0
    return AttenuationField(grid, g)


def point_source(grid, node):
    """Discrete delta at a node: value 1/(hx*hy) there, zero elsewhere."""
    node = int(node)
    if not 0 <= node < grid.n_nodes:
        raise ValueError(f"source node {node} outside grid with {grid.n_nodes} nodes")
    vals = np.zeros(grid.shape, dtype=np.complex128)
    vals.ravel()[node] = 1.0 / (grid.hx * grid.hy)
    return ComplexField(grid, vals)


def grid_for_frequency(f_max, v_min, extent, points_per_wavelength=10):
    """Coarsest grid resolving f_max at the requested points per wavelength.

    Cell counts are rounded up to powers of two (at least 8), so grids for
    different frequencies nest and every grid supports three coarsening
    levels.
    """
    if not (f_max > 0 and v_min > 0):
        raise ValueError("f_max and v_min must be positive")
    lx, ly = extent
    if not (lx > 0 and ly > 0):
        raise ValueError("extent must be positive in both directions")
    h_target = v_min / (f_max * points_per_wavelength)

    def cells(length):
        return max(8, 2 ** math.ceil(math.log2(length / h_target)))

    cx, cy = cells(lx), cells(ly)
    return RegularGrid2D(cx + 1, cy + 1, lx / cx, ly / cy)


def sample_at_receivers(u, layout):
    """Values of u at the layout's receiver nodes, in receiver order (P^T u)."""
    if u.grid != layout.grid:
        raise ValueError("field grid does not match layout grid")
    return u.values.ravel()[list(layout.receivers)].copy()


def scatter_at_receivers(data, layout):
    """Adjoint of sample_at_receivers: scatter receiver values onto the grid (P d)."""
    data = np.asarray(data, dtype=np.complex128)
    if data.shape != (layout.n_receivers,):
        raise ValueError(f"expected {layout.n_receivers} receiver values, got {data.shape}")
    vals = np.zeros(layout.grid.n_nodes, dtype=np.complex128)
    np.add.at(vals, list(layout.receivers), data)
    return ComplexField(layout.grid, vals.reshape(layout.grid.shape))


# ---------------------------------------------------------------------------
# Inter-grid transfer
# ---------------------------------------------------------------------------

def restrict_values(a):
    """Full-weighting restriction of a (ny, nx) array to the coarse grid.

    Boundary rows/columns use edge replication so constants are preserved
    exactly everywhere.
    """
    ny, nx = a.shape
    if (nx - 1) % 2 or (ny - 1) % 2 or nx < 5 or ny < 5:
        raise ValueError(f"{nx}x{ny} grid admits no standard coarsening")
    p = np.pad(a, 1, mode="edge")
    c = p[1:-1:2, 1:-1:2]  # fine even nodes, shifted by the pad
    n = p[0:-2:2, 1:-1:2] + p[2::2, 1:-1:2] + p[1:-1:2, 0:-2:2] + p[1:-1:2, 2::2]
    d = p[0:-2:2, 0:-2:2] + p[0:-2:2, 2::2] + p[2::2, 0:-2:2] + p[2::2, 2::2]
    return (4.0 * c + 2.0 * n + d) / 16.0


def prolong_values(a, fine_shape):
    """Bilinear prolongation of a coarse (ny, nx) array onto the fine grid."""
    ny_f, nx_f = fine_shape
    ny_c, nx_c = a.shape
    if nx_f != 2 * (nx_c - 1) + 1 or ny_f != 2 * (ny_c - 1) + 1:
        raise ValueError(f"coarse {nx_c}x{ny_c} does not prolong onto {nx_f}x{ny_f}")
    out = np.zeros(fine_shape, dtype=a.dtype)
    out[::2, ::2] = a
    out[1::2, ::2] = 0.5 * (a[:-1, :] + a[1:, :])
    out[::2, 1::2] = 0.5 * (a[:, :-1] + a[:, 1:])
    out[1::2, 1::2] = 0.25 * (a[:-1, :-1] + a[:-1, 1:] + a[1:, :-1] + a[1:, 1:])
    return out


def restrict(fine):
    """Restrict a ComplexField to the next coarser grid."""
    return ComplexField(fine.grid.coarsen(), restrict_values(fine.values))


def prolong(coarse):
    """Prolong a ComplexField to the next finer grid."""
    g = coarse.grid
    fine = RegularGrid2D(2 * (g.nx - 1) + 1, 2 * (g.ny - 1) + 1, g.hx / 2.0, g.hy / 2.0)
    return ComplexField(fine, prolong_values(coarse.values, fine.shape))


def resample_to_grid(values, grid_from, grid_to):
    """Bilinear resample of a (ny, nx) array between grids covering one extent."""
    lx_f, ly_f = grid_from.extent
    lx_t, ly_t = grid_to.extent
    if not (math.isclose(lx_f, lx_t, rel_tol=1e-9) and math.isclose(ly_f, ly_t, rel_tol=1e-9)):
        raise ValueError("grids cover different physical extents")
    x = np.arange(grid_to.nx) * grid_to.hx / grid_from.hx
    y = np.arange(grid_to.ny) * grid_to.hy / grid_from.hy
    ix = np.clip(np.floor(x).astype(int), 0, grid_from.nx - 2)
    iy = np.clip(np.floor(y).astype(int), 0, grid_from.ny - 2)
    tx = (x - ix)[None, :]
    ty = (y - iy)[:, None]
    a = values
    out = ((1 - ty) * (1 - tx) * a[np.ix_(iy, ix)] + (1 - ty) * tx * a[np.ix_(iy, ix + 1)]
           + ty * (1 - tx) * a[np.ix_(iy + 1, ix)] + ty * tx * a[np.ix_(iy + 1, ix + 1)])
    return out
