"""Built-in synthetic velocity models and perturbations."""

from __future__ import annotations

import numpy as np

from .grid import SlownessSquaredField

__all__ = [
    "ramp_model",
    "layered_model",
    "salt_blob_model",
    "gaussian_velocity_blob",
    "build_model",
]


def _to_m(v):
    return 1.0 / v**2


def ramp_model(grid, v_top, v_bottom):
    """Velocity linear in depth from v_top (surface) to v_bottom."""
    v = np.linspace(float(v_top), float(v_bottom), grid.ny)
    return SlownessSquaredField(grid, np.broadcast_to(_to_m(v)[:, None], grid.shape).copy())


def layered_model(grid, interface_fracs, velocities):
    """Piecewise-constant layers split at depth fractions of the domain."""
    fracs = list(interface_fracs)
    if len(velocities) != len(fracs) + 1:
        raise ValueError("need one velocity per layer (len(interfaces)+1)")
    if any(not 0 < f < 1 for f in fracs) or sorted(fracs) != fracs:
        raise ValueError("interface fractions must be increasing and inside (0, 1)")
    iy = np.arange(grid.ny) / (grid.ny - 1)
    v = np.full(grid.ny, float(velocities[0]))
    for f, vel in zip(fracs, velocities[1:]):
        v[iy >= f] = float(vel)
    return SlownessSquaredField(grid, np.broadcast_to(_to_m(v)[:, None], grid.shape).copy())


def _gaussian_bump(grid, center_frac, radius_frac):
    lx, ly = grid.extent
    x = np.arange(grid.nx) * grid.hx
    y = np.arange(grid.ny) * grid.hy
    cx, cy = center_frac[0] * lx, center_frac[1] * ly
    r = radius_frac * min(lx, ly)
    d2 = ((x[None, :] - cx) ** 2 + (y[:, None] - cy) ** 2) / (2.0 * r**2)
    return np.exp(-d2)


def salt_blob_model(grid, v_top, v_bottom, center_frac=(0.5, 0.55),
                    radius_frac=0.16, amplitude=0.35):
    """Depth ramp plus a fast Gaussian intrusion (salt-body stand-in)."""
    base = ramp_model(grid, v_top, v_bottom)
    v = 1.0 / np.sqrt(base.values)
    v = v * (1.0 + amplitude * _gaussian_bump(grid, center_frac, radius_frac))
    return SlownessSquaredField(grid, _to_m(v))


def gaussian_velocity_blob(m, center_frac=(0.5, 0.5), radius_frac=0.15, amplitude=0.25):
    """Multiply the velocity by (1 + amplitude * gaussian); returns the new m."""
    factor = 1.0 + amplitude * _gaussian_bump(m.grid, center_frac, radius_frac)
    return SlownessSquaredField(m.grid, m.values / factor**2)


def build_model(grid, spec):
    """Construct a model from a config mapping with a 'kind' discriminator."""
    kind = spec.get("kind")
    if kind == "ramp":
        return ramp_model(grid, spec["v_top"], spec["v_bottom"])
    if kind == "layered":
        return layered_model(grid, spec["interfaces"], spec["velocities"])
    if kind == "salt_blob":
        return salt_blob_model(grid, spec["v_top"], spec["v_bottom"],
                               tuple(spec.get("center", (0.5, 0.55))),
                               spec.get("radius", 0.16),
                               spec.get("amplitude", 0.35))
    if kind == "file":
        from .fileio import load_field
        from .grid import resample_to_grid
        field = load_field(spec["path"], kind="slowness")
        return SlownessSquaredField(grid, resample_to_grid(field.values, field.grid, grid))
    raise ValueError(f"unknown model kind {kind!r}")
