"""Binary field files (WKF1), dataset containers, and CSV helpers."""

from __future__ import annotations

import struct

import numpy as np

from .grid import AttenuationField, ComplexField, RegularGrid2D, SlownessSquaredField

WKF1_MAGIC = b"WKF1"
_WKF1_HEADER = struct.Struct("<4sIIddB3x")  # 32 bytes
assert _WKF1_HEADER.size == 32

DTYPE_REAL = 0
DTYPE_COMPLEX = 1


def write_field_bytes(grid, values):
    """Serialize a (ny, nx) real or complex array as one WKF1 record."""
    a = np.ascontiguousarray(values)
    if a.shape != grid.shape:
        raise ValueError(f"array shape {a.shape} does not match grid {grid.shape}")
    if np.iscomplexobj(a):
        dtype = DTYPE_COMPLEX
        payload = a.astype("<c16").tobytes()
    else:
        dtype = DTYPE_REAL
        payload = a.astype("<f8").tobytes()
    header = _WKF1_HEADER.pack(WKF1_MAGIC, grid.nx, grid.ny, grid.hx, grid.hy, dtype)
    return header + payload


def read_field_bytes(buf, offset=0):
    """Parse one WKF1 record; returns (grid, values, next_offset)."""
    magic, nx, ny, hx, hy, dtype = _WKF1_HEADER.unpack_from(buf, offset)
    if magic != WKF1_MAGIC:
        raise ValueError(f"bad field magic {magic!r}")
    n = nx * ny
    start = offset + _WKF1_HEADER.size
    if dtype == DTYPE_REAL:
        vals = np.frombuffer(buf, dtype="<f8", count=n, offset=start).reshape(ny, nx)
        end = start + 8 * n
    elif dtype == DTYPE_COMPLEX:
        vals = np.frombuffer(buf, dtype="<c16", count=n, offset=start).reshape(ny, nx)
        end = start + 16 * n
    else:
        raise ValueError(f"unknown field dtype {dtype}")
    return RegularGrid2D(nx, ny, hx, hy), vals.copy(), end


def save_field(path, field_or_grid, values=None):
    """Write a field object (or grid + raw array) to a WKF1 file."""
    if values is None:
        grid, values = field_or_grid.grid, field_or_grid.values
    else:
        grid = field_or_grid
    with open(path, "wb") as f:
        f.write(write_field_bytes(grid, values))


def load_field(path, kind="auto"):
    """Read a WKF1 file.

    kind: 'auto' returns ComplexField for complex payloads and a raw
    (grid, array) pair for real ones; 'slowness'/'attenuation'/'complex'
    wrap in the corresponding field type.
    """
    with open(path, "rb") as f:
        buf = f.read()
    grid, vals, _ = read_field_bytes(buf)
    if kind == "slowness":
        return SlownessSquaredField(grid, vals.real if np.iscomplexobj(vals) else vals)
    if kind == "attenuation":
        return AttenuationField(grid, vals.real if np.iscomplexobj(vals) else vals)
    if kind == "complex":
        return ComplexField(grid, vals)
    if np.iscomplexobj(vals):
        return ComplexField(grid, vals)
    return grid, vals


# ---------------------------------------------------------------------------
# Training dataset container: gamma stored once, then (r, e, m) per sample,
# each a WKF1 record, with an offset manifest up front.
# ---------------------------------------------------------------------------

WKDS_MAGIC = b"WKDS"


def save_dataset(path, dataset):
    """Write a list of training samples to a single container file."""
    if not dataset:
        raise ValueError("dataset is empty")
    gamma = dataset[0].gamma
    records = [write_field_bytes(gamma.grid, gamma.values)]
    for s in dataset:
        records.append(write_field_bytes(s.r.grid, s.r.values))
        records.append(write_field_bytes(s.e_true.grid, s.e_true.values))
        records.append(write_field_bytes(s.m.grid, s.m.values))
    head = struct.Struct("<4sI").pack(WKDS_MAGIC, len(dataset))
    manifest_size = 8 * len(records)
    offsets = []
    pos = len(head) + manifest_size
    for rec in records:
        offsets.append(pos)
        pos += len(rec)
    with open(path, "wb") as f:
        f.write(head)
        f.write(np.asarray(offsets, dtype="<u8").tobytes())
        for rec in records:
            f.write(rec)


def load_dataset(path):
    """Read a container written by save_dataset; returns a list of samples."""
    from .data import TrainingSample  # local import to avoid a cycle

    with open(path, "rb") as f:
        buf = f.read()
    magic, count = struct.Struct("<4sI").unpack_from(buf, 0)
    if magic != WKDS_MAGIC:
        raise ValueError(f"bad dataset magic {magic!r}")
    offsets = np.frombuffer(buf, dtype="<u8", count=1 + 3 * count, offset=8)
    grid, gvals, _ = read_field_bytes(buf, int(offsets[0]))
    gamma = AttenuationField(grid, gvals.real if np.iscomplexobj(gvals) else gvals)
    samples = []
    for i in range(count):
        _, rvals, _ = read_field_bytes(buf, int(offsets[1 + 3 * i]))
        _, evals, _ = read_field_bytes(buf, int(offsets[2 + 3 * i]))
        _, mvals, _ = read_field_bytes(buf, int(offsets[3 + 3 * i]))
        samples.append(TrainingSample(
            r=ComplexField(grid, rvals),
            e_true=ComplexField(grid, evals),
            m=SlownessSquaredField(grid, mvals.real if np.iscomplexobj(mvals) else mvals),
            gamma=gamma,
        ))
    return samples


# ---------------------------------------------------------------------------
# CSV helpers: fixed formatting so identical numbers give identical bytes.
# ---------------------------------------------------------------------------

def format_csv_value(v):
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (np.floating,)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


class CsvWriter:
    """Append-only CSV writer with a fixed header and deterministic formatting."""

    def __init__(self, path, columns):
        self.path = path
        self.columns = list(columns)
        with open(path, "w") as f:
            f.write(",".join(self.columns) + "\n")

    def write_row(self, *values):
        if len(values) != len(self.columns):
            raise ValueError(f"expected {len(self.columns)} values, got {len(values)}")
        with open(self.path, "a") as f:
            f.write(",".join(format_csv_value(v) for v in values) + "\n")
