"""Encoder-solver CNN pair and the multigrid-augmented preconditioner.

The encoder U-Net consumes the (nondimensionalized) squared slowness once
per medium and emits context feature maps at every resolution level. The
solver U-Net maps a residual (as re/im channels plus the attenuation
profile) to an error estimate, concatenating the encoder contexts at the
matching levels. One shifted-Laplacian V-cycle refines the network output;
the composition is the preconditioner handed to FGMRES.
"""

from __future__ import annotations

import struct

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .grid import ComplexField
from .multigrid import VCyclePreconditioner

__all__ = [
    "EncoderNet",
    "SolverNet",
    "EncoderSolver",
    "MvuPreconditioner",
    "mvu_precondition",
    "save_checkpoint",
    "load_checkpoint",
]

DTYPE = torch.float32


class ResidualConv(nn.Module):
    """Single-convolution residual layer: relu(x + conv3x3(x))."""

    def __init__(self, channels):
        super().__init__()
        self.conv = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, x):
        return F.relu(x + self.conv(x))


def _res_stack(channels, count=2):
    return nn.Sequential(*[ResidualConv(channels) for _ in range(count)])


def _down(cin, cout):
    # stride-2 convolution; handles odd sizes via floor((n-1)/2)+1
    return nn.Conv2d(cin, cout, 3, stride=2, padding=1)


def _upsample_to(x, target_hw):
    up = F.interpolate(x, scale_factor=2, mode="nearest")
    return up[..., : target_hw[0], : target_hw[1]]


class EncoderNet(nn.Module):
    """Medium-to-context U-Net.

    Downward: conv + 2 residual layers per level, coarsening by stride-2
    convolutions, channel width doubling from `width`. Upward: upsample,
    concatenate the matching down feature, merge, one residual layer. The
    up-path features are the per-level context maps.
    """

    def __init__(self, levels=3, width=8):
        super().__init__()
        self.levels = levels
        self.width = width
        widths = [width * 2**i for i in range(levels)]
        self.stem = nn.Conv2d(1, widths[0], 3, padding=1)
        self.stem_res = _res_stack(widths[0])
        self.downs = nn.ModuleList([_down(widths[i], widths[i + 1]) for i in range(levels - 1)])
        self.down_res = nn.ModuleList([_res_stack(widths[i + 1]) for i in range(levels - 1)])
        self.ups = nn.ModuleList(
            [nn.Conv2d(widths[i + 1], widths[i], 3, padding=1) for i in range(levels - 1)])
        self.merges = nn.ModuleList(
            [nn.Conv2d(2 * widths[i], widths[i], 3, padding=1) for i in range(levels - 1)])
        self.up_res = nn.ModuleList([ResidualConv(widths[i]) for i in range(levels - 1)])

    def forward(self, m):
        feats = [self.stem_res(self.stem(m))]
        for down, res in zip(self.downs, self.down_res):
            feats.append(res(down(feats[-1])))
        contexts = [None] * self.levels
        contexts[-1] = feats[-1]
        for i in range(self.levels - 2, -1, -1):
            up = self.ups[i](_upsample_to(contexts[i + 1], feats[i].shape[-2:]))
            merged = self.merges[i](torch.cat([up, feats[i]], dim=1))
            contexts[i] = self.up_res[i](merged)
        return contexts


class SolverNet(nn.Module):
    """Residual-to-error U-Net that concatenates encoder contexts per level."""

    def __init__(self, levels=3, width=8):
        super().__init__()
        self.levels = levels
        self.width = width
        widths = [width * 2**i for i in range(levels)]
        self.stem = nn.Conv2d(3, widths[0], 3, padding=1)
        self.stem_res = _res_stack(widths[0])
        self.downs = nn.ModuleList([_down(widths[i], widths[i + 1]) for i in range(levels - 1)])
        self.down_res = nn.ModuleList([_res_stack(widths[i + 1]) for i in range(levels - 1)])
        self.ctx_merges = nn.ModuleList(
            [nn.Conv2d(2 * widths[i], widths[i], 3, padding=1) for i in range(levels)])
        self.ups = nn.ModuleList(
            [nn.Conv2d(widths[i + 1], widths[i], 3, padding=1) for i in range(levels - 1)])
        self.skip_merges = nn.ModuleList(
            [nn.Conv2d(2 * widths[i], widths[i], 3, padding=1) for i in range(levels - 1)])
        self.up_res = nn.ModuleList([ResidualConv(widths[i]) for i in range(levels - 1)])
        self.head = nn.Conv2d(widths[0], 2, 3, padding=1)

    def forward(self, r_and_gamma, contexts):
        x = self.stem_res(self.stem(r_and_gamma))
        kept = []
        for i in range(self.levels):
            x = self.ctx_merges[i](torch.cat([x, contexts[i]], dim=1))
            if i < self.levels - 1:
                kept.append(x)
                x = self.down_res[i](self.downs[i](x))
        for i in range(self.levels - 2, -1, -1):
            up = self.ups[i](_upsample_to(x, kept[i].shape[-2:]))
            x = self.up_res[i](self.skip_merges[i](torch.cat([up, kept[i]], dim=1)))
        return self.head(x)


class EncoderSolver:
    """The trainable encoder-solver pair with its normalization conventions.

    The encoder input is the dimensionless mass coefficient
    omega^2 * m * hx * hy, so one set of weights transfers across grid
    resolutions at a fixed point-per-wavelength policy. Residual inputs are
    divided by their max component magnitude and outputs rescaled by the
    same factor, making the solver positively homogeneous: exact to
    rounding for any c > 0 and bitwise for power-of-two factors.
    """

    def __init__(self, levels=3, base_width=8, seed=0, dtype=DTYPE):
        self.levels = levels
        self.base_width = base_width
        self.dtype = dtype
        self.encoder = EncoderNet(levels, base_width).to(dtype)
        self.solver = SolverNet(levels, base_width).to(dtype)
        if seed is not None:
            self.init_weights(seed)

    def init_weights(self, seed):
        """He-uniform convolution weights, zero biases, from a seeded stream.

        The output head starts at zero so an untrained solver is the zero
        map and the combined preconditioner begins exactly at plain V-cycle
        quality.
        """
        rng = np.random.default_rng(seed)
        for module in list(self.encoder.modules()) + list(self.solver.modules()):
            if isinstance(module, nn.Conv2d):
                fan_in = module.in_channels * module.kernel_size[0] * module.kernel_size[1]
                bound = np.sqrt(6.0 / fan_in)
                w = rng.uniform(-bound, bound, size=tuple(module.weight.shape))
                with torch.no_grad():
                    module.weight.copy_(torch.from_numpy(w))
                    module.bias.zero_()
        with torch.no_grad():
            self.solver.head.weight.zero_()
            self.solver.head.bias.zero_()

    def parameters(self):
        yield from self.encoder.parameters()
        yield from self.solver.parameters()

    def state_tensors(self):
        """All parameters in declaration order (encoder first)."""
        return list(self.encoder.state_dict().values()) + list(self.solver.state_dict().values())

    def clone_state(self):
        return [t.detach().clone() for t in self.state_tensors()]

    def restore_state(self, tensors):
        with torch.no_grad():
            for dst, src in zip(self.state_tensors(), tensors):
                dst.copy_(src)

    # -- encoder ------------------------------------------------------------

    @staticmethod
    def scaled_medium(problem):
        """Dimensionless encoder input for one Helmholtz problem."""
        g = problem.grid
        return (problem.omega**2 * g.hx * g.hy) * problem.m.values

    def context(self, problem):
        """Context tensors for a problem's medium; computed once, then reused."""
        kappa = torch.from_numpy(self.scaled_medium(problem)).to(self.dtype)[None, None]
        with torch.no_grad():
            return [z.detach() for z in self.encoder(kappa)]

    # -- solver -------------------------------------------------------------

    def forward_normalized(self, r_t, gamma_t, contexts):
        """Training/inference core: normalize, run the solver, rescale.

        r_t: (B, 2, H, W) residual channels; gamma_t: (B, 1, H, W);
        contexts: per-level tensors broadcastable to batch B.
        """
        amax = r_t.detach().abs().amax(dim=(1, 2, 3))
        scale = torch.where(amax > 0, amax, torch.ones_like(amax)).view(-1, 1, 1, 1)
        ctx = [z.expand(r_t.shape[0], *z.shape[1:]) if z.shape[0] == 1 and r_t.shape[0] > 1
               else z for z in contexts]
        out = self.solver(torch.cat([r_t / scale, gamma_t], dim=1), ctx)
        return out * scale

    def apply(self, r_values, gamma_values, contexts):
        """Map a complex residual array to a complex error-estimate array."""
        if not (r_values.real.any() or r_values.imag.any()):
            return np.zeros_like(r_values, dtype=np.complex128)
        r_t = torch.stack([torch.from_numpy(np.ascontiguousarray(r_values.real)),
                           torch.from_numpy(np.ascontiguousarray(r_values.imag))])[None].to(self.dtype)
        g_t = torch.from_numpy(gamma_values).to(self.dtype)[None, None]
        with torch.no_grad():
            out = self.forward_normalized(r_t, g_t, contexts)
        o = out[0].to(torch.float64).numpy()
        return o[0] + 1j * o[1]


class MvuPreconditioner:
    """Solver-network error estimate refined by one shifted-Laplacian V-cycle.

    Acts on flat residual vectors, as handed out by FGMRES. The encoder
    context is computed once at construction for the bound problem.
    """

    def __init__(self, model, problem, vcycle_config=None):
        self.model = model
        self.problem = problem
        self.vcycle = VCyclePreconditioner(problem, vcycle_config)
        self.contexts = model.context(problem)
        self._gamma = problem.gamma.values
        self._shape = problem.grid.shape

    def __call__(self, r_flat):
        r2 = r_flat.reshape(self._shape)
        e0 = self.model.apply(r2, self._gamma, self.contexts)
        return self.vcycle.cycle_values(e0, r2).ravel()


def mvu_precondition(model, p, r, vcycle_config=None, preconditioner=None):
    """One application of the combined preconditioner to a residual field."""
    if r.grid != p.grid:
        raise ValueError("residual grid does not match problem grid")
    pre = preconditioner or MvuPreconditioner(model, p, vcycle_config)
    return ComplexField(p.grid, pre(r.values.ravel()).reshape(p.grid.shape))


# ---------------------------------------------------------------------------
# Checkpoints: magic, architecture descriptor, parameters as little-endian f64
# ---------------------------------------------------------------------------

WKW1_MAGIC = b"WKW1"
_WKW1_HEADER = struct.Struct("<4sII")


def save_checkpoint(model, path):
    with open(path, "wb") as f:
        f.write(_WKW1_HEADER.pack(WKW1_MAGIC, model.levels, model.base_width))
        for t in model.state_tensors():
            f.write(t.detach().to(torch.float64).numpy().astype("<f8").tobytes())


def load_checkpoint(path, dtype=DTYPE):
    with open(path, "rb") as f:
        buf = f.read()
    magic, levels, base_width = _WKW1_HEADER.unpack_from(buf, 0)
    if magic != WKW1_MAGIC:
        raise ValueError(f"bad checkpoint magic {magic!r}")
    model = EncoderSolver(levels=levels, base_width=base_width, seed=None, dtype=dtype)
    offset = _WKW1_HEADER.size
    for t in model.state_tensors():
        n = t.numel()
        vals = np.frombuffer(buf, dtype="<f8", count=n, offset=offset)
        if vals.size != n:
            raise ValueError("checkpoint truncated")
        with torch.no_grad():
            t.copy_(torch.from_numpy(vals.copy()).view(t.shape).to(t.dtype))
        offset += 8 * n
    if offset != len(buf):
        raise ValueError("checkpoint has trailing bytes")
    return model
