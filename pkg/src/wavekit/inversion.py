"""Physics-guided FWI: observation model, encoded misfit, Gauss-Newton with
CG, regularizers, and frequency continuation with a retraining hook."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import (
    ComplexField,
    HelmholtzProblem,
    SlownessSquaredField,
    SourceReceiverLayout,
    absorbing_layer,
    grid_for_frequency,
    neg_laplacian_values,
    point_source,
    resample_to_grid,
    sample_at_receivers,
    scatter_at_receivers,
)
from .krylov import (
    FORWARD_TOL,
    SENSITIVITY_TOL,
    SIMULATION_TOL,
    solve_adjoint,
    solve_forward,
)
from .multigrid import VCycleConfig, VCyclePreconditioner
from .nets import MvuPreconditioner
from .retrain import should_retrain

__all__ = [
    "SolverFailure",
    "GridPolicy",
    "SurveyGeometry",
    "Survey",
    "SimSourceEncoding",
    "SolverSettings",
    "PreconditionerFactory",
    "Regularizer",
    "regularizer_eval",
    "simulate_observations",
    "schedule_grids",
    "rademacher_encode",
    "EncodedObjective",
    "misfit",
    "gradient",
    "gn_hessian_vec",
    "conjugate_gradient",
    "gauss_newton_step",
    "GnStepInfo",
    "CycleSpec",
    "FcSchedule",
    "frequency_continuation",
]


class SolverFailure(RuntimeError):
    """A linear solve failed or exceeded its iteration cap in strict mode."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class GridPolicy:
    """How frequencies map to grids: fixed extent, sizing velocity, density,
    and the absorbing-layer fraction shared by every consumer."""

    extent: tuple
    v_min: float
    points_per_wavelength: int = 10
    abl_frac: float = 0.125

    def grid_for(self, f_hz):
        return grid_for_frequency(f_hz, self.v_min, self.extent,
                                  self.points_per_wavelength)

    def abl_nodes_for(self, grid):
        return max(2, int(round(self.abl_frac * min(grid.nx, grid.ny))))

    def gamma_for(self, grid):
        return absorbing_layer(grid, self.abl_nodes_for(grid))


@dataclass(frozen=True)
class SurveyGeometry:
    """Physical source/receiver positions (meters), snapped onto grids on demand."""

    source_xy: tuple
    receiver_xy: tuple

    def layout_on(self, grid):
        def snap(pos):
            x, y = pos
            ix, iy = x / grid.hx, y / grid.hy
            rix, riy = round(ix), round(iy)
            if abs(ix - rix) > 1e-6 or abs(iy - riy) > 1e-6:
                raise ValueError(f"position {pos} is not a node of the {grid.nx}x{grid.ny} grid")
            return grid.node_index(int(rix), int(riy))

        return SourceReceiverLayout(
            grid,
            tuple(snap(p) for p in self.source_xy),
            tuple(snap(p) for p in self.receiver_xy),
        )


@dataclass(frozen=True)
class Survey:
    """Acquisition description plus observed data.

    Observations are kept per simulation grid so that predictions and data
    always share one discretization: blocks maps (nx, ny) to a pair of
    arrays d_obs[j, s] (complex receiver vectors for frequency index j and
    source s) and sigma2[j, s] (scalar noise variance per pair, 1.0 when
    noise-free).
    """

    geometry: SurveyGeometry
    policy: GridPolicy
    freqs_hz: tuple
    blocks: dict
    noise_fraction: float = 0.0

    def __post_init__(self):
        freqs = tuple(float(f) for f in self.freqs_hz)
        if any(b <= a for a, b in zip(freqs, freqs[1:])):
            raise ValueError("frequencies must be strictly increasing")
        n_f, n_s = len(freqs), len(self.geometry.source_xy)
        n_r = len(self.geometry.receiver_xy)
        for key, block in self.blocks.items():
            if block["d_obs"].shape != (n_f, n_s, n_r):
                raise ValueError(f"d_obs block {key} has shape {block['d_obs'].shape}, "
                                 f"expected {(n_f, n_s, n_r)}")
            if block["sigma2"].shape != (n_f, n_s):
                raise ValueError(f"sigma2 block {key} has shape {block['sigma2'].shape}")
        object.__setattr__(self, "freqs_hz", freqs)

    def data_for(self, grid):
        key = (grid.nx, grid.ny)
        if key not in self.blocks:
            raise KeyError(f"survey has no observations simulated on a "
                           f"{grid.nx}x{grid.ny} grid")
        return self.blocks[key]

    @property
    def omegas(self):
        return tuple(2.0 * np.pi * f for f in self.freqs_hz)

    @property
    def n_sources(self):
        return len(self.geometry.source_xy)

    @property
    def base_grid(self):
        """Finest grid in play: sized for the highest frequency."""
        return self.policy.grid_for(self.freqs_hz[-1])


@dataclass(frozen=True)
class SolverSettings:
    forward_tol: float = FORWARD_TOL
    sensitivity_tol: float = SENSITIVITY_TOL
    simulation_tol: float = SIMULATION_TOL
    max_iter: int = 300
    restart: int = 30


class PreconditionerFactory:
    """Builds the per-problem preconditioner for one of the run modes."""

    MODES = ("mvu", "vcycle", "none")

    def __init__(self, mode, model=None, vcycle_config=None):
        if mode not in self.MODES:
            raise ValueError(f"unknown preconditioner mode {mode!r}")
        if mode == "mvu" and model is None:
            raise ValueError("mvu mode needs a trained encoder-solver model")
        self.mode = mode
        self.model = model
        self.vcycle_config = vcycle_config or VCycleConfig()

    def __call__(self, problem):
        if self.mode == "mvu":
            return MvuPreconditioner(self.model, problem, self.vcycle_config)
        if self.mode == "vcycle":
            return VCyclePreconditioner(problem, self.vcycle_config)
        return None


# ---------------------------------------------------------------------------
# Observation simulation
# ---------------------------------------------------------------------------

def simulate_observations(m_true, geometry, policy, freqs_hz, noise_fraction=0.01,
                          rng=None, settings=None, max_iter=2000, grids=None):
    """Solve the forward problem per (source, frequency) and record noisy data.

    Data are simulated on every grid the inversion will evaluate on (by
    default just the finest one), so predictions and observations always
    share a discretization. Noise is complex Gaussian with
    std = noise_fraction * RMS of each trace; the matching variance becomes
    the data weight.
    """
    settings = settings or SolverSettings()
    rng = rng if rng is not None else np.random.default_rng(0)
    freqs = tuple(float(f) for f in freqs_hz)
    if grids is None:
        grids = [policy.grid_for(freqs[-1])]
    blocks = {}
    for grid in grids:
        key = (grid.nx, grid.ny)
        if key in blocks:
            continue
        m = SlownessSquaredField(grid, resample_to_grid(m_true.values, m_true.grid, grid))
        gamma = policy.gamma_for(grid)
        layout = geometry.layout_on(grid)
        n_f, n_s, n_r = len(freqs), layout.n_sources, layout.n_receivers
        d_obs = np.zeros((n_f, n_s, n_r), dtype=np.complex128)
        sigma2 = np.ones((n_f, n_s))
        for j, f in enumerate(freqs):
            problem = HelmholtzProblem(m, gamma, 2.0 * np.pi * f)
            pre = VCyclePreconditioner(problem)
            for s, node in enumerate(layout.sources):
                u, report = solve_forward(problem, point_source(grid, node), precond=pre,
                                          tol=settings.simulation_tol, max_iter=max_iter,
                                          restart=settings.restart)
                if not report.converged:
                    raise SolverFailure(
                        f"observation solve failed for source {s}, frequency {f} Hz "
                        f"on the {grid.nx}x{grid.ny} grid", report)
                d = sample_at_receivers(u, layout)
                if noise_fraction > 0:
                    sigma = noise_fraction * np.sqrt(np.mean(np.abs(d) ** 2))
                    d = d + (sigma / np.sqrt(2.0)) * (rng.standard_normal(n_r)
                                                      + 1j * rng.standard_normal(n_r))
                    sigma2[j, s] = sigma**2
                d_obs[j, s] = d
        blocks[key] = {"d_obs": d_obs, "sigma2": sigma2}
    return Survey(geometry, policy, freqs, blocks, noise_fraction)


def schedule_grids(policy, freqs_hz, schedule):
    """All distinct grids the schedule's windows run on (finest first)."""
    grids = {}
    for cyc in schedule.cycles:
        for i in range(cyc.i_start, cyc.i_end + 1):
            g = policy.grid_for(freqs_hz[i - 1])
            grids[(g.nx, g.ny)] = g
    return sorted(grids.values(), key=lambda g: -g.nx)


# ---------------------------------------------------------------------------
# Simultaneous-source encoding
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SimSourceEncoding:
    """Source-mixing matrix X (n_s x p) with the estimator normalization.

    Rademacher draws estimate the full per-source misfit as
    (1/p) * ||A X||_F^2; the identity encoding enumerates the sources
    exactly (scale 1), which is the ablation mode.
    """

    x: np.ndarray
    scale: float

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] < 1:
            raise ValueError("encoding matrix must be n_s x p with p >= 1")
        if not np.all(np.isin(x, (-1.0, 0.0, 1.0))):
            raise ValueError("encoding entries must be -1, 0, or +1")
        object.__setattr__(self, "x", x)

    @property
    def p(self):
        return self.x.shape[1]

    @classmethod
    def rademacher(cls, n_sources, p=16, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        x = rng.integers(0, 2, size=(n_sources, p)).astype(np.float64) * 2.0 - 1.0
        return cls(x, 1.0 / p)

    @classmethod
    def identity(cls, n_sources):
        return cls(np.eye(n_sources), 1.0)


def rademacher_encode(sources, data, encoding):
    """Mix source and data blocks by the encoding matrix: (G X, D X)."""
    x = encoding.x
    if sources.shape[1] != x.shape[0] or data.shape[1] != x.shape[0]:
        raise ValueError("source/data blocks and encoding matrix disagree on n_s")
    return sources @ x, data @ x


# ---------------------------------------------------------------------------
# Regularizers
# ---------------------------------------------------------------------------

class Regularizer:
    """Quadratic model regularizers around a fixed reference model.

    spline_smoothing: ||Lap_h (m - m_ref)||^2 promotes smooth updates;
    diffusion: ||grad_h (m - m_ref)||^2 with the nodal forward-difference
    gradient allows sharper features. Both expose exact gradient and
    Hessian-vector operators (the Hessian is constant).
    """

    KINDS = ("spline_smoothing", "diffusion")

    def __init__(self, kind, m_ref, weight, grid):
        if kind not in self.KINDS:
            raise ValueError(f"unknown regularizer kind {kind!r}")
        if weight < 0:
            raise ValueError("regularizer weight must be non-negative")
        m_ref = np.asarray(m_ref, dtype=np.float64)
        if m_ref.shape != grid.shape:
            raise ValueError("m_ref does not live on the given grid")
        self.kind = kind
        self.m_ref = m_ref
        self.weight = float(weight)
        self.grid = grid

    def _lap(self, a):
        return neg_laplacian_values(a.astype(np.float64, copy=True), self.grid.hx, self.grid.hy)

    def _grad_pair(self, a):
        gx = np.diff(a, axis=1) / self.grid.hx
        gy = np.diff(a, axis=0) / self.grid.hy
        return gx, gy

    def _div_adjoint(self, gx, gy):
        out = np.zeros(self.grid.shape)
        out[:, :-1] -= gx / self.grid.hx
        out[:, 1:] += gx / self.grid.hx
        out[:-1, :] -= gy / self.grid.hy
        out[1:, :] += gy / self.grid.hy
        return out

    def value(self, m_values):
        d = m_values - self.m_ref
        if self.kind == "spline_smoothing":
            return float(np.sum(self._lap(d) ** 2))
        gx, gy = self._grad_pair(d)
        return float(np.sum(gx**2) + np.sum(gy**2))

    def gradient(self, m_values):
        return self.hessvec(m_values - self.m_ref)

    def hessvec(self, v):
        if self.kind == "spline_smoothing":
            return 2.0 * self._lap(self._lap(v))
        gx, gy = self._grad_pair(v)
        return 2.0 * self._div_adjoint(gx, gy)


def regularizer_eval(kind, m, m_ref, weight=1.0):
    """Value, gradient and hessian-vector operator of one regularizer term."""
    reg = Regularizer(kind, m_ref.values, weight, m.grid)
    return reg.value(m.values), reg.gradient(m.values), reg.hessvec


# ---------------------------------------------------------------------------
# Encoded misfit objective
# ---------------------------------------------------------------------------

class EncodedObjective:
    """Data misfit over a frequency set on one grid with a fixed encoding.

    Noise weights are folded into the encoded source and data columns, so
    the plain Frobenius misfit of the residual block is the correctly
    weighted objective and stochastic-trace averaging stays exact. Forward
    wavefields are cached and reused by the gradient and Gauss-Newton
    Hessian products. Counters track FGMRES iterations and wall time per
    phase (misfit / gradient / hessvec).
    """

    def __init__(self, m, gamma, survey, freq_indices, encoding, regularizer=None,
                 precond_factory=None, settings=None, strict=True, solve_log=None,
                 solver_backend="fgmres"):
        if solver_backend not in ("fgmres", "direct"):
            raise ValueError(f"unknown solver backend {solver_backend!r}")
        self.m = m
        self.gamma = gamma
        self.survey = survey
        self.freq_indices = tuple(freq_indices)
        self.encoding = encoding
        self.regularizer = regularizer
        self.factory = precond_factory or PreconditionerFactory("vcycle")
        self.settings = settings or SolverSettings()
        self.strict = strict
        self.solve_log = solve_log
        self.solver_backend = solver_backend
        self.layout = survey.geometry.layout_on(m.grid)
        self._data = survey.data_for(m.grid)
        self.counters = {"misfit_iters": 0, "gradient_iters": 0, "hessvec_iters": 0,
                         "misfit_seconds": 0.0, "gradient_seconds": 0.0,
                         "hessvec_seconds": 0.0, "stagnated": 0}
        self._blocks = None
        self._data_grad = None

    # -- internals -----------------------------------------------------------

    def _record(self, phase, report, kind, omega):
        self.counters[f"{phase}_iters"] += report.iterations
        self.counters[f"{phase}_seconds"] += report.wall_time
        if not report.converged:
            self.counters["stagnated"] += 1
            if self.strict:
                raise SolverFailure(
                    f"{kind} solve did not reach {report.tol:g} "
                    f"(relres {report.achieved_relres:.3g} after {report.iterations} its)",
                    report)
        if self.solve_log is not None:
            self.solve_log(kind, omega, report)

    def _solve_forward(self, problem, pre, rhs, phase):
        if self.solver_backend == "direct":
            return pre.solve(rhs)
        u, rep = solve_forward(problem, rhs, precond=pre, tol=self.settings.forward_tol
                               if phase == "misfit" else self.settings.sensitivity_tol,
                               max_iter=self.settings.max_iter, restart=self.settings.restart)
        self._record(phase, rep, "forward", problem.omega)
        return u

    def _solve_adjoint(self, problem, pre, rhs, phase):
        if self.solver_backend == "direct":
            return pre.solve_adjoint(rhs)
        u, rep = solve_adjoint(problem, rhs, precond=pre, tol=self.settings.sensitivity_tol,
                               max_iter=self.settings.max_iter, restart=self.settings.restart)
        self._record(phase, rep, "adjoint", problem.omega)
        return u

    def _backend_for(self, problem):
        if self.solver_backend == "direct":
            from .krylov import DirectHelmholtzSolver
            return DirectHelmholtzSolver(problem)
        return self.factory(problem)

    def _ensure_solved(self):
        if self._blocks is not None:
            return
        grid = self.m.grid
        blocks = []
        data_term = 0.0
        for j in self.freq_indices:
            omega = self.survey.omegas[j]
            problem = HelmholtzProblem(self.m, self.gamma, omega)
            pre = self._backend_for(problem)
            w = 1.0 / np.sqrt(self.sigma_for(j))
            wx = w[:, None] * self.encoding.x  # (n_s, p) weighted mixing
            d_block = self._data["d_obs"][j].T @ wx  # (n_rec, p)
            fields = []
            residuals = np.zeros_like(d_block)
            for k in range(self.encoding.p):
                rhs = np.zeros(grid.n_nodes, dtype=np.complex128)
                amp = wx[:, k] / (grid.hx * grid.hy)
                np.add.at(rhs, list(self.layout.sources), amp)
                u = self._solve_forward(problem, pre,
                                        ComplexField(grid, rhs.reshape(grid.shape)),
                                        "misfit")
                fields.append(u)
                residuals[:, k] = sample_at_receivers(u, self.layout) - d_block[:, k]
            data_term += self.encoding.scale * float(np.sum(np.abs(residuals) ** 2))
            blocks.append({"problem": problem, "pre": pre, "fields": fields,
                           "residuals": residuals})
        self._blocks = blocks
        self._data_term = data_term

    def sigma_for(self, j):
        return self._data["sigma2"][j]

    def set_regularizer(self, regularizer):
        """Attach or swap the regularizer; cached data-term solves are kept."""
        self.regularizer = regularizer

    def _reg_active(self):
        return self.regularizer is not None and self.regularizer.weight > 0

    # -- public surface --------------------------------------------------------

    def value(self):
        self._ensure_solved()
        reg = (self.regularizer.weight * self.regularizer.value(self.m.values)
               if self._reg_active() else 0.0)
        return self._data_term + reg

    def data_term(self):
        self._ensure_solved()
        return self._data_term

    def data_gradient(self):
        """Adjoint-state gradient of the data term (cached after first call)."""
        self._ensure_solved()
        if self._data_grad is None:
            g = np.zeros(self.m.grid.shape)
            mass = 1.0 - 1j * self.gamma.values
            for block in self._blocks:
                problem, pre = block["problem"], block["pre"]
                om2 = problem.omega**2
                for k, u in enumerate(block["fields"]):
                    w_field = scatter_at_receivers(
                        2.0 * self.encoding.scale * block["residuals"][:, k], self.layout)
                    lam = self._solve_adjoint(problem, pre, w_field, "gradient")
                    g += om2 * np.real(np.conj(mass * u.values) * lam.values)
            self._data_grad = g
        return self._data_grad

    def gradient(self):
        """Gradient of the full objective with respect to the squared slowness."""
        g = self.data_gradient().copy()
        if self._reg_active():
            g += self.regularizer.weight * self.regularizer.gradient(self.m.values)
        return g

    def data_hessvec(self, v):
        """Gauss-Newton data-term Hessian times a real model perturbation."""
        self._ensure_solved()
        v = np.asarray(v, dtype=np.float64).reshape(self.m.grid.shape)
        out = np.zeros(self.m.grid.shape)
        mass = 1.0 - 1j * self.gamma.values
        for block in self._blocks:
            problem, pre = block["problem"], block["pre"]
            om2 = problem.omega**2
            for u in block["fields"]:
                rhs = ComplexField(self.m.grid, om2 * mass * u.values * v)
                q = self._solve_forward(problem, pre, rhs, "hessvec")
                y = scatter_at_receivers(sample_at_receivers(q, self.layout), self.layout)
                lam = self._solve_adjoint(problem, pre, y, "hessvec")
                out += 2.0 * self.encoding.scale * om2 * np.real(
                    np.conj(mass * u.values) * lam.values)
        return out

    def hessvec(self, v):
        """Gauss-Newton Hessian (data + regularizer) times a perturbation."""
        out = self.data_hessvec(v)
        if self._reg_active():
            out += self.regularizer.weight * self.regularizer.hessvec(
                np.asarray(v, dtype=np.float64).reshape(self.m.grid.shape))
        return out


def misfit(m, gamma, survey, freq_indices, encoding, regularizer=None, **kw):
    """Objective value plus per-frequency data-term breakdown."""
    obj = EncodedObjective(m, gamma, survey, freq_indices, encoding, regularizer, **kw)
    total = obj.value()
    breakdown = [obj.encoding.scale * float(np.sum(np.abs(b["residuals"]) ** 2))
                 for b in obj._blocks]
    return total, breakdown


def gradient(m, gamma, survey, freq_indices, encoding, regularizer=None, **kw):
    obj = EncodedObjective(m, gamma, survey, freq_indices, encoding, regularizer, **kw)
    return obj.gradient()


def gn_hessian_vec(m, gamma, survey, freq_indices, encoding, v, regularizer=None, **kw):
    obj = EncodedObjective(m, gamma, survey, freq_indices, encoding, regularizer, **kw)
    return obj.hessvec(v)


# ---------------------------------------------------------------------------
# Gauss-Newton with CG inner solves
# ---------------------------------------------------------------------------

def conjugate_gradient(hessvec, rhs, iters, rtol=1e-10):
    """Plain CG for the (PSD) Gauss-Newton system; fixed small iteration budget."""
    x = np.zeros_like(rhs)
    r = rhs.copy()
    p = r.copy()
    rr = float(np.sum(r * r))
    rr0 = rr
    if rr == 0.0:
        return x
    for _ in range(iters):
        ap = hessvec(p)
        pap = float(np.sum(p * ap))
        if pap <= 0.0:
            break  # curvature lost to solver noise; keep the current iterate
        alpha = rr / pap
        x += alpha * p
        r -= alpha * ap
        rr_new = float(np.sum(r * r))
        if rr_new <= rtol**2 * rr0:
            break
        p = r + (rr_new / rr) * p
        rr = rr_new
    return x


@dataclass(frozen=True)
class GnStepInfo:
    phi_before: float
    phi_after: float
    step_scale: float
    stalled: bool
    grad_norm: float


def gauss_newton_step(make_objective, m, bounds=None, cg_iters=5, max_backtracks=8,
                      initial_objective=None):
    """One Gauss-Newton model update with Armijo halving line search.

    make_objective(m) must evaluate the objective (with one fixed source
    encoding) at any model; trial models are projected into bounds before
    evaluation. Returns (m_next, objectives_used, info); on failure to
    decrease the objective the model is returned unchanged with the stall
    flag set.
    """
    used = []
    obj = initial_objective if initial_objective is not None else make_objective(m)
    used.append(obj)
    phi0 = obj.value()
    g = obj.gradient()
    gnorm = float(np.linalg.norm(g))
    if gnorm == 0.0:
        return m, used, GnStepInfo(phi0, phi0, 0.0, False, 0.0)
    delta = conjugate_gradient(obj.hessvec, -g, cg_iters)
    t = 1.0
    for _ in range(max_backtracks):
        trial_vals = m.values + t * delta
        if bounds is not None:
            trial_vals = np.clip(trial_vals, bounds[0], bounds[1])
        m_trial = SlownessSquaredField(m.grid, trial_vals)
        trial = make_objective(m_trial)
        used.append(trial)
        if trial.value() < phi0:
            return m_trial, used, GnStepInfo(phi0, trial.value(), t, False, gnorm)
        t *= 0.5
    return m, used, GnStepInfo(phi0, phi0, 0.0, True, gnorm)


# ---------------------------------------------------------------------------
# Frequency continuation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CycleSpec:
    """One continuation cycle: window index range plus its optimizer budget."""

    i_start: int
    i_end: int
    gn_iters: int = 5
    reg_kind: str = "spline_smoothing"
    alpha: float = None
    alpha_rel: float = 0.05

    def __post_init__(self):
        if not 1 <= self.i_start <= self.i_end:
            raise ValueError(f"bad cycle range ({self.i_start}, {self.i_end})")
        if self.gn_iters < 1:
            raise ValueError("each cycle needs at least one GN iteration")


@dataclass(frozen=True)
class FcSchedule:
    cycles: tuple
    window_size: int = 1
    cg_iters: int = 5
    encoding_p: int = 16

    def __post_init__(self):
        if self.window_size < 1:
            raise ValueError("window size must be at least 1")
        if self.cg_iters < 1 or self.encoding_p < 1:
            raise ValueError("cg_iters and encoding_p must be at least 1")
        object.__setattr__(self, "cycles", tuple(self.cycles))

    def validate_against(self, n_frequencies):
        for c in self.cycles:
            if c.i_end > n_frequencies:
                raise ValueError(
                    f"cycle ({c.i_start}, {c.i_end}) exceeds {n_frequencies} frequencies")


def frequency_continuation(m0, survey, schedule, precond_factory=None,
                           retrain_hook=None, retrain_stride=1, bounds=None,
                           settings=None, seed=0, strict=False, logger=None):
    """Sliding-window inversion over frequency cycles with optional retraining.

    Each window i optimizes the encoded objective over frequencies
    max(i-ws, 1)..i on the grid sized for frequency i, warm-starting from
    the previous model; the retrain hook runs before the window is solved.
    Returns (m_final on the base grid, window history list).
    """
    schedule.validate_against(len(survey.freqs_hz))
    settings = settings or SolverSettings()
    factory = precond_factory or PreconditionerFactory("vcycle")
    base_grid = survey.base_grid
    m_base = SlownessSquaredField(
        base_grid, resample_to_grid(m0.values, m0.grid, base_grid))
    m_ref_base = m_base
    history = []
    window_counter = 0
    master = np.random.SeedSequence(seed)

    for ci, cyc in enumerate(schedule.cycles):
        for i in range(cyc.i_start, cyc.i_end + 1):
            freq_indices = list(range(max(i - schedule.window_size, 1) - 1, i))
            f_top = survey.freqs_hz[i - 1]
            wgrid = survey.policy.grid_for(f_top)
            m_vals = resample_to_grid(m_base.values, base_grid, wgrid)
            if bounds is not None:
                m_vals = np.clip(m_vals, bounds[0], bounds[1])
            m_w = SlownessSquaredField(wgrid, m_vals)
            gamma_w = survey.policy.gamma_for(wgrid)

            retrain_report = None
            if retrain_hook is not None and should_retrain(window_counter, retrain_stride):
                retrain_report = retrain_hook(m_w, gamma_w, 2.0 * np.pi * f_top,
                                              window_counter)
                if logger is not None and retrain_report is not None:
                    logger.log_retrain(window_counter, f_top, retrain_report)

            reg_ref = resample_to_grid(m_ref_base.values, base_grid, wgrid)
            solve_log = logger.log_solve if logger is not None else None
            gn_records = []
            window_alpha = cyc.alpha
            for t in range(cyc.gn_iters):
                rng = np.random.default_rng([seed, ci, i, t])
                enc = SimSourceEncoding.rademacher(survey.n_sources,
                                                   schedule.encoding_p, rng)
                initial = None
                if t == 0:
                    initial = EncodedObjective(m_w, gamma_w, survey, freq_indices, enc,
                                               None, factory, settings, strict=strict,
                                               solve_log=solve_log)
                    if window_alpha is None:
                        window_alpha = _curvature_matched_alpha(
                            initial, cyc.alpha_rel, cyc.reg_kind, reg_ref, wgrid,
                            np.random.default_rng([seed, ci, i, 131]))
                        if logger is not None:
                            logger.log_note(f"cycle {ci} window {i} alpha {window_alpha!r}")

                reg = Regularizer(cyc.reg_kind, reg_ref, window_alpha, wgrid)
                if initial is not None:
                    initial.set_regularizer(reg)

                def make_objective(model_field):
                    return EncodedObjective(model_field, gamma_w, survey, freq_indices,
                                            enc, reg, factory, settings, strict=strict,
                                            solve_log=solve_log)

                m_w, used, info = gauss_newton_step(make_objective, m_w, bounds=bounds,
                                                    cg_iters=schedule.cg_iters,
                                                    initial_objective=initial)
                record = _collect_counters(used)
                record.update(cycle=ci, window=i, gn_iter=t, info=info,
                              omega_set=tuple(survey.freqs_hz[j] for j in freq_indices))
                gn_records.append(record)
                if logger is not None:
                    logger.log_gn_iteration(record)

            m_base = SlownessSquaredField(
                base_grid, np.clip(resample_to_grid(m_w.values, wgrid, base_grid),
                                   bounds[0], bounds[1]) if bounds is not None
                else resample_to_grid(m_w.values, wgrid, base_grid))
            history.append({
                "cycle": ci, "window": i, "freq_indices": tuple(freq_indices),
                "grid": wgrid, "model": m_w, "gn": gn_records,
                "retrain": retrain_report,
            })
            if logger is not None:
                logger.log_window(history[-1])
            window_counter += 1
    return m_base, history


def _curvature_matched_alpha(objective, alpha_rel, reg_kind, reg_ref, grid, rng):
    """Regularizer weight giving alpha_rel of the data curvature along the
    current descent direction (falls back to a random direction when the
    data gradient vanishes)."""
    if alpha_rel <= 0:
        return 0.0
    g = objective.data_gradient()
    gnorm = float(np.linalg.norm(g))
    v = g / gnorm if gnorm > 0 else None
    if v is None:
        v = rng.standard_normal(grid.shape)
        v /= np.linalg.norm(v)
    data_curv = float(np.sum(v * objective.data_hessvec(v)))
    reg_curv = float(np.sum(v * Regularizer(reg_kind, reg_ref, 1.0, grid).hessvec(v)))
    if data_curv <= 0 or reg_curv <= 0:
        return 0.0
    return alpha_rel * data_curv / reg_curv


def _collect_counters(objectives):
    total = {"misfit_iters": 0, "gradient_iters": 0, "hessvec_iters": 0,
             "misfit_seconds": 0.0, "gradient_seconds": 0.0, "hessvec_seconds": 0.0,
             "stagnated": 0}
    for obj in objectives:
        for key in total:
            total[key] += obj.counters[key]
    return total
