import numpy as np
import pytest

from wavekit.grid import (
    ComplexField,
    HelmholtzProblem,
    RegularGrid2D,
    SlownessSquaredField,
    helmholtz_dense,
    neg_laplacian_values,
    resample_to_grid,
)
from wavekit.inversion import (
    CycleSpec,
    EncodedObjective,
    FcSchedule,
    GridPolicy,
    PreconditionerFactory,
    Regularizer,
    SimSourceEncoding,
    SolverSettings,
    SurveyGeometry,
    conjugate_gradient,
    frequency_continuation,
    gauss_newton_step,
    rademacher_encode,
    regularizer_eval,
    schedule_grids,
    simulate_observations,
)
from wavekit.media import layered_model, ramp_model

POLICY = GridPolicy((480.0, 240.0), 1500.0, 10, abl_frac=0.25)
TIGHT = SolverSettings(forward_tol=1e-9, sensitivity_tol=1e-9, max_iter=2000)
DIRECT = {"solver_backend": "direct"}


def fixture_setup(freqs=(6.0,), noise=0.0, seed=5, n_src=3):
    grid = POLICY.grid_for(max(freqs))
    m_true = layered_model(grid, [0.4, 0.7], [1600.0, 2000.0, 2500.0])
    m0 = ramp_model(grid, 1600.0, 2500.0)
    gc = POLICY.grid_for(min(freqs))
    src_cols = np.linspace(3, gc.nx - 4, n_src).round().astype(int)
    geometry = SurveyGeometry(
        source_xy=tuple((c * gc.hx, 2 * gc.hy) for c in src_cols),
        receiver_xy=tuple((c * gc.hx, 2 * gc.hy) for c in range(2, gc.nx - 2, 2)))
    survey = simulate_observations(m_true, geometry, POLICY, freqs,
                                   noise_fraction=noise,
                                   rng=np.random.default_rng(seed))
    gamma = POLICY.gamma_for(grid)
    return grid, m_true, m0, gamma, survey


class TestSimulateObservations:
    def test_zero_noise_is_exact_sampling(self):
        grid, m_true, _, gamma, survey = fixture_setup(noise=0.0)
        data = survey.data_for(grid)
        enc = SimSourceEncoding.identity(survey.n_sources)
        obj = EncodedObjective(m_true, gamma, survey, [0], enc, settings=TIGHT)
        # data term vanishes at the true model when no noise was added
        assert obj.data_term() < 1e-8 * np.sum(np.abs(data["d_obs"]) ** 2)
        assert np.all(data["sigma2"] == 1.0)

    def test_default_noise_fraction_is_one_percent(self):
        import inspect
        sig = inspect.signature(simulate_observations)
        assert sig.parameters["noise_fraction"].default == 0.01

    def test_noise_statistics(self):
        _, _, _, _, s0 = fixture_setup(noise=0.0, seed=9)
        grid, _, _, _, s1 = fixture_setup(noise=0.02, seed=9)
        d0 = s0.data_for(grid)["d_obs"]
        d1 = s1.data_for(grid)["d_obs"]
        rel = np.linalg.norm(d1 - d0) / np.linalg.norm(d0)
        assert 0.005 < rel < 0.05
        assert np.all(s1.data_for(grid)["sigma2"] != 1.0)

    def test_reciprocity_on_constant_medium(self):
        # symmetric layout: source at a recorded at b equals source at b
        # recorded at a
        grid = POLICY.grid_for(6.0)
        m = ramp_model(grid, 2000.0, 2000.0)
        a = (12 * grid.hx, 4 * grid.hy)
        b = (20 * grid.hx, 4 * grid.hy)
        geometry = SurveyGeometry(source_xy=(a, b), receiver_xy=(a, b))
        survey = simulate_observations(m, geometry, POLICY, [6.0], noise_fraction=0.0,
                                       rng=np.random.default_rng(0))
        d = survey.data_for(grid)["d_obs"]
        lhs = d[0, 0, 1]  # source a, receiver b
        rhs = d[0, 1, 0]  # source b, receiver a
        assert abs(lhs - rhs) / abs(rhs) < 1e-6

    def test_solver_failure_identifies_pair(self):
        from wavekit.inversion import SolverFailure
        grid, m_true, _, _, _ = fixture_setup()
        geometry = SurveyGeometry(source_xy=((2 * grid.hx, 2 * grid.hy),),
                                  receiver_xy=((4 * grid.hx, 2 * grid.hy),))
        with pytest.raises(SolverFailure, match="frequency"):
            simulate_observations(m_true, geometry, POLICY, [6.0],
                                  settings=SolverSettings(simulation_tol=1e-14),
                                  max_iter=3, rng=np.random.default_rng(0))


class TestEncoding:
    def test_identity_encoding_equals_unencoded_misfit(self):
        grid, m_true, m0, gamma, survey = fixture_setup(noise=0.01)
        enc = SimSourceEncoding.identity(survey.n_sources)
        obj = EncodedObjective(m0, gamma, survey, [0], enc, settings=TIGHT)
        value = obj.data_term()
        # per-source reference computed directly from the same solves
        total = 0.0
        for s in range(survey.n_sources):
            num = obj._blocks[0]["residuals"][:, s]
            total += float(np.sum(np.abs(num) ** 2))
        assert value == pytest.approx(total, rel=1e-12)

    def test_rademacher_entries_and_shape(self):
        enc = SimSourceEncoding.rademacher(6, 4, np.random.default_rng(0))
        assert enc.x.shape == (6, 4)
        assert set(np.unique(enc.x)) <= {-1.0, 1.0}
        assert enc.scale == 0.25

    def test_default_p_is_16(self):
        import inspect
        sig = inspect.signature(SimSourceEncoding.rademacher)
        assert sig.parameters["p"].default == 16

    def test_brute_force_average_equals_exact_misfit(self):
        # all 2^4 sign patterns: the averaged encoded misfit reproduces the
        # per-source misfit exactly (trace-estimation identity)
        grid, m_true, m0, gamma, survey = fixture_setup(noise=0.01, n_src=4)
        exact = EncodedObjective(m0, gamma, survey, [0],
                                 SimSourceEncoding.identity(4), **DIRECT)
        exact_value = exact.data_term()
        total = 0.0
        count = 0
        for bits in range(16):
            signs = np.array([1.0 if bits & (1 << k) else -1.0 for k in range(4)])
            enc = SimSourceEncoding(signs.reshape(4, 1), 1.0)
            obj = EncodedObjective(m0, gamma, survey, [0], enc, **DIRECT)
            total += obj.data_term()
            count += 1
        assert total / count == pytest.approx(exact_value, rel=1e-12)

    def test_encode_blocks_shapes(self):
        rng = np.random.default_rng(1)
        g = rng.standard_normal((9, 4))
        d = rng.standard_normal((7, 4))
        enc = SimSourceEncoding.rademacher(4, 2, rng)
        ge, de = rademacher_encode(g, d, enc)
        assert ge.shape == (9, 2) and de.shape == (7, 2)
        assert np.allclose(ge, g @ enc.x)

    def test_invalid_entries_rejected(self):
        with pytest.raises(ValueError):
            SimSourceEncoding(np.full((3, 2), 0.5), 0.5)


class TestRegularizers:
    GRID = RegularGrid2D(9, 9, 10.0, 10.0)

    def test_value_and_gradient_vanish_at_reference(self):
        rng = np.random.default_rng(2)
        m_ref = rng.standard_normal(self.GRID.shape)
        for kind in ("spline_smoothing", "diffusion"):
            reg = Regularizer(kind, m_ref, 1.0, self.GRID)
            assert reg.value(m_ref) == 0.0
            assert np.all(reg.gradient(m_ref) == 0.0)

    def test_spline_of_linear_ramp_is_boundary_only(self):
        iy = np.arange(self.GRID.ny)[:, None]
        ramp = np.broadcast_to(3.0 * iy, self.GRID.shape).astype(float)
        reg = Regularizer("spline_smoothing", np.zeros(self.GRID.shape), 1.0, self.GRID)
        lap = neg_laplacian_values(ramp.copy(), self.GRID.hx, self.GRID.hy)
        interior = np.abs(lap[1:-1, 1:-1]).max()
        assert interior < 1e-12 * np.abs(lap).max()
        assert reg.value(ramp) > 0.0  # boundary stencil rows contribute

    @pytest.mark.parametrize("kind", ["spline_smoothing", "diffusion"])
    def test_gradient_matches_central_differences(self, kind):
        g8 = RegularGrid2D(8, 8, 7.0, 9.0)
        rng = np.random.default_rng(3)
        m_ref = rng.standard_normal(g8.shape)
        m = m_ref + 0.3 * rng.standard_normal(g8.shape)
        reg = Regularizer(kind, m_ref, 1.0, g8)
        grad = reg.gradient(m)
        step = 1e-6
        for _ in range(6):
            iy, ix = rng.integers(0, 8), rng.integers(0, 8)
            up = m.copy(); up[iy, ix] += step
            dn = m.copy(); dn[iy, ix] -= step
            fd = (reg.value(up) - reg.value(dn)) / (2 * step)
            assert fd == pytest.approx(grad[iy, ix], rel=1e-8, abs=1e-10)

    def test_gradient_matches_dense_operator_assembly(self):
        # spline: 2 L^T L delta; diffusion: 2 G^T G delta, assembled densely
        g8 = RegularGrid2D(8, 8, 7.0, 9.0)
        rng = np.random.default_rng(4)
        m_ref = rng.standard_normal(g8.shape)
        m = m_ref + rng.standard_normal(g8.shape)
        delta = (m - m_ref).ravel()
        n = g8.n_nodes

        lap_dense = np.zeros((n, n))
        for k in range(n):
            e = np.zeros(n)
            e[k] = 1.0
            lap_dense[:, k] = neg_laplacian_values(e.reshape(g8.shape), g8.hx,
                                                   g8.hy).ravel()
        reg = Regularizer("spline_smoothing", m_ref, 1.0, g8)
        expected = 2.0 * lap_dense.T @ (lap_dense @ delta)
        assert np.allclose(reg.gradient(m).ravel(), expected, rtol=1e-12)

        gx = np.zeros((g8.ny * (g8.nx - 1), n))
        gy = np.zeros(((g8.ny - 1) * g8.nx, n))
        for k in range(n):
            e = np.zeros(n)
            e[k] = 1.0
            e2 = e.reshape(g8.shape)
            gx[:, k] = (np.diff(e2, axis=1) / g8.hx).ravel()
            gy[:, k] = (np.diff(e2, axis=0) / g8.hy).ravel()
        regd = Regularizer("diffusion", m_ref, 1.0, g8)
        expected = 2.0 * (gx.T @ (gx @ delta) + gy.T @ (gy @ delta))
        assert np.allclose(regd.gradient(m).ravel(), expected, rtol=1e-12)

    def test_regularizer_eval_surface(self):
        g8 = RegularGrid2D(8, 8, 1.0, 1.0)
        m = SlownessSquaredField(g8, np.full(g8.shape, 1.0))
        m_ref = SlownessSquaredField(g8, np.full(g8.shape, 1.0))
        value, grad, hessvec = regularizer_eval("diffusion", m, m_ref)
        assert value == 0.0
        assert np.all(grad == 0.0)
        v = np.random.default_rng(5).standard_normal(g8.shape)
        assert hessvec(v).shape == g8.shape


class TestObjectiveDerivatives:
    def test_gradient_matches_central_differences(self):
        grid, m_true, m0, gamma, survey = fixture_setup(noise=0.01, n_src=2)
        enc = SimSourceEncoding.identity(2)
        obj = EncodedObjective(m0, gamma, survey, [0], enc, settings=TIGHT)
        grad = obj.data_gradient()
        rng = np.random.default_rng(6)
        for _ in range(5):
            iy = int(rng.integers(2, grid.ny - 2))
            ix = int(rng.integers(2, grid.nx - 2))
            step = 1e-4 * m0.values[iy, ix]
            vals_up = m0.values.copy(); vals_up[iy, ix] += step
            vals_dn = m0.values.copy(); vals_dn[iy, ix] -= step
            up = EncodedObjective(SlownessSquaredField(grid, vals_up), gamma, survey,
                                  [0], enc, settings=TIGHT).data_term()
            dn = EncodedObjective(SlownessSquaredField(grid, vals_dn), gamma, survey,
                                  [0], enc, settings=TIGHT).data_term()
            fd = (up - dn) / (2 * step)
            assert abs(fd - grad[iy, ix]) / max(abs(grad[iy, ix]), 1e-12) < 1e-5

    def test_gradient_near_zero_at_true_model_without_noise(self):
        grid, m_true, _, gamma, survey = fixture_setup(noise=0.0)
        enc = SimSourceEncoding.identity(survey.n_sources)
        obj = EncodedObjective(m_true, gamma, survey, [0], enc, settings=TIGHT)
        g = obj.data_gradient()
        # compare against the gradient scale at the (wrong) initial model
        obj0 = EncodedObjective(ramp_model(grid, 1600.0, 2500.0), gamma, survey,
                                [0], enc, settings=TIGHT)
        scale = np.linalg.norm(obj0.data_gradient())
        assert np.linalg.norm(g) < 1e-6 * scale

    def test_hessvec_symmetry(self):
        grid, m_true, m0, gamma, survey = fixture_setup(noise=0.01, n_src=2)
        enc = SimSourceEncoding.identity(2)
        obj = EncodedObjective(m0, gamma, survey, [0], enc, settings=TIGHT)
        rng = np.random.default_rng(7)
        u = rng.standard_normal(grid.shape)
        v = rng.standard_normal(grid.shape)
        hu = obj.data_hessvec(u)
        hv = obj.data_hessvec(v)
        lhs = float(np.sum(v * hu))
        rhs = float(np.sum(u * hv))
        assert abs(lhs - rhs) / max(abs(lhs), abs(rhs)) < 1e-4

    def test_hessvec_positive_semidefinite(self):
        grid, m_true, m0, gamma, survey = fixture_setup(noise=0.01, n_src=2)
        enc = SimSourceEncoding.identity(2)
        obj = EncodedObjective(m0, gamma, survey, [0], enc, settings=TIGHT)
        rng = np.random.default_rng(8)
        for _ in range(3):
            v = rng.standard_normal(grid.shape)
            quad = float(np.sum(v * obj.data_hessvec(v)))
            assert quad >= -1e-6 * float(np.sum(v * v))

    def test_hessvec_of_zero_is_zero(self):
        grid, m_true, m0, gamma, survey = fixture_setup(noise=0.0, n_src=2)
        enc = SimSourceEncoding.identity(2)
        obj = EncodedObjective(m0, gamma, survey, [0], enc, settings=TIGHT)
        assert np.all(obj.hessvec(np.zeros(grid.shape)) == 0.0)

    def test_misfit_matches_dense_lu_oracle(self):
        # independent pipeline: dense LU solves + explicit norms
        grid, m_true, m0, gamma, survey = fixture_setup(noise=0.01, n_src=2)
        enc = SimSourceEncoding.identity(2)
        obj = EncodedObjective(m0, gamma, survey, [0], enc, settings=TIGHT)
        layout = survey.geometry.layout_on(grid)
        hd = helmholtz_dense(HelmholtzProblem(m0, gamma, survey.omegas[0]))
        data = survey.data_for(grid)
        total = 0.0
        for s, node in enumerate(layout.sources):
            rhs = np.zeros(grid.n_nodes, dtype=complex)
            rhs[node] = 1.0 / (grid.hx * grid.hy)
            u = np.linalg.solve(hd, rhs / np.sqrt(data["sigma2"][0, s]))
            pred = u[list(layout.receivers)]
            d = data["d_obs"][0, s] / np.sqrt(data["sigma2"][0, s])
            total += float(np.sum(np.abs(pred - d) ** 2))
        assert obj.data_term() == pytest.approx(total, rel=1e-6)

    def test_alpha_zero_removes_regularizer_exactly(self):
        grid, m_true, m0, gamma, survey = fixture_setup(noise=0.01, n_src=2)
        enc = SimSourceEncoding.identity(2)
        reg = Regularizer("diffusion", m_true.values, 0.0, grid)
        with_reg = EncodedObjective(m0, gamma, survey, [0], enc, reg, settings=TIGHT)
        without = EncodedObjective(m0, gamma, survey, [0], enc, None, settings=TIGHT)
        assert with_reg.value() == without.value()


class TestGaussNewton:
    def test_cg_zero_rhs(self):
        out = conjugate_gradient(lambda v: v, np.zeros((4, 4)), 5)
        assert np.all(out == 0.0)

    def test_cg_solves_spd_system(self):
        rng = np.random.default_rng(9)
        a = rng.standard_normal((12, 12))
        spd = a @ a.T + 12 * np.eye(12)
        rhs = rng.standard_normal(12)
        x = conjugate_gradient(lambda v: (spd @ v.ravel()).reshape(v.shape),
                               rhs, 50)
        assert np.linalg.norm(spd @ x - rhs) / np.linalg.norm(rhs) < 1e-8

    def test_zero_gradient_returns_model_unchanged(self):
        grid, m_true, _, gamma, survey = fixture_setup(noise=0.0)
        enc = SimSourceEncoding.identity(survey.n_sources)

        def make(m):
            return EncodedObjective(m, gamma, survey, [0], enc, settings=TIGHT)

        # at the exact data-consistent model the gradient is numerically tiny;
        # force the zero-gradient branch through a doctored objective
        class ZeroGrad:
            def __init__(self, m):
                self.inner = make(m)
                self.counters = self.inner.counters
            def value(self):
                return self.inner.value()
            def gradient(self):
                return np.zeros(grid.shape)
            def hessvec(self, v):
                return self.inner.hessvec(v)

        m2, used, info = gauss_newton_step(lambda m: ZeroGrad(m), m_true)
        assert m2 is m_true
        assert not info.stalled

    def test_descent_on_layered_toy(self):
        grid, m_true, m0, gamma, survey = fixture_setup(freqs=(4.0, 6.0),
                                                        noise=0.01, n_src=4)
        enc = SimSourceEncoding.identity(4)
        reg = Regularizer("spline_smoothing", m0.values, 0.0, grid)
        bounds = (1 / 3200.0**2, 1 / 1300.0**2)
        m = m0
        phis = []
        for _ in range(5):
            def make(model_field):
                return EncodedObjective(model_field, gamma, survey, [0, 1], enc, reg,
                                        PreconditionerFactory("vcycle"))
            m, used, info = gauss_newton_step(make, m, bounds=bounds, cg_iters=5)
            phis.append((info.phi_before, info.phi_after))
            assert not info.stalled
            assert info.phi_after < info.phi_before

    def test_default_cg_budget_is_five(self):
        import inspect
        sig = inspect.signature(gauss_newton_step)
        assert sig.parameters["cg_iters"].default == 5


class TestFrequencyContinuation:
    def test_single_window_single_frequency(self):
        grid, m_true, m0, gamma, survey = fixture_setup(noise=0.01, n_src=3)
        sched = FcSchedule(cycles=(CycleSpec(1, 1, gn_iters=2),), window_size=1,
                           cg_iters=3, encoding_p=2)
        m_fin, hist = frequency_continuation(m0, survey, sched, seed=3)
        assert len(hist) == 1
        assert len(hist[0]["gn"]) == 2
        assert m_fin.grid == grid

    def test_multi_cycle_layout_and_monotone_window_steps(self):
        grid, m_true, m0, gamma, survey = fixture_setup(freqs=(3.0, 4.5, 6.0),
                                                        noise=0.01, n_src=3)
        sched = FcSchedule(cycles=(
            CycleSpec(1, 2, gn_iters=2, reg_kind="spline_smoothing"),
            CycleSpec(2, 3, gn_iters=2, reg_kind="diffusion"),
        ), window_size=1, cg_iters=3, encoding_p=2)
        survey2 = simulate_observations(
            m_true, survey.geometry, POLICY, (3.0, 4.5, 6.0), noise_fraction=0.01,
            rng=np.random.default_rng(5),
            grids=schedule_grids(POLICY, (3.0, 4.5, 6.0), sched))
        bounds = (1 / 3200.0**2, 1 / 1300.0**2)
        m_fin, hist = frequency_continuation(m0, survey2, sched, bounds=bounds, seed=3)
        assert [w["window"] for w in hist] == [1, 2, 2, 3]
        for w in hist:
            for g in w["gn"]:
                assert g["info"].stalled or g["info"].phi_after <= g["info"].phi_before

    def test_retrain_hook_invoked_per_stride(self):
        grid, m_true, m0, gamma, survey = fixture_setup(freqs=(4.0, 6.0),
                                                        noise=0.01, n_src=2)
        sched = FcSchedule(cycles=(CycleSpec(1, 2, gn_iters=1),), window_size=1,
                           cg_iters=2, encoding_p=2)
        survey2 = simulate_observations(
            m_true, survey.geometry, POLICY, (4.0, 6.0), noise_fraction=0.01,
            rng=np.random.default_rng(5), grids=schedule_grids(POLICY, (4.0, 6.0), sched))
        calls = []

        def hook(m_w, gamma_w, omega, window_index):
            calls.append((window_index, m_w.grid.nx, round(omega, 3)))
            return None

        frequency_continuation(m0, survey2, sched, retrain_hook=hook,
                               retrain_stride=1, seed=3)
        assert [c[0] for c in calls] == [0, 1]
        # the hook sees the window grid sized for the window's top frequency
        assert calls[0][1] == POLICY.grid_for(4.0).nx
        assert calls[1][1] == POLICY.grid_for(6.0).nx

        calls.clear()
        frequency_continuation(m0, survey2, sched, retrain_hook=hook,
                               retrain_stride=0, seed=3)
        assert calls == []

    def test_window_covers_previous_frequency(self):
        grid, m_true, m0, gamma, survey = fixture_setup(freqs=(4.0, 6.0),
                                                        noise=0.01, n_src=2)
        sched = FcSchedule(cycles=(CycleSpec(2, 2, gn_iters=1),), window_size=1,
                           cg_iters=2, encoding_p=2)
        m_fin, hist = frequency_continuation(m0, survey, sched, seed=3)
        assert hist[0]["freq_indices"] == (0, 1)

    def test_schedule_validation(self):
        with pytest.raises(ValueError):
            FcSchedule(cycles=(CycleSpec(1, 4),), window_size=0)
        sched = FcSchedule(cycles=(CycleSpec(1, 4),))
        with pytest.raises(ValueError):
            sched.validate_against(2)
