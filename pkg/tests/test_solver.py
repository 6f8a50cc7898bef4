import numpy as np
import pytest

from wavekit.grid import (
    AttenuationField,
    ComplexField,
    HelmholtzProblem,
    RegularGrid2D,
    SlownessSquaredField,
    absorbing_layer,
    helmholtz_dense,
    helmholtz_operator,
    shifted_laplacian_dense,
    shifted_laplacian_operator,
)
from wavekit.krylov import (
    DirectHelmholtzSolver,
    SolveReport,
    fgmres,
    solve_adjoint,
    solve_forward,
)
from wavekit.multigrid import VCycleConfig, VCyclePreconditioner, vcycle


def linear_medium_problem(nx, ny, h, f_hz, v_top=1500.0, v_bottom=3000.0, abl=4):
    g = RegularGrid2D(nx, ny, h, h)
    v = np.linspace(v_top, v_bottom, ny)
    m = SlownessSquaredField(g, np.broadcast_to((1.0 / v**2)[:, None], g.shape).copy())
    gam = absorbing_layer(g, abl)
    return HelmholtzProblem(m, gam, 2.0 * np.pi * f_hz)


def random_rhs(grid, seed=0):
    rng = np.random.default_rng(seed)
    return ComplexField(grid, rng.standard_normal(grid.shape)
                        + 1j * rng.standard_normal(grid.shape))


class TestVCycleConfig:
    def test_defaults(self):
        cfg = VCycleConfig()
        assert cfg.levels == 3
        assert cfg.pre_smooth == 1 and cfg.post_smooth == 1
        assert cfg.jacobi_weight == 0.8
        assert (cfg.alpha, cfg.beta) == (1.0, 0.5)

    def test_validation(self):
        with pytest.raises(ValueError):
            VCycleConfig(levels=1)
        with pytest.raises(ValueError):
            VCycleConfig(jacobi_weight=0.0)
        with pytest.raises(ValueError):
            VCycleConfig(pre_smooth=-1)


class TestVCycle:
    def test_zero_residual_zero_guess(self):
        p = linear_medium_problem(17, 17, 10.0, 5.0)
        out = vcycle(p, VCycleConfig(), ComplexField.zeros(p.grid),
                     ComplexField.zeros(p.grid))
        assert np.all(out.values == 0)

    def test_residual_reduction_on_smooth_problem(self):
        # constant medium, ~1.5 wavelengths across the 33x33 domain
        g = RegularGrid2D(33, 33, 10.0, 10.0)
        m = SlownessSquaredField(g, np.full(g.shape, 1.0 / 1500.0**2))
        p = HelmholtzProblem(m, AttenuationField(g, np.zeros(g.shape)), 2 * np.pi * 7.0)
        r = random_rhs(g, seed=1)
        e = vcycle(p, VCycleConfig(), ComplexField.zeros(g), r)
        sl = shifted_laplacian_operator(p)
        relres = np.linalg.norm(r.values.ravel() - sl(e.values.ravel())) \
            / np.linalg.norm(r.values)
        assert relres < 0.5

    def test_non_coarsenable_grid_raises(self):
        g = RegularGrid2D(18, 18, 1.0, 1.0)
        m = SlownessSquaredField(g, np.ones(g.shape))
        p = HelmholtzProblem(m, AttenuationField(g, np.zeros(g.shape)), 1.0)
        with pytest.raises(ValueError):
            VCyclePreconditioner(p)

    def test_coarse_operators_are_rediscretized(self):
        p = linear_medium_problem(17, 17, 10.0, 5.0)
        pre = VCyclePreconditioner(p)
        assert len(pre.levels) == 3
        assert pre.levels[1].grid.hx == 2 * pre.levels[0].grid.hx
        # restricted medium stays positive and within the fine-grid range
        assert pre.levels[-1].m.min() >= p.m.values.min() - 1e-15
        assert pre.levels[-1].m.max() <= p.m.values.max() + 1e-15


class TestFgmres:
    def test_identity_operator_converges_in_one_iteration(self):
        rng = np.random.default_rng(2)
        b = rng.standard_normal(50) + 1j * rng.standard_normal(50)
        x, report = fgmres(lambda v: v, None, b, tol=1e-12, max_iter=10)
        assert report.iterations == 1
        assert report.converged
        assert np.linalg.norm(x - b) / np.linalg.norm(b) < 1e-12

    def test_matches_dense_lu_with_abl(self):
        p = linear_medium_problem(16, 16, 10.0, 8.0, abl=4)
        b = random_rhs(p.grid, seed=3)
        x, report = fgmres(helmholtz_operator(p), None, b.values.ravel(),
                           tol=1e-10, max_iter=500)
        xd = DirectHelmholtzSolver(p).solve(b)
        assert report.converged
        assert np.linalg.norm(x - xd.values.ravel()) / np.linalg.norm(xd.values) < 1e-8

    def test_iteration_cap_honored(self):
        p = linear_medium_problem(17, 17, 10.0, 8.0)
        b = random_rhs(p.grid, seed=4)
        _, report = fgmres(helmholtz_operator(p), None, b.values.ravel(),
                           tol=1e-14, max_iter=300)
        assert report.iterations == 300
        assert not report.converged

    def test_zero_rhs_returns_zero_without_iterations(self):
        p = linear_medium_problem(17, 17, 10.0, 5.0)
        x, report = fgmres(helmholtz_operator(p), None,
                           np.zeros(p.grid.n_nodes, dtype=complex), tol=1e-8,
                           max_iter=10)
        assert np.all(x == 0)
        assert report.iterations == 0
        assert report.converged

    def test_residual_history_non_increasing_within_cycle(self):
        p = linear_medium_problem(17, 17, 10.0, 6.0)
        b = random_rhs(p.grid, seed=5)
        _, report = fgmres(helmholtz_operator(p), VCyclePreconditioner(p),
                           b.values.ravel(), tol=1e-10, max_iter=25, restart=25)
        hist = np.array(report.residual_history)
        assert np.all(np.diff(hist) <= 1e-12)

    def test_converged_report_passes_independent_recheck(self):
        p = linear_medium_problem(17, 17, 10.0, 7.0)
        b = random_rhs(p.grid, seed=6)
        apply = helmholtz_operator(p)
        x, report = fgmres(apply, VCyclePreconditioner(p), b.values.ravel(),
                           tol=1e-6, max_iter=400)
        assert report.converged
        recheck = np.linalg.norm(b.values.ravel() - apply(x)) / np.linalg.norm(b.values)
        assert recheck <= 1.01 * 1e-6

    def test_scale_extreme_rhs_still_converges(self):
        # huge right-hand sides must not trigger spurious breakdown handling
        p = linear_medium_problem(17, 17, 10.0, 7.0)
        b = random_rhs(p.grid, seed=7).values.ravel() * 1e16
        x, report = fgmres(helmholtz_operator(p), VCyclePreconditioner(p), b,
                           tol=1e-8, max_iter=400)
        assert report.converged

    def test_invalid_arguments(self):
        with pytest.raises(ValueError):
            fgmres(lambda v: v, None, np.ones(4, dtype=complex), tol=0.0, max_iter=5)
        with pytest.raises(ValueError):
            fgmres(lambda v: v, None, np.ones(4, dtype=complex), tol=1e-8,
                   max_iter=5, restart=0)

    def test_nan_in_operator_raises(self):
        def bad_apply(v):
            out = v.copy()
            out[0] = np.nan
            return out
        with pytest.raises(FloatingPointError):
            fgmres(bad_apply, None, np.ones(4, dtype=complex), tol=1e-8, max_iter=5)


class TestSolveWrappers:
    def test_default_tolerances(self):
        import inspect
        from wavekit.krylov import FORWARD_TOL, SENSITIVITY_TOL, SIMULATION_TOL
        assert FORWARD_TOL == 1e-6
        assert SENSITIVITY_TOL == 1e-4
        assert SIMULATION_TOL == 1e-8
        assert inspect.signature(solve_forward).parameters["tol"].default == 1e-6

    def test_zero_rhs_solution(self):
        p = linear_medium_problem(17, 17, 10.0, 5.0)
        x, report = solve_forward(p, ComplexField.zeros(p.grid))
        assert np.all(x.values == 0)
        assert report.iterations == 0

    def test_forward_matches_dense_lu(self):
        tol = 1e-8
        p = linear_medium_problem(16, 16, 10.0, 6.0)
        b = random_rhs(p.grid, seed=8)
        x, report = solve_forward(p, b, tol=tol, max_iter=600)
        xd = DirectHelmholtzSolver(p).solve(b)
        err = np.linalg.norm(x.values - xd.values) / np.linalg.norm(xd.values)
        assert report.converged
        assert err < 10 * tol

    def test_adjoint_matches_dense_conjugate_transpose_lu(self):
        p = linear_medium_problem(12, 12, 10.0, 7.0, abl=3)
        b = random_rhs(p.grid, seed=9)
        x, report = solve_adjoint(p, b, tol=1e-10, max_iter=600)
        hd = helmholtz_dense(p)
        xd = np.linalg.solve(hd.conj().T, b.values.ravel())
        assert report.converged
        assert np.linalg.norm(x.values.ravel() - xd) / np.linalg.norm(xd) < 1e-8

    def test_adjoint_zero_rhs(self):
        p = linear_medium_problem(17, 17, 10.0, 5.0)
        x, _ = solve_adjoint(p, ComplexField.zeros(p.grid))
        assert np.all(x.values == 0)

    def test_conjugation_identity(self):
        # conj(solve_adjoint(p, conj(b))) == solve_forward(p, b)
        tol = 1e-9
        p = linear_medium_problem(16, 16, 10.0, 7.0)
        b = random_rhs(p.grid, seed=10)
        xf, _ = solve_forward(p, b, tol=tol, max_iter=600)
        xa, _ = solve_adjoint(p, ComplexField(p.grid, np.conj(b.values)),
                              tol=tol, max_iter=600)
        err = np.linalg.norm(np.conj(xa.values) - xf.values) / np.linalg.norm(xf.values)
        assert err < 10 * tol

    def test_constant_medium_65x65_converges_under_500(self):
        g = RegularGrid2D(65, 65, 10.0, 10.0)
        m = SlownessSquaredField(g, np.full(g.shape, 1.0 / 2000.0**2))
        p = HelmholtzProblem(m, absorbing_layer(g, 8), 2 * np.pi * 9.0)
        b = random_rhs(g, seed=11)
        _, report = solve_forward(p, b, precond=VCyclePreconditioner(p), tol=1e-6,
                                  max_iter=500)
        assert report.converged
        assert report.iterations < 500


class TestSolveReport:
    def test_consistency_enforced(self):
        with pytest.raises(ValueError):
            SolveReport(iterations=3, achieved_relres=0.5, converged=True,
                        wall_time=0.1, tol=1e-6)
        with pytest.raises(ValueError):
            SolveReport(iterations=3, achieved_relres=-0.5, converged=False,
                        wall_time=0.1, tol=1e-6)

    def test_valid_report(self):
        r = SolveReport(iterations=3, achieved_relres=1e-7, converged=True,
                        wall_time=0.1, tol=1e-6)
        assert r.converged
