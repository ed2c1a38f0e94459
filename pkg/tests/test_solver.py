import numpy as np
import pytest
from sklearn.base import clone

from kelab.geometry import (PoleSpec, VolumeDensity, background_form, build_annulus_fiber,
                            build_torus_fiber, family, integrate, volume_density)
from kelab.solver import (BoundaryDataMissing, KahlerEinsteinSolver, NonConvergence,
                          SolverOptions, continuation_solve, residual, solve_ke)

from conftest import klt_family


def flat(N, n=1, tau=1j, kind="flat"):
    f = build_torus_fiber(n, tau, N)
    return f, background_form(f, kind)


class TestResidual:
    def test_zero_for_identity(self):
        f, chi = flat(32)
        r = residual(np.zeros(f.shape), chi, VolumeDensity.from_values(f, chi.density))
        assert r.sup == 0.0

    def test_double_density_defect_is_chi(self):
        f, chi = flat(32, kind="model_fs")
        r = residual(np.zeros(f.shape), chi, VolumeDensity.from_values(f, 2 * chi.density))
        assert np.allclose(-r.field, chi.density, rtol=0, atol=1e-15)

    def test_solver_output_below_tolerance(self):
        f, chi = flat(32)
        d = volume_density(f, PoleSpec([0.5 + 0.5j], [-0.5]), 0.1, form=chi)
        phi = solve_ke(f, chi, d)
        assert residual(phi.values, chi, d).sup < SolverOptions().tol


class TestSolve:
    def test_identity_density_exact(self):
        f, chi = flat(64)
        phi = solve_ke(f, chi, VolumeDensity.from_values(f, chi.density))
        assert phi.n_iter == 0 and phi.residual == 0.0
        assert not np.any(phi.values)

    def test_maximum_principle_cosine(self):
        N = 64
        f, chi = flat(N)
        g = 0.3 * np.cos(2 * np.pi * f.z[0].real)
        phi = solve_ke(f, chi, VolumeDensity.from_values(f, np.exp(-g) * chi.density)).values
        slack = 10.0 / N ** 2
        assert phi.max() <= 0.3 + slack and phi.min() >= -0.3 - slack

    def test_conservation(self):
        f, chi = flat(64)
        d = volume_density(f, PoleSpec([0.5 + 0.5j], [-0.5]), 0.0, form=chi)
        phi = solve_ke(f, chi, d)
        assert abs(integrate(np.exp(phi.values) * d.values, f.dA) - 1.0) < 1e-8

    def test_skew_torus(self):
        f, chi = flat(48, tau=0.3 + 1.1j, kind="model_fs")
        d = volume_density(f, PoleSpec([0.4 + 0.5j], [-0.5]), 0.05, form=chi)
        phi = solve_ke(f, chi, d)
        assert phi.residual < 1e-9
        assert abs(integrate(np.exp(phi.values) * d.values, f.dA) - chi.volume) < 1e-8 * chi.volume

    @pytest.mark.parametrize("pre", ["amg", "jacobi", "direct"])
    def test_preconditioners_agree(self, pre):
        f, chi = flat(32)
        d = volume_density(f, PoleSpec([0.5 + 0.5j], [-0.5]), 0.05, form=chi)
        ref = solve_ke(f, chi, d, SolverOptions(preconditioner="direct")).values
        phi = solve_ke(f, chi, d, SolverOptions(preconditioner=pre)).values
        assert np.max(np.abs(phi - ref)) < 1e-8

    def test_grid_ladder_matches_cold_start(self):
        f, chi = flat(64)
        d = volume_density(f, PoleSpec([0.5 + 0.5j], [-0.5]), 0.1, form=chi)
        cold = solve_ke(f, chi, d)
        warm = solve_ke(f, chi, d, SolverOptions(ladder=(16, 32)))
        assert np.max(np.abs(cold.values - warm.values)) < 1e-8
        assert warm.n_iter <= cold.n_iter

    def test_iteration_budget(self):
        f, chi = flat(32)
        d = volume_density(f, PoleSpec([0.5 + 0.5j], [-0.9]), 0.0, form=chi)
        with pytest.raises(NonConvergence) as err:
            solve_ke(f, chi, d, SolverOptions(max_iter=1))
        assert err.value.residual > 0

    def test_annulus_needs_boundary_data(self):
        f = build_annulus_fiber(0.1, 32, 32)
        chi = background_form(f)
        with pytest.raises(BoundaryDataMissing):
            solve_ke(f, chi, VolumeDensity.from_values(f, chi.density))

    def test_two_dimensional_smoke(self):
        f, chi = flat(16, n=2)
        d = volume_density(f, PoleSpec([(0.5 + 0.5j, 0.5 + 0.5j)], [-0.3]), 0.2, form=chi)
        phi = solve_ke(f, chi, d)
        assert phi.residual < 1e-9
        assert abs(integrate(np.exp(phi.values) * d.values, f.dA) - 1.0) < 1e-8


class TestContinuation:
    def test_pole_free_family_is_zero(self):
        f, chi = flat(32)
        for r in continuation_solve(family(f, chi, PoleSpec(), M=3)):
            assert r.ok and not np.any(r.potential.values)

    def test_warm_start_not_worse(self):
        fam = klt_family(64, M=6)
        warm = continuation_solve(fam)
        cold = continuation_solve(fam, warm_start=False)
        assert all(w.ok and c.ok for w, c in zip(warm, cold))
        assert sum(w.n_iter for w in warm[1:]) <= sum(c.n_iter for c in cold[1:])
        for w, c in zip(warm[1:], cold[1:]):
            assert w.n_iter <= c.n_iter

    def test_limit_fiber_is_approached(self, klt64):
        fam, results = klt64
        assert all(r.ok for r in results)
        phi0 = results[-1].potential
        mask = phi0.mask
        gaps = [float(np.max(np.abs(r.potential.values - phi0.values)[mask]))
                for r in results[:-1]]
        tail = gaps[-6:]
        assert all(b < a for a, b in zip(tail, tail[1:]))
        assert gaps[-1] < 1e-5

    def test_failure_recorded_per_fiber(self):
        fam = klt_family(32, M=2, a=-0.9)
        results = continuation_solve(fam, SolverOptions(max_iter=1))
        assert any(not r.ok for r in results)
        for r in results:
            if not r.ok:
                assert r.error.t == r.t


class TestEstimator:
    def test_params_roundtrip(self):
        est = KahlerEinsteinSolver(tol=1e-10, ladder=(16,))
        assert est.get_params()["tol"] == 1e-10
        assert clone(est).get_params() == est.get_params()

    def test_fit_transform_score(self):
        f, chi = flat(32)
        d1 = volume_density(f, PoleSpec([0.5 + 0.5j], [-0.5]), 0.1, form=chi)
        d2 = volume_density(f, PoleSpec([0.5 + 0.5j], [-0.5]), 0.05, form=chi)
        est = KahlerEinsteinSolver().fit(d1)
        assert est.score(d1) > -1e-9
        phi2 = est.transform(d2)
        assert residual(phi2, chi, d2).sup < 1e-9

    def test_fit_rejects_arrays(self):
        with pytest.raises(TypeError):
            KahlerEinsteinSolver().fit(np.ones((16, 16)))
