import math

import numpy as np
import pytest

from kelab.decay import fit_decay
from kelab.geometry import (PoleSpec, background_form, build_annulus_fiber, build_torus_fiber,
                            integrate, volume_density)
from kelab.pluripotential import (AdmissibleFn, away_from, bump_candidates, capacity_lower_bound,
                                  compose_admissible, disk_region, localized_mass, ma_measure,
                                  psh_check, random_psh_candidates, sublevel_volume,
                                  truncation_candidate, verify_capacity_energy,
                                  verify_mass_capacity, weighted_sublevel, zero_candidate)
from kelab.solver import PotentialField, solve_ke

from checks_helpers import naive_mixed_n2


def flat(N, n=1, volume=None, kind="flat"):
    f = build_torus_fiber(n, 1j, N)
    return f, background_form(f, kind, volume=volume)


@pytest.fixture(scope="module")
def deep_fiber():
    """Near-lc fiber (a = -0.95, t = 0, V = 40) with non-empty sublevel sets."""
    f, chi = flat(128, volume=40.0)
    dens = volume_density(f, PoleSpec([0.5 + 0.5j], [-0.95]), 0.0, form=chi)
    return chi, solve_ke(f, chi, dens)


class TestMeasures:
    @pytest.mark.parametrize("m", [0, 1])
    def test_zero_potential_gives_chi(self, m):
        f, chi = flat(32, kind="model_fs")
        assert np.array_equal(ma_measure(np.zeros(f.shape), chi, m).values, chi.density)

    def test_total_mass_of_solution(self, klt64):
        fam, results = klt64
        for r in results:
            for m in (0, 1):
                mu = ma_measure(r.potential, fam.form, m)
                assert abs(mu.total - fam.volume) / fam.volume < 1e-6

    def test_two_dimensional_mixed_against_naive(self, rng):
        N = 16
        f, chi = flat(N, n=2, volume=2.0)
        c = np.arange(N) / N
        X = np.meshgrid(*([c] * 4), indexing="ij")
        phi = 0.02 * (np.cos(2 * np.pi * (X[0] + X[2])) + np.sin(2 * np.pi * (X[1] - 2 * X[3]))
                      + np.cos(2 * np.pi * (X[0] + X[3]) + 0.3))
        phi += 0.005 * rng.standard_normal(f.shape)
        g = float(chi.coeffs[0, 0].flat[0].real)
        cell = f.dA.flat[0]
        for m in (1, 2):
            mu = ma_measure(phi, chi, m)
            naive = naive_mixed_n2(phi.tolist(), N, g, m)
            assert np.max(np.abs(mu.values - np.array(naive))) < 1e-11
            assert abs(mu.total - 2.0) < 1e-12
            assert abs(math.fsum(x * cell for x in np.ravel(naive)) - 2.0) < 1e-12

    def test_degree_out_of_range(self):
        f, chi = flat(16)
        with pytest.raises(ValueError):
            ma_measure(np.zeros(f.shape), chi, 2)


class TestSublevels:
    def test_empty_beyond_sup(self, klt64):
        fam, results = klt64
        phi = results[-1].potential
        mu = ma_measure(phi, fam.form)
        K = float(np.max(np.abs(phi.values))) + 0.5
        assert sublevel_volume(phi, mu, K) == 0.0
        assert weighted_sublevel(phi, mu, K) == 0.0

    def test_two_level_profile(self):
        N = 32
        f, chi = flat(N)
        phi = np.zeros(f.shape)
        phi[: N // 2, : N // 2] = -2.0         # a quarter of the cells
        mu = ma_measure(np.zeros(f.shape), chi)  # chi itself, so the mass is the area
        assert sublevel_volume(phi, mu, 1.0) == pytest.approx(0.25, abs=1e-15)
        assert weighted_sublevel(phi, mu, 1.0) == pytest.approx(0.5, abs=1e-15)

    def test_default_family_is_vacuous(self, klt64):
        """Normalised klt fibers stay above -1, so every K >= 1 sublevel is empty."""
        fam, results = klt64
        for r in results:
            mu = ma_measure(r.potential, fam.form)
            v = [sublevel_volume(r.potential, mu, K) for K in range(1, 13)]
            assert not any(v)
            assert not fit_decay(range(1, 13), v, 1).conclusive

    def test_weighted_rate_on_exponential_tail(self):
        """With v(K) = 7 K exp(-K/6) exactly, weighted volumes lose at most the
        1/(4n+4) budget in fitted rate."""
        N = 256
        f, chi = flat(N)
        rng = np.random.default_rng(3)
        # inverse-CDF sample of phi with survival function P(-phi > K) = exp(-K/6)
        u = (np.arange(N * N) + 0.5) / (N * N)
        vals = 6.0 * np.log(u)
        rng.shuffle(vals)
        phi = vals.reshape(f.shape)
        mu = ma_measure(np.zeros(f.shape), chi)
        K = np.arange(1, 13, dtype=float)
        v = [sublevel_volume(phi, mu, k) for k in K]
        w = [weighted_sublevel(phi, mu, k) for k in K]
        rv = fit_decay(K, v, 0).r
        rw = fit_decay(K, w, 1).r
        assert rv == pytest.approx(1 / 6, rel=1e-2)
        assert rw >= rv - 1 / 8

    @pytest.mark.xfail(strict=True, reason="sublevel sets of the deep fiber probe the bottom of "
                       "phi, not an exponential tail; measured rate drop 0.23 > 1/8")
    def test_weighted_rate_on_deep_fiber(self, deep_fiber):
        chi, phi = deep_fiber
        psi = phi.values - phi.values.max()
        mu = ma_measure(phi, chi)
        K = np.linspace(1, 3.5, 11)
        rv = fit_decay(K, [sublevel_volume(psi, mu, k) for k in K], 1, V=40).r
        rw = fit_decay(K, [weighted_sublevel(psi, mu, k) for k in K], 1, V=40).r
        assert rw >= rv - 1 / 8


class TestLocalizedMass:
    def test_all_and_empty(self, klt64):
        fam, results = klt64
        mu = ma_measure(results[-1].potential, fam.form)
        assert localized_mass(mu, np.ones(fam.fiber.shape, bool)) == pytest.approx(fam.volume)
        assert localized_mass(mu, np.zeros(fam.fiber.shape, bool)) == 0.0

    def test_shrinking_disks(self, klt64):
        fam, results = klt64
        radii = (0.2, 0.1, 0.05)
        table = []
        for r in results:
            mu = ma_measure(r.potential, fam.form)
            table.append([localized_mass(mu, disk_region([0.5 + 0.5j], rho)) for rho in radii])
        table = np.array(table)
        assert np.all(np.diff(table, axis=1) < 0)
        worst = table.max(axis=0)
        # a = -0.5 gives mass ~ rho near the pole, uniformly over the t-grid
        assert worst[1] < 0.6 * worst[0] and worst[2] < 0.6 * worst[1]

    def test_complement_regions_partition(self, klt64):
        fam, results = klt64
        mu = ma_measure(results[3].potential, fam.form)
        inside = localized_mass(mu, disk_region([0.5 + 0.5j], 0.2))
        outside = localized_mass(mu, away_from([0.5 + 0.5j], 0.2))
        assert inside + outside == pytest.approx(fam.volume, rel=1e-13)


class TestPSH:
    def test_zero(self):
        f, chi = flat(16)
        assert psh_check(np.zeros(f.shape), chi).ok

    def test_concave_well_fails_with_witness(self):
        f, chi = flat(32)
        c = 0.5 + 0.5j
        chk = psh_check(-50.0 * f.distance2(c), chi)
        assert not chk.ok and chk.worst_value < 0
        assert chk.worst_cell in {(i, j) for i in (15, 16) for j in (15, 16)}

    def test_solution_is_psh(self, klt64):
        fam, results = klt64
        for r in results:
            assert psh_check(r.potential, fam.form).ok


class TestCapacity:
    def test_whole_fiber(self, rng):
        f, chi = flat(32, volume=3.0)
        everything = np.ones(f.shape, bool)
        assert capacity_lower_bound(chi, everything, [zero_candidate(f)]).value == pytest.approx(3.0)
        cands = random_psh_candidates(chi, 20, rng) + bump_candidates(chi, [0.3 + 0.3j], [0.1])
        lb = capacity_lower_bound(chi, everything, cands)
        assert max(lb.masses) == pytest.approx(3.0, rel=1e-12)

    def test_empty_set(self, rng):
        f, chi = flat(32)
        lb = capacity_lower_bound(chi, np.zeros(f.shape, bool), random_psh_candidates(chi, 5, rng))
        assert lb.value == 0.0

    def test_candidates_are_admissible(self, rng):
        f, chi = flat(32)
        for u in random_psh_candidates(chi, 40, rng):
            assert u.min() >= -1.0 and u.max() <= 0.0
            assert psh_check(u, chi).ok

    def test_rejects_non_psh_candidate(self):
        f, chi = flat(32)
        u = -0.99 * np.exp(-f.distance2(0.5 + 0.5j) / 0.001)
        with pytest.raises(ValueError, match="PSH"):
            capacity_lower_bound(chi, np.ones(f.shape, bool), [u + 0.0])

    def test_truncation_candidate_mass(self, deep_fiber):
        """Mass of u_K on S = {psi <= -K}: exactly K^-n int_S (K chi + i ddbar psi_K)^n,
        hence at least K^-n int_S (chi + i ddbar psi_K)^n."""
        chi, phi = deep_fiber
        psi = phi.values - phi.values.max()
        K = 2.0
        S = psi <= -K
        psi_K = np.maximum(psi, -K)
        lhs = capacity_lower_bound(chi, S, [truncation_candidate(psi, K)]).value
        kchi = background_form(chi.fiber, volume=K * chi.volume)
        exact = localized_mass(ma_measure(psi_K, kchi), S) / K
        lower = localized_mass(ma_measure(psi_K, chi), S) / K
        assert lhs == pytest.approx(exact, rel=1e-12)
        assert lhs >= lower > 0

    def test_skew_torus_not_supported(self):
        f = build_torus_fiber(1, 0.3 + 1j, 16)
        with pytest.raises(NotImplementedError):
            verify_mass_capacity(np.zeros(f.shape), background_form(f), 2.0)


class TestMassCapacityChain:
    def test_vacuous_when_bounded(self):
        f, chi = flat(32)
        rep = verify_mass_capacity(0.1 * np.cos(2 * np.pi * f.z[0].real), chi, 3.0)
        assert rep.mass == 0.0 and rep.bound == 0.0 and rep.ok

    @pytest.mark.parametrize("K", [2.0, 3.0])
    def test_deep_fiber_chain(self, deep_fiber, K):
        chi, phi = deep_fiber
        rep = verify_mass_capacity(phi, chi, K)
        assert rep.mass > 1.0
        assert rep.ok
        assert rep.slacks[0] >= 0 and rep.slacks[2] >= 0
        assert abs(rep.slacks[1]) < 1e-12
        assert rep.shift == pytest.approx(float(phi.values.max()))

    def test_naive_chain_on_small_grid(self, rng):
        """Slacks against a double-loop re-evaluation on a 16 x 16 grid."""
        from kelab.checks import naive_laplacian
        N = 16
        f, chi = flat(N)
        psi = random_psh_candidates(chi, 1, rng)[0] * 3.0
        K = 1.5
        rep = verify_mass_capacity(psi, chi, K)
        vals = (psi - psi.max()).tolist()
        S = [[vals[i][j] <= -K for j in range(N)] for i in range(N)]
        Sp = [[any(S[(i + a) % N][(j + b) % N] for a in (-1, 0, 1) for b in (-1, 0, 1))
               for j in range(N)] for i in range(N)]
        lap = naive_laplacian(vals, N)
        lapK = naive_laplacian([[max(v, -K) / K for v in row] for row in vals], N)
        cell = 1.0 / N ** 2
        A = math.fsum((1 + 0.5 * lap[i][j]) * cell for i in range(N) for j in range(N) if S[i][j])
        cap = math.fsum((1 + 0.5 * lapK[i][j]) * cell for i in range(N) for j in range(N)
                        if Sp[i][j])
        assert rep.mass == pytest.approx(A, abs=1e-12)
        assert rep.bound == pytest.approx(K * cap, abs=1e-12)


class TestCapacityEnergy:
    def test_zero_potential(self):
        f, chi = flat(32, volume=2.0)
        for K in (1.0, 2.0, 4.0):
            rep = verify_capacity_energy(np.zeros(f.shape), chi, K)
            assert rep.rhs == pytest.approx(2.0 / K)
            assert rep.lower_bound == 0.0

    def test_deep_fiber_margins(self, deep_fiber, rng):
        chi, phi = deep_fiber
        cands = random_psh_candidates(chi, 100, rng)
        for K in (2.0, 4.0, 8.0):
            rep = verify_capacity_energy(phi, chi, K, candidates=cands)
            assert rep.ok and rep.margin > 0
            default = verify_capacity_energy(phi, chi, K)
            assert default.ok


class TestAdmissible:
    def test_constant_composition(self):
        f, chi = flat(16)
        comp = compose_admissible(AdmissibleFn.neg_log(), np.full(f.shape, -math.e), chi)
        assert np.allclose(comp.potential.values, -1.0, rtol=0, atol=1e-15)
        # a constant field: only stencil rounding remains
        assert np.max(np.abs(comp.identity_defect)) < 1e-12

    def test_power_profile_converges(self):
        """i ddbar of -(-log|z|^2)^(1/2) against its closed-form density on an annulus."""
        delta = 0.5
        H = AdmissibleFn.neg_power(delta)
        errs = []
        for N in (32, 64, 128):
            f = build_annulus_fiber(0.05, N, N)
            chi = background_form(f)
            r = np.abs(f.z[0])
            u = np.log(r ** 2)
            band = (r > 0.1) & (r < 0.5)
            comp = compose_admissible(H, u, chi)
            ddbar = ma_measure(comp.potential, chi).values - chi.density
            profile = 2 * delta * (1 - delta) / ((-u) ** (1 + delta) * r ** 2)
            errs.append(np.max(np.abs(ddbar - profile)[band] / profile[band]))
        orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
        assert np.all(orders > 1.8) and errs[-1] < 1e-3

    def test_violation_is_reported(self):
        f, chi = flat(64)
        u = -1.0 - 0.5 * np.cos(2 * np.pi * f.z[0].real)
        comp = compose_admissible(AdmissibleFn.neg_log(scale=40.0), u, chi)
        assert not comp.condition_holds
        assert not comp.psh.ok

    def test_tabulated(self):
        x = np.linspace(-5, -0.5, 50)
        H = AdmissibleFn.table(x, -np.log(-x))
        assert H.validate(-4.5, -1.0)
        with pytest.raises(ValueError):
            AdmissibleFn.table(x, np.log(-x))

    def test_rejects_nonnegative(self):
        f, chi = flat(16)
        with pytest.raises(ValueError):
            compose_admissible(AdmissibleFn.neg_log(), np.zeros(f.shape), chi)
