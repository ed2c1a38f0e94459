"""Verification batteries with pass/fail results and measured slack.

Each battery builds its own inputs (seeded), runs the library operation and
compares against an independent oracle: analytic brackets, a closed-form
solution, or naive per-cell loops written without the vectorised operators.
"""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .geometry import (PoleSpec, VolumeDensity, background_form, build_annulus_fiber,
                       build_torus_fiber, integrate, volume_density)
from .oracle import hyperbolic_annulus_oracle
from .pluripotential import (capacity_lower_bound, localized_mass, ma_measure,
                             random_psh_candidates, sublevel_volume, weighted_sublevel)
from .solver import SolverOptions, solve_ke
from .wp import wp_potential

__all__ = [
    "CheckResult",
    "identity_density_check",
    "annulus_oracle_ladder",
    "annulus_oracle_check",
    "max_principle_battery",
    "comparison_battery",
    "brute_force_battery",
    "naive_laplacian",
    "naive_sum",
    "random_smooth_field",
]


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    measured: float
    threshold: float
    detail: str = ""

    def as_dict(self):
        d = asdict(self)
        for k in ("measured", "threshold"):
            v = d[k]
            if isinstance(v, float) and not math.isfinite(v):
                d[k] = repr(v)
        return d


def random_smooth_field(fiber, rng, amplitude=0.3, modes=3, max_freq=3):
    """Sum of a few random lattice Fourier modes, sup-norm <= amplitude."""
    tau = fiber.tau
    u = fiber.z[0].imag / tau.imag
    s = fiber.z[0].real - tau.real * u
    g = np.zeros(fiber.shape)
    for _ in range(modes):
        p, q = rng.integers(-max_freq, max_freq + 1, size=2)
        g += rng.normal() * np.cos(2 * np.pi * (p * s + q * u) + rng.uniform(0, 2 * np.pi))
    peak = float(np.max(np.abs(g)))
    return g * (amplitude / peak) if peak > 0 else g


# ------------------------------------------------------------------ naive oracles

def naive_laplacian(values, N, tau_im=1.0):
    """5-point Laplacian by explicit double loop (rectangular torus)."""
    hs, hu = 1.0 / N, tau_im / N
    out = [[0.0] * N for _ in range(N)]
    for i in range(N):
        for j in range(N):
            c = values[i][j]
            out[i][j] = ((values[(i + 1) % N][j] + values[i - 1][j] - 2 * c) / (hs * hs)
                         + (values[i][(j + 1) % N] + values[i][j - 1] - 2 * c) / (hu * hu))
    return out


def naive_sum(terms):
    """Exactly rounded sum of a Python list (order independent)."""
    return math.fsum(terms)


# ------------------------------------------------------------------ batteries

def identity_density_check(N=64, n=1) -> CheckResult:
    t0 = time.perf_counter()
    fiber = build_torus_fiber(n, 1j, N)
    form = background_form(fiber, "flat")
    dens = VolumeDensity.from_values(fiber, form.density)
    phi = solve_ke(fiber, form, dens)
    psi = wp_potential(phi, form).psi_wp
    elapsed = time.perf_counter() - t0
    worst = max(phi.residual, float(np.max(np.abs(phi.values))), abs(psi))
    return CheckResult("identity_density", worst < 1e-12 and elapsed < 1.0, worst, 1e-12,
                       f"n_iter={phi.n_iter} elapsed={elapsed:.3f}s")


def annulus_oracle_ladder(r_in=0.05, levels=(32, 64, 128), guard=0.25):
    """Sup errors against the closed-form hyperbolic potential and the fitted order."""
    oracle = hyperbolic_annulus_oracle(r_in)
    defect = oracle.verify()
    errors = []
    for N in levels:
        fiber = build_annulus_fiber(r_in, N, N)
        fields = oracle.on_grid(fiber, guard)
        phi = solve_ke(fiber, fields.form, fields.density, SolverOptions(boundary="dirichlet"),
                       dirichlet=fields.dirichlet)
        err = np.abs(phi.values - fields.potential)[fields.interior]
        errors.append(float(err.max()))
    h = np.array([1.0 / N for N in levels])
    order = float(np.polyfit(np.log(h), np.log(errors), 1)[0])
    return defect, errors, order


def annulus_oracle_check(r_in=0.05, levels=(32, 64, 128)) -> CheckResult:
    defect, errors, order = annulus_oracle_ladder(r_in, levels)
    ok = defect < 1e-12 and 1.8 <= order <= 2.2 and errors[-1] < 1e-3
    return CheckResult("annulus_oracle_order", ok, order, 1.8,
                       f"errors={errors} defect={defect:.2e}")


def max_principle_battery(seed=0, count=20, N=64) -> CheckResult:
    """phi stays inside [min g, max g] for Omega = exp(-g) chi."""
    rng = np.random.default_rng(seed)
    fiber = build_torus_fiber(1, 1j, N)
    form = background_form(fiber, "flat")
    tol = 10.0 / N ** 2
    worst = -math.inf
    for _ in range(count):
        g = random_smooth_field(fiber, rng, amplitude=rng.uniform(0.05, 0.5))
        dens = VolumeDensity.from_values(fiber, np.exp(-g) * form.density)
        phi = solve_ke(fiber, form, dens).values
        excess = max(float(phi.max() - g.max()), float(g.min() - phi.min()))
        worst = max(worst, excess)
    return CheckResult("max_principle_bracket", worst <= tol, worst, tol, f"{count} instances")


def comparison_battery(seed=1, count=20, N=64) -> CheckResult:
    """Omega1 <= Omega2 pointwise implies phi1 >= phi2."""
    rng = np.random.default_rng(seed)
    fiber = build_torus_fiber(1, 1j, N)
    form = background_form(fiber, "flat")
    tol = 10.0 / N ** 2
    worst = -math.inf
    for _ in range(count):
        g = random_smooth_field(fiber, rng, amplitude=0.3)
        c = complex(rng.uniform(0, 1), rng.uniform(0, 1))
        w = rng.uniform(0.05, 0.2)
        bump = rng.uniform(0.1, 1.0) * np.exp(-fiber.distance2(c) / w ** 2)
        base = np.exp(-g) * form.density
        phi1 = solve_ke(fiber, form, VolumeDensity.from_values(fiber, base)).values
        phi2 = solve_ke(fiber, form, VolumeDensity.from_values(fiber, base * (1 + bump))).values
        worst = max(worst, float(np.max(phi2 - phi1)))
    return CheckResult("comparison_monotonicity", worst <= tol, worst, tol, f"{count} pairs")


def brute_force_battery(seed=2, N=16) -> CheckResult:
    """Integral operations against naive double loops on an N x N torus."""
    rng = np.random.default_rng(seed)
    fiber = build_torus_fiber(1, 1j, N)
    form = background_form(fiber, "flat")
    dens = volume_density(fiber, PoleSpec([0.5 + 0.5j], [-0.5]), 0.0, form=form)
    phi = solve_ke(fiber, form, dens)
    # deepen the field so the sublevel sets are non-trivial
    psi = random_psh_candidates(form, 1, rng)[0] * 3.0 + phi.values
    vals = [[float(psi[i, j]) for j in range(N)] for i in range(N)]
    cell = fiber.dA[0, 0]
    lap = naive_laplacian(vals, N)
    g = float(form.density[0, 0])
    mu_naive = [[g + 0.5 * lap[i][j] for j in range(N)] for i in range(N)]
    mu = ma_measure(psi, form, 1)
    errs = []
    levels = sorted({-float(np.median(psi)), -float(np.quantile(psi, 0.25))})
    for K in levels:
        sel = [(i, j) for i in range(N) for j in range(N) if vals[i][j] < -K]
        v = naive_sum([mu_naive[i][j] * cell for i, j in sel])
        w = naive_sum([abs(vals[i][j]) * mu_naive[i][j] * cell for i, j in sel])
        errs.append(abs(sublevel_volume(psi, mu, K) - v))
        errs.append(abs(weighted_sublevel(psi, mu, K) - w))
    region = fiber.distance2(0.5 + 0.5j) < 0.09
    loc = naive_sum([mu_naive[i][j] * cell for i in range(N) for j in range(N) if region[i, j]])
    errs.append(abs(localized_mass(mu, region) - loc))
    cand = random_psh_candidates(form, 3, rng)
    lb = capacity_lower_bound(form, region, cand)
    for k, u in enumerate(cand):
        ul = [[float(u[i, j]) for j in range(N)] for i in range(N)]
        lu = naive_laplacian(ul, N)
        m = naive_sum([(g + 0.5 * lu[i][j]) * cell for i in range(N) for j in range(N)
                       if region[i, j]])
        errs.append(abs(lb.masses[k] - m))
    worst = max(errs)
    return CheckResult("brute_force_16x16", worst < 1e-12, worst, 1e-12, f"{len(errs)} comparisons")
