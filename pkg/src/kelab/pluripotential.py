"""Monge-Ampère measures, sublevel volumes, capacity bounds and admissible functions.

Sublevel sets are unions of whole cells (cell-centre membership) and all
integrals are midpoint sums with exactly rounded summation, so results do
not depend on traversal order.

Capacity operations are implemented for n = 1 periodic grids, where the
discrete Laplacian is a symmetric M-matrix: there the discrete maximum of
two omega-subharmonic functions is again omega-subharmonic and discrete
integration by parts is exact, so the capacity lemmas hold cell-for-cell.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from .geometry import FiberGrid, HermitianForm, integrate
from .operators import MetricPieces, gradient, partial_laplacians
from .solver import PotentialField
from .validation import check_field, check_region, freeze

__all__ = [
    "MeasureField",
    "ma_measure",
    "sublevel_volume",
    "weighted_sublevel",
    "localized_mass",
    "disk_region",
    "away_from",
    "PSHCheck",
    "psh_check",
    "CapacityBound",
    "capacity_lower_bound",
    "zero_candidate",
    "truncation_candidate",
    "scaled_candidate",
    "bump_candidates",
    "random_psh_candidates",
    "MassCapacityReport",
    "verify_mass_capacity",
    "CapacityEnergyReport",
    "verify_capacity_energy",
    "AdmissibleFn",
    "Composition",
    "compose_admissible",
]


def _values(u, fiber=None):
    if isinstance(u, PotentialField):
        return u.values, u.mask
    arr = np.asarray(u, dtype=float)
    return arr, np.ones(arr.shape, dtype=bool)


def _as_potential(u, fiber) -> PotentialField:
    if isinstance(u, PotentialField):
        return u
    return PotentialField.from_values(fiber, u)


# ------------------------------------------------------------------ measures

@dataclass(frozen=True, eq=False)
class MeasureField:
    """Cell density (against dA) of (chi + i ddbar phi)^m ^ chi^(n-m)."""

    fiber: FiberGrid
    values: np.ndarray
    m: int
    n: int
    mask: np.ndarray

    @property
    def total(self) -> float:
        return integrate(self.values, self.fiber.dA)

    @property
    def cell_mass(self) -> np.ndarray:
        return self.values * self.fiber.dA


def ma_measure(phi, form: HermitianForm, m: Optional[int] = None) -> MeasureField:
    """Mixed Monge-Ampère measure of ``phi`` against ``form``.

    ``m`` defaults to n (the top-degree measure).  For m = 0 the density is
    det(chi) regardless of phi.
    """
    fiber = form.fiber
    n = fiber.n
    m = n if m is None else int(m)
    if not 0 <= m <= n:
        raise ValueError(f"mixed degree m={m} outside [0, {n}]")
    pot = _as_potential(phi, fiber)
    if pot.fiber.shape != fiber.shape:
        raise ValueError("potential and form live on different grids")
    dens = MetricPieces(form, pot.values).mixed(m)
    return MeasureField(fiber, freeze(np.array(dens, dtype=float)), m, n, pot.mask)


def sublevel_volume(phi, mu: MeasureField, K: float) -> float:
    """mu-mass of the cells where phi < -K."""
    values, _ = _values(phi)
    sel = values < -K
    return integrate(np.where(sel, mu.values, 0.0), mu.fiber.dA)


def weighted_sublevel(phi, mu: MeasureField, K: float) -> float:
    """Integral of |phi| d mu over the cells where phi < -K."""
    values, _ = _values(phi)
    sel = values < -K
    return integrate(np.where(sel, np.abs(values) * mu.values, 0.0), mu.fiber.dA)


def localized_mass(mu: MeasureField, region) -> float:
    """mu-mass of ``region`` (boolean mask or callable ``region(fiber)``)."""
    sel = check_region(region, mu.fiber)
    return integrate(np.where(sel, mu.values, 0.0), mu.fiber.dA)


def disk_region(centers, radius: float) -> Callable[[FiberGrid], np.ndarray]:
    """Cells within ``radius`` of any of ``centers``."""
    centers = list(centers)

    def region(fiber):
        sel = np.zeros(fiber.shape, dtype=bool)
        for c in centers:
            sel |= fiber.distance2(c) < radius * radius
        return sel
    return region


def away_from(centers, radius: float) -> Callable[[FiberGrid], np.ndarray]:
    """Complement of :func:`disk_region` (cells at distance >= radius)."""
    inside = disk_region(centers, radius)
    return lambda fiber: ~inside(fiber)


# ------------------------------------------------------------------ PSH test

@dataclass(frozen=True)
class PSHCheck:
    ok: bool
    worst_cell: tuple
    worst_value: float

    def __bool__(self):
        return self.ok


def psh_check(u, form: HermitianForm, tol: float = 0.0) -> PSHCheck:
    """Discrete test of chi + i ddbar u >= -tol on the valid cells of ``u``.

    Returns the verdict together with the cell of smallest eigenvalue.
    """
    fiber = form.fiber
    values, mask = _values(u)
    values = check_field(values, fiber, "u")
    lam = MetricPieces(form, values).min_eigenvalue()
    lam = np.where(mask, lam, np.inf)
    idx = np.unravel_index(int(np.argmin(lam)), lam.shape)
    worst = float(lam[idx])
    return PSHCheck(bool(worst >= -tol), tuple(int(i) for i in idx), worst)


# ------------------------------------------------------------------ capacity

def _require_capacity_grid(form):
    fiber = form.fiber
    if fiber.n != 1 or fiber.kind != "torus":
        raise NotImplementedError("capacity operations are implemented for n = 1 tori")
    if fiber.tau.real != 0.0:
        raise NotImplementedError("capacity operations need a rectangular torus "
                                  "(monotone 5-point stencil)")


def _check_candidate(u, form, tol):
    values, _ = _values(u)
    if values.min() < -1.0 - tol or values.max() > tol:
        raise ValueError(f"capacity candidate leaves [-1, 0]: range "
                         f"[{values.min():.3e}, {values.max():.3e}]")
    chk = psh_check(values, form, tol=tol)
    if not chk.ok:
        raise ValueError(f"capacity candidate is not omega-PSH at cell {chk.worst_cell} "
                         f"(eigenvalue {chk.worst_value:.3e})")
    return values


@dataclass(frozen=True)
class CapacityBound:
    value: float
    best: int
    masses: tuple


def capacity_lower_bound(form: HermitianForm, region, candidates: Sequence,
                         tol: float = 1e-12) -> CapacityBound:
    """max over candidates u of  int_region (chi + i ddbar u)^n.

    Every candidate must satisfy -1 <= u <= 0 and be discretely omega-PSH;
    the result is then a certified lower bound for the capacity of the
    region.  An empty candidate list gives 0.
    """
    sel = check_region(region, form.fiber)
    masses = []
    for u in candidates:
        values = _check_candidate(u, form, tol)
        dens = MetricPieces(form, values).det()
        masses.append(integrate(np.where(sel, dens, 0.0), form.fiber.dA))
    if not masses:
        return CapacityBound(0.0, -1, ())
    best = int(np.argmax(masses))
    return CapacityBound(float(masses[best]), best, tuple(masses))


def zero_candidate(fiber) -> np.ndarray:
    return np.zeros(fiber.shape)


def truncation_candidate(psi, K: float) -> np.ndarray:
    """u_K = max(psi, -K) / K for psi <= 0 and K >= 1."""
    values, _ = _values(psi)
    if K < 1:
        raise ValueError("truncation level K must be >= 1")
    if values.max() > 0:
        raise ValueError("truncation candidate needs psi <= 0 (shift by sup first)")
    return np.maximum(values, -K) / K


def scaled_candidate(form: HermitianForm, f) -> np.ndarray:
    """Largest multiple c (f - max f) that is omega-PSH with range in [-1, 0]."""
    f = check_field(f, form.fiber, "profile")
    span = float(f.max() - f.min())
    if span == 0.0:
        return zero_candidate(form.fiber)
    ddf = MetricPieces(form, f).min_eigenvalue() - form.min_eigenvalue()
    g = form.min_eigenvalue()
    neg = ddf < 0
    c = 1.0 / span
    if np.any(neg):
        c = min(c, float(np.min(g[neg] / -ddf[neg])))
    c *= 1.0 - 1e-9
    return c * (f - f.max())


def bump_candidates(form: HermitianForm, centers, widths) -> list:
    """Scaled Gaussian bumps and wells of the (smooth periodic) distance."""
    fiber = form.fiber
    out = []
    for c in centers:
        d2 = fiber.distance2(c)
        for w in widths:
            g = np.exp(-d2 / (w * w))
            out.append(scaled_candidate(form, g))
            out.append(scaled_candidate(form, -g))
    return out


def random_psh_candidates(form: HermitianForm, count: int, rng=None, max_mode: int = 4) -> list:
    """Random omega-PSH candidates in [-1, 0].

    Alternates random low-frequency trigonometric profiles with random
    sharp bumps/wells, each scaled by :func:`scaled_candidate`.
    """
    rng = np.random.default_rng(rng)
    fiber = form.fiber
    tau = fiber.tau
    u = fiber.z[0].imag / tau.imag
    s = fiber.z[0].real - tau.real * u
    out = []
    for i in range(count):
        if i % 2 == 0:
            f = np.zeros(fiber.shape)
            for _ in range(3):
                p, q = rng.integers(-max_mode, max_mode + 1, size=2)
                phase = rng.uniform(0, 2 * np.pi)
                f += rng.normal() * np.cos(2 * np.pi * (p * s + q * u) + phase)
        else:
            c = complex(rng.uniform(0, 1) + tau * rng.uniform(0, 1))
            w = rng.uniform(0.02, 0.3)
            f = rng.choice((-1.0, 1.0)) * np.exp(-fiber.distance2(c) / (w * w))
        out.append(scaled_candidate(form, f))
    return out


def _dilate(sel):
    out = sel.copy()
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            out |= np.roll(np.roll(sel, di, 0), dj, 1)
    return out


@dataclass(frozen=True)
class MassCapacityReport:
    """Slacks in the chain  mass(psi <= -K) <= K^n * capacity.

    ``mass`` is A = int_{psi<=-K} (chi + i ddbar psi)^n.  With S+ the
    one-cell dilation of S = {psi <= -K}:

        A  <=  M_psi(S+)  ==  M_psiK(S+)  <=  K^n M_uK(S+)  =: bound

    all hold exactly on the grid.  ``truncated_mass`` is the undilated
    int_S (chi + i ddbar psi_K)^n; ``boundary_gap`` = A - truncated_mass is
    the discrete flux through the cells adjacent to S.
    """

    K: float
    shift: float
    mass: float
    dilated_mass: float
    dilated_truncated_mass: float
    bound: float
    truncated_mass: float
    capacity_mass: float
    tolerance: float
    slacks: tuple = field(default_factory=tuple)

    @property
    def boundary_gap(self):
        return self.mass - self.truncated_mass

    @property
    def min_slack(self):
        return min(self.slacks)

    @property
    def ok(self):
        return self.min_slack >= -self.tolerance


def _shift_nonpositive(phi):
    values, _ = _values(phi)
    shift = float(values.max())
    return values - shift, shift


def verify_mass_capacity(phi, form: HermitianForm, K: float) -> MassCapacityReport:
    """Check the chain mass(psi <= -K) <= K^n Cap(psi <= -K) on the grid.

    ``phi`` is shifted by its supremum first (psi = phi - sup phi <= 0); the
    shift is recorded.  Tolerance is 10 N^-2 V.
    """
    _require_capacity_grid(form)
    if K < 1:
        raise ValueError("the chain needs K >= 1")
    fiber = form.fiber
    psi, shift = _shift_nonpositive(phi)
    n = fiber.n
    S = psi <= -K
    Sp = _dilate(S)
    dA = fiber.dA
    d_psi = MetricPieces(form, psi).det()
    psi_K = np.maximum(psi, -K)
    d_psiK = MetricPieces(form, psi_K).det()
    d_uK = MetricPieces(form, psi_K / K).det()

    def mass(d, sel):
        return integrate(np.where(sel, d, 0.0), dA)

    A = mass(d_psi, S)
    A_plus = mass(d_psi, Sp)
    A_plus_K = mass(d_psiK, Sp)
    cap = mass(d_uK, Sp)
    bound = K ** n * cap
    tol = 10.0 * fiber.resolution ** -2 * form.volume
    slacks = (A_plus - A, -abs(A_plus - A_plus_K), bound - A_plus_K)
    return MassCapacityReport(K, shift, A, A_plus, A_plus_K, bound, mass(d_psiK, S),
                              cap, tol, slacks)


@dataclass(frozen=True)
class CapacityEnergyReport:
    """Margin of  Cap(phi < -K) <= (int(-phi) chi^n + n V) / K  over candidates."""

    K: float
    shift: float
    rhs: float
    lower_bound: float
    best: int
    margins: tuple
    tolerance: float

    @property
    def margin(self):
        return min(self.margins) if self.margins else self.rhs

    @property
    def ok(self):
        return self.margin >= -self.tolerance


def verify_capacity_energy(phi, form: HermitianForm, K: float,
                           candidates: Optional[Sequence] = None) -> CapacityEnergyReport:
    """Compare candidate capacity lower bounds of {psi < -K} with the energy bound.

    ``phi`` is shifted to psi = phi - sup phi <= 0.  Default candidates are
    u = 0 and the truncation u_K of psi.
    """
    _require_capacity_grid(form)
    if K < 1:
        raise ValueError("the bound needs K >= 1")
    fiber = form.fiber
    psi, shift = _shift_nonpositive(phi)
    if candidates is None:
        candidates = [zero_candidate(fiber), truncation_candidate(psi, K)]
    rhs = (integrate(-psi * form.density, fiber.dA) + fiber.n * form.volume) / K
    lb = capacity_lower_bound(form, psi < -K, candidates)
    margins = tuple(rhs - m for m in lb.masses)
    tol = 10.0 * fiber.resolution ** -2 * form.volume
    return CapacityEnergyReport(K, shift, rhs, lb.value, lb.best, margins, tol)


# ------------------------------------------------------------------ admissible functions

@dataclass(frozen=True)
class AdmissibleFn:
    """Convex increasing H on the negative half-line with H, H', H''."""

    tag: str
    H: Callable
    dH: Callable
    d2H: Callable
    params: tuple = ()

    @classmethod
    def neg_log(cls, scale: float = 1.0) -> "AdmissibleFn":
        """H(x) = -scale * log(-x)."""
        if not scale > 0:
            raise ValueError("scale must be positive")
        return cls("neg_log",
                   lambda x: -scale * np.log(-x),
                   lambda x: -scale / x,
                   lambda x: scale / (x * x),
                   (scale,))

    @classmethod
    def neg_power(cls, delta: float) -> "AdmissibleFn":
        """H(x) = -(-x)^(1 - delta), 0 < delta < 1."""
        if not 0.0 < delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        p = 1.0 - delta
        return cls("neg_power",
                   lambda x: -(-x) ** p,
                   lambda x: p * (-x) ** (-delta),
                   lambda x: delta * p * (-x) ** (-delta - 1.0),
                   (delta,))

    @classmethod
    def table(cls, x, y) -> "AdmissibleFn":
        """Cubic-spline interpolant of tabulated (x, H(x)), x < 0 increasing."""
        spline = CubicSpline(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        fn = cls("table", spline, spline.derivative(1), spline.derivative(2),
                 (tuple(map(float, x)),))
        fn.validate(float(np.min(x)), float(np.max(x)))
        return fn

    def validate(self, lo: float, hi: float, samples: int = 1000):
        """Check H' > 0 and H'' > 0 at ``samples`` points of [lo, hi] (hi < 0)."""
        if not lo < hi <= 0:
            raise ValueError("admissible range must lie in the negative half-line")
        xs = np.linspace(lo, hi, samples)
        xs = xs[xs < 0]
        d1, d2 = np.asarray(self.dH(xs)), np.asarray(self.d2H(xs))
        if not (np.all(d1 > 0) and np.all(d2 > 0)):
            raise ValueError(f"{self.tag}: H' > 0 and H'' > 0 fail on [{lo}, {hi}]")
        return True


@dataclass(frozen=True, eq=False)
class Composition:
    """H o u with its discrete PSH verdict and chain-rule defect."""

    potential: PotentialField
    psh: PSHCheck
    h_prime_max: float
    identity_defect: np.ndarray

    @property
    def condition_holds(self):
        """The sampled condition H'(u) <= 1 under which H o u stays omega-PSH."""
        return self.h_prime_max <= 1.0


def compose_admissible(H: AdmissibleFn, u, form: HermitianForm, tol: float = 0.0) -> Composition:
    """Compose an admissible function with u < 0 and test the result.

    ``identity_defect`` is Delta(H o u) - H'(u) Delta u - H''(u) |grad u|^2
    per cell (discrete operators), which is O(h^2) for smooth u.  The PSH
    verdict is reported, never asserted: it may fail when H'(u) > 1.
    """
    fiber = form.fiber
    pot = _as_potential(u, fiber)
    values = pot.values
    if np.any(values >= 0):
        raise ValueError("admissible composition needs u < 0 everywhere")
    hu = np.asarray(H.H(values), dtype=float)
    d1 = np.asarray(H.dH(values), dtype=float)
    d2 = np.asarray(H.d2H(values), dtype=float)
    comps = gradient(fiber, values)
    grad2 = sum(c * c for c in comps)
    lap_hu, lap_u = _laplacian(fiber, hu), _laplacian(fiber, values)
    defect = lap_hu - d1 * lap_u - d2 * grad2
    out = PotentialField(fiber, freeze(hu), pot.mask, t=pot.t)
    return Composition(out, psh_check(out, form, tol), float(np.max(d1[pot.mask])),
                       freeze(defect))


def _laplacian(fiber, v):
    if fiber.n == 1:
        return (fiber.laplacians[0] @ v.ravel()).reshape(fiber.shape)
    a, b = partial_laplacians(fiber, v)
    return a + b
