"""The log-log barrier and the uniform C^0 lower bound it certifies.

Given a section field |sigma|^2 in (0, 1/2] vanishing on the degeneration
locus, set  L = -log|sigma|^2 >= log 2  and

    u_eps = -eps L - eps^2 L^(1 - delta) - 3n          (<= -3n)
    f_eps = -(2n + eps) log(-u_eps)

so that f_eps = H(u_eps) for the admissible H(x) = -(2n + eps) log(-x),
with H'(u_eps) = (2n + eps) / |u_eps| < 1 when eps < n.  On a solved fiber
the constant C_eps = max (f_eps - phi) makes phi >= f_eps - C_eps.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .geometry import FiberGrid, HermitianForm
from .pluripotential import psh_check
from .solver import PotentialField
from .validation import freeze

__all__ = [
    "SectionField",
    "BarrierParams",
    "BarrierField",
    "C0Report",
    "model_section",
    "constant_section",
    "barrier_u",
    "barrier_f",
    "verify_c0",
    "measure_eps0",
    "barrier_psh_margin",
    "profile_slope",
    "with_reference",
    "default_guard",
]

SECTION_CAP = 0.5
SECTION_FLOOR = 1e-300


@dataclass(frozen=True, eq=False)
class SectionField:
    """Cell values of |sigma|^2 in (0, 1/2].

    ``clipped`` marks cells raised to the floor; they are excluded from
    C_eps witnesses.
    """

    fiber: FiberGrid
    values: np.ndarray
    centers: tuple = ()
    t: complex = 0.0
    clipped: Optional[np.ndarray] = None

    def __post_init__(self):
        v = self.values
        if v.shape != self.fiber.shape:
            raise ValueError("section field does not match the grid")
        if not (np.all(v > 0) and np.all(v <= SECTION_CAP)):
            raise ValueError("section values must lie in (0, 1/2]")
        if self.clipped is None:
            object.__setattr__(self, "clipped", freeze(np.zeros(v.shape, dtype=bool)))

    @property
    def neg_log(self) -> np.ndarray:
        """-log|sigma|^2, bounded below by log 2."""
        return -np.log(self.values)


def constant_section(fiber: FiberGrid, value: float = SECTION_CAP) -> SectionField:
    return SectionField(fiber, freeze(np.full(fiber.shape, float(value))))


def model_section(fiber: FiberGrid, centers, t=0.0, smooth=None,
                  floor: float = SECTION_FLOOR) -> SectionField:
    """|sigma|^2 = min(1/2, S * prod_j (d_j^2 + |t|^2)).

    Parameters
    ----------
    centers : sequence
        Points of the degeneration locus (one complex coordinate per
        dimension each).
    smooth : callable, optional
        Positive smooth factor S(fiber); defaults to 1.
    floor : float
        Values below ``floor`` are raised to it and flagged as clipped.
    """
    centers = tuple(centers)
    if not centers:
        raise ValueError("model section needs at least one centre")
    t2 = abs(t) ** 2
    raw = np.ones(fiber.shape)
    for c in centers:
        d2 = fiber.distance2(c)
        if np.any(d2 == 0):
            raise ValueError("a section centre coincides with a cell centre")
        raw = raw * (d2 + t2)
    if smooth is not None:
        raw = raw * np.asarray(smooth(fiber), dtype=float)
    clipped = raw < floor
    vals = np.clip(raw, floor, SECTION_CAP)
    return SectionField(fiber, freeze(vals), centers, t, freeze(clipped))


@dataclass(frozen=True)
class BarrierParams:
    """Barrier exponents; construction enforces eps > n * delta."""

    eps: float
    delta: float
    n: int = 1

    def __post_init__(self):
        if self.n not in (1, 2):
            raise ValueError("dimension must be 1 or 2")
        if not (self.eps > 0 and 0 < self.delta < 1):
            raise ValueError("need eps > 0 and 0 < delta < 1")
        if not self.eps > self.n * self.delta:
            raise ValueError(f"barrier needs eps > n*delta (got eps={self.eps}, "
                             f"n*delta={self.n * self.delta})")

    @property
    def slope(self) -> float:
        """Coefficient 2n + eps of the admissible function."""
        return 2 * self.n + self.eps


@dataclass(frozen=True, eq=False)
class BarrierField(PotentialField):
    """f_eps together with the cellwise slope H'(u_eps)."""

    h_prime: Optional[np.ndarray] = None

    @property
    def h_prime_max(self) -> float:
        return float(np.max(self.h_prime))

    @property
    def strict(self) -> bool:
        """H'(u_eps) < 1 at every cell."""
        return bool(np.all(self.h_prime < 1.0))


def barrier_u(sigma: SectionField, p: BarrierParams) -> PotentialField:
    L = sigma.neg_log
    u = -p.eps * L - p.eps ** 2 * L ** (1.0 - p.delta) - 3.0 * p.n
    return PotentialField(sigma.fiber, freeze(u), freeze(~sigma.clipped), t=sigma.t)


def barrier_f(u: PotentialField, p: BarrierParams) -> BarrierField:
    """f_eps = -(2n + eps) log(-u) with H'(u) recorded per cell."""
    vals = u.values
    if np.any(vals > -3.0 * p.n):
        raise ValueError(f"barrier composition needs u <= -3n = {-3 * p.n}")
    f = -p.slope * np.log(-vals)
    hp = p.slope / np.abs(vals)
    return BarrierField(u.fiber, freeze(f), u.mask, t=u.t, h_prime=freeze(hp))


@dataclass(frozen=True)
class C0Report:
    """C_eps = max over valid cells of (f_eps - phi) with its witness."""

    eps: float
    delta: float
    t: complex
    C_eps: float
    witness: tuple
    witness_point: complex
    reference: Optional[float] = None

    @property
    def refinement_ratio(self) -> Optional[float]:
        """Relative change |C - C_ref| / |C_ref| against another resolution."""
        if self.reference is None:
            return None
        return abs(self.C_eps - self.reference) / abs(self.reference)

    def as_dict(self):
        return {"eps": self.eps, "delta": self.delta, "t": abs(self.t),
                "C_eps": self.C_eps, "witness": list(self.witness),
                "refinement_ratio": self.refinement_ratio}


def verify_c0(phi: PotentialField, f: PotentialField, params: Optional[BarrierParams] = None,
              reference: Optional[float] = None) -> C0Report:
    """Smallest C with phi >= f - C on cells valid for both fields."""
    if phi.fiber.shape != f.fiber.shape:
        raise ValueError("potential and barrier live on different grids")
    valid = phi.mask & f.mask
    diff = np.where(valid, f.values - phi.values, -np.inf)
    idx = np.unravel_index(int(np.argmax(diff)), diff.shape)
    z = complex(phi.fiber.z[(0,) + idx])
    eps = params.eps if params else float("nan")
    delta = params.delta if params else float("nan")
    return C0Report(eps, delta, phi.t, float(diff[idx]), tuple(int(i) for i in idx), z,
                    reference)


def with_reference(report: C0Report, reference: float) -> C0Report:
    return replace(report, reference=float(reference))


def default_guard(fiber: FiberGrid) -> float:
    """Exclusion radius max(3h, 0.6 sqrt(h)) around section centres.

    The discrete Laplacian of log|z|^2 has truncation error ~ h^2 / d^4 at
    distance d from a t = 0 centre, which exceeds the background form
    unless d >> sqrt(h).
    """
    h = fiber.cell_size
    return max(3.0 * h, 0.6 * math.sqrt(h))


def _psh_region(sigma: SectionField, below: float, guard: Optional[float]) -> np.ndarray:
    """Cells with |sigma|^2 < below, unclipped, at distance >= guard from a centre.

    The clip at 1/2 is a kink where min(1/2, .) is not PSH; near a centre
    the discrete log is not discretely subharmonic (see :func:`default_guard`).
    """
    fiber = sigma.fiber
    region = (sigma.values < below) & ~sigma.clipped
    r = default_guard(fiber) if guard is None else guard
    for c in sigma.centers:
        region &= fiber.distance2(c) >= r * r
    return region


def barrier_psh_margin(f: PotentialField, form: HermitianForm, sigma: SectionField,
                       below: float = 0.25, guard: Optional[float] = None) -> float:
    """Smallest eigenvalue of chi + i ddbar f on the barrier's PSH region."""
    region = _psh_region(sigma, below, guard) & f.mask
    if not np.any(region):
        return math.inf
    from .operators import MetricPieces

    lam = MetricPieces(form, f.values).min_eigenvalue()
    return float(np.min(lam[region]))


def measure_eps0(sigma: SectionField, form: HermitianForm, delta: float,
                 eps_grid: Sequence[float], tol: float = 0.0, below: float = 0.25,
                 guard: Optional[float] = None) -> float:
    """Largest eps in ``eps_grid`` for which u_eps is discretely chi-PSH.

    PSH is tested on the same region as :func:`barrier_psh_margin`; only
    admissible values (eps > n delta) are tried and 0 is returned if none
    pass.
    """
    n = form.fiber.n
    region = _psh_region(sigma, below, guard)
    best = 0.0
    for eps in sorted(eps_grid):
        if eps <= n * delta:
            continue
        u = barrier_u(sigma, BarrierParams(eps, delta, n))
        if psh_check(replace(u, mask=freeze(region)), form, tol).ok:
            best = eps
        else:
            break
    return best


def profile_slope(phi: PotentialField, sigma: SectionField, p: BarrierParams,
                  n_cells: int = 32) -> float:
    """Regression slope of phi against -(2n + eps) log(-log|sigma|^2).

    Uses the ``n_cells`` valid cells with the smallest |sigma|^2.  The C^0
    bound phi >= f_eps - C_eps allows slopes up to 1.
    """
    valid = phi.mask & ~sigma.clipped
    order = np.argsort(np.where(valid, sigma.values, np.inf), axis=None)[:n_cells]
    x = -p.slope * np.log(sigma.neg_log.ravel()[order])
    y = phi.values.ravel()[order]
    if np.ptp(x) == 0:
        return 0.0
    return float(np.polyfit(x, y, 1)[0])
