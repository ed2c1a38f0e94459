"""Model fibers, background forms and degenerating density families.

Two chart kinds are supported:

* ``torus``: the flat torus C^n / (Z + tau Z)^n sampled on a cell-centred
  lattice grid (N cells per real lattice direction).  Cell centres sit half
  a cell off the lattice so lattice-symmetric points (0, 1/2, tau/2, ...)
  are cell corners and never cell centres.
* ``annulus``: the planar annulus {r_in < |x| < 1} on a log-polar grid
  (uniform in s = log r and in the angle).

All objects are immutable after construction.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional, Sequence

import numpy as np

from .validation import check_resolution, freeze

__all__ = [
    "FiberGrid",
    "HermitianForm",
    "PoleSpec",
    "VolumeDensity",
    "FamilyConfig",
    "build_torus_fiber",
    "build_annulus_fiber",
    "background_form",
    "volume_density",
    "family",
    "integrate",
]

MIN_RESOLUTION = 16


def integrate(values, dA) -> float:
    """Midpoint-rule integral with exactly rounded (order independent) summation."""
    prod = np.asarray(values, dtype=float) * np.asarray(dA, dtype=float)
    return math.fsum(np.ravel(prod))


@dataclass(frozen=True, eq=False)
class FiberGrid:
    """Discretised model fiber.

    Attributes
    ----------
    kind : {"torus", "annulus"}
    n : int
        Complex dimension (1 or 2; the annulus is always n = 1).
    shape : tuple of int
        Grid shape. Torus: ``(N,) * 2n`` with axes (s1, u1[, s2, u2]) in
        lattice coordinates z = s + tau u.  Annulus: ``(N_rad, N_ang)``.
    z : ndarray of complex
        Cell centres, shape ``(n,) + shape``.
    dA : ndarray
        Real 2n-volume of every cell, shape ``shape``.
    """

    kind: str
    n: int
    shape: tuple
    z: np.ndarray
    dA: np.ndarray
    total_volume: float
    tau: complex = 1j
    r_in: float = float("nan")
    spacing: tuple = ()
    boundary: Optional[np.ndarray] = None
    log_radius: Optional[np.ndarray] = None

    @property
    def resolution(self) -> int:
        return self.shape[0]

    @property
    def periodic(self) -> bool:
        return self.kind == "torus"

    @property
    def cell_size(self) -> float:
        """Characteristic cell diameter h used for masking and tolerances."""
        if self.kind == "torus":
            return max(abs(self.tau), 1.0) / self.resolution
        ds, dth = self.spacing
        return float(np.exp(self.log_radius[-1]) * max(ds, dth))

    def displacement(self, center) -> np.ndarray:
        """Complex displacement z - center (per complex coordinate).

        On the torus this is the smooth periodic substitute
        sin(pi ds)/pi + tau sin(pi du)/pi, which agrees with z - center to
        third order near the centre and vanishes only at lattice translates.
        """
        center = np.atleast_1d(np.asarray(center, dtype=complex))
        if center.shape != (self.n,):
            raise ValueError(f"pole center must have {self.n} complex coordinate(s)")
        w = np.empty((self.n,) + self.shape, dtype=complex)
        for k in range(self.n):
            dz = self.z[k] - center[k]
            if self.kind == "torus":
                du = dz.imag / self.tau.imag
                ds = dz.real - self.tau.real * du
                w[k] = (np.sin(np.pi * ds) + self.tau * np.sin(np.pi * du)) / np.pi
            else:
                w[k] = dz
        return w

    def distance2(self, center) -> np.ndarray:
        """Squared (smooth periodic) distance of every cell centre to ``center``."""
        w = self.displacement(center)
        return np.sum(w.real ** 2 + w.imag ** 2, axis=0)

    @cached_property
    def laplacians(self) -> tuple:
        """Sparse real Laplacians, one per complex coordinate (n = 1 only)."""
        from .operators import assemble_laplacian

        return (assemble_laplacian(self),)


def build_torus_fiber(n: int, tau: complex, N: int) -> FiberGrid:
    """Periodic cell-centred grid on C^n / (Z + tau Z)^n.

    The total real volume is ``tau.imag ** n``.
    """
    if n not in (1, 2):
        raise ValueError(f"complex dimension must be 1 or 2, got {n}")
    tau = complex(tau)
    if not tau.imag > 0:
        raise ValueError(f"torus modulus needs Im(tau) > 0, got {tau}")
    check_resolution(N, MIN_RESOLUTION)
    c = (np.arange(N) + 0.5) / N
    shape = (N,) * (2 * n)
    grids = np.meshgrid(*([c] * (2 * n)), indexing="ij", sparse=True)
    z = np.empty((n,) + shape, dtype=complex)
    for k in range(n):
        z[k] = grids[2 * k] + tau * grids[2 * k + 1]
    cell = tau.imag / N ** 2
    dA = np.full(shape, cell ** n)
    return FiberGrid(
        kind="torus",
        n=n,
        shape=shape,
        z=freeze(z),
        dA=freeze(dA),
        total_volume=tau.imag ** n,
        tau=tau,
        spacing=(1.0 / N, 1.0 / N),
    )


def build_annulus_fiber(r_in: float, N_rad: int, N_ang: int) -> FiberGrid:
    """Log-polar grid on {r_in < |x| < 1}.

    Cells are uniform in s = log r and in the angle; the innermost and
    outermost rings are flagged in ``boundary`` for Dirichlet data.
    """
    if not 0.0 < r_in < 1.0:
        raise ValueError(f"annulus inner radius must lie in (0, 1), got {r_in}")
    check_resolution(N_rad, MIN_RESOLUTION)
    check_resolution(N_ang, MIN_RESOLUTION)
    s_lo = math.log(r_in)
    ds = -s_lo / N_rad
    dth = 2.0 * math.pi / N_ang
    s = s_lo + (np.arange(N_rad) + 0.5) * ds
    theta = (np.arange(N_ang) + 0.5) * dth
    S, TH = np.meshgrid(s, theta, indexing="ij")
    z = (np.exp(S) * np.exp(1j * TH))[None]
    edges = s_lo + np.arange(N_rad + 1) * ds
    edges[-1] = 0.0
    ring = 0.5 * dth * np.diff(np.exp(2.0 * edges))
    dA = np.broadcast_to(ring[:, None], (N_rad, N_ang)).copy()
    boundary = np.zeros((N_rad, N_ang), dtype=bool)
    boundary[0] = boundary[-1] = True
    return FiberGrid(
        kind="annulus",
        n=1,
        shape=(N_rad, N_ang),
        z=freeze(z),
        dA=freeze(dA),
        total_volume=math.pi * (1.0 - r_in ** 2),
        r_in=float(r_in),
        spacing=(ds, dth),
        boundary=freeze(boundary),
        log_radius=freeze(s),
    )


@dataclass(frozen=True, eq=False)
class HermitianForm:
    """Background (1,1)-form chi, stored as per-cell Hermitian matrices.

    ``coeffs`` has shape ``(n, n) + fiber.shape``; entries are the
    coefficients against (i/2) dz_j ^ dzbar_k, so for n = 1 the single entry
    is the density of chi against dA.  ``volume`` is the normalised class
    volume  V = int det(g) dA.
    """

    fiber: FiberGrid
    coeffs: np.ndarray
    volume: float
    kind: str = "custom"
    beta: float = 0.0

    @property
    def n(self) -> int:
        return self.fiber.n

    def entry(self, j: int, k: int) -> np.ndarray:
        return self.coeffs[j, k]

    @cached_property
    def density(self) -> np.ndarray:
        """det(g): density of chi^n against dA (normalised so int chi^n = V)."""
        g = self.coeffs
        if self.n == 1:
            return freeze(np.real(g[0, 0]).copy())
        det = np.real(g[0, 0] * g[1, 1] - g[0, 1] * g[1, 0])
        return freeze(det)

    @property
    def diagonal(self) -> bool:
        return self.n == 1 or not np.any(self.coeffs[0, 1])

    def min_eigenvalue(self) -> np.ndarray:
        g = self.coeffs
        if self.n == 1:
            return np.real(g[0, 0])
        a, d = np.real(g[0, 0]), np.real(g[1, 1])
        return 0.5 * (a + d) - np.sqrt(0.25 * (a - d) ** 2 + np.abs(g[0, 1]) ** 2)

    def on(self, fiber: FiberGrid) -> "HermitianForm":
        """Rebuild the same recipe on another grid (used by grid ladders)."""
        if self.kind == "custom":
            raise ValueError("custom forms carry no recipe to rebuild")
        return background_form(fiber, self.kind, volume=self.volume, beta=self.beta)


def background_form(fiber: FiberGrid, kind: str = "flat", volume=None, beta: float = 0.5):
    """Background Kähler form on a model fiber.

    Parameters
    ----------
    kind : {"flat", "model_fs"}
        ``flat`` gives a constant multiple of the identity; ``model_fs``
        gives a smooth, positive, non-constant closed form (a product of
        one-variable factors when n = 2).
    volume : float, optional
        Requested class volume V = int chi^n.  Defaults to the chart volume.
    beta : float
        Modulation amplitude for ``model_fs``; must satisfy 0 <= beta < 1.
    """
    if kind not in ("flat", "model_fs"):
        raise ValueError(f"unknown background form kind {kind!r}")
    if not 0.0 <= beta < 1.0:
        raise ValueError("model_fs modulation must lie in [0, 1)")
    n, area = fiber.n, fiber.total_volume
    V = area if volume is None else float(volume)
    if not V > 0:
        raise ValueError("class volume must be positive")
    coeffs = np.zeros((n, n) + fiber.shape, dtype=float if n == 1 else complex)
    scale = (V / area) ** (1.0 / n)
    if kind == "flat":
        for k in range(n):
            coeffs[k, k] = scale
    elif fiber.kind == "torus":
        # each factor has zero lattice mean, so the product integrates exactly
        u0 = (fiber.z[0].imag / fiber.tau.imag)
        s0 = fiber.z[0].real - fiber.tau.real * u0
        if n == 1:
            coeffs[0, 0] = scale * (1 + beta * np.cos(2 * np.pi * s0) * np.cos(2 * np.pi * u0))
        else:
            u1 = fiber.z[1].imag / fiber.tau.imag
            coeffs[0, 0] = scale * (1 + beta * np.cos(2 * np.pi * s0))
            coeffs[1, 1] = scale * (1 + beta * np.cos(2 * np.pi * u1))
    else:
        z = fiber.z[0]
        coeffs[0, 0] = 1.0 + beta * np.abs(z) * np.cos(np.angle(z))
        V = integrate(coeffs[0, 0], fiber.dA)
    form = HermitianForm(fiber, freeze(coeffs), V, kind=kind, beta=beta)
    if not np.all(form.min_eigenvalue() > 0):
        raise ValueError("background form is not positive definite")
    return form


@dataclass(frozen=True)
class PoleSpec:
    """Pole data: centres, exponents a_j in (-1, 1] and the smoothing law.

    The density factor for pole j is (d_j^2 + |t|^2) ** a_j, where d_j is the
    (smooth periodic) distance to ``centers[j]``.
    """

    centers: tuple = ()
    exponents: tuple = ()

    def __post_init__(self):
        centers = tuple(tuple(np.atleast_1d(np.asarray(c, dtype=complex)).tolist())
                        for c in self.centers)
        exponents = tuple(float(a) for a in self.exponents)
        if len(centers) != len(exponents):
            raise ValueError("need one exponent per pole centre")
        for a in exponents:
            if not a > -1.0:
                raise ValueError(
                    f"pole exponent {a} <= -1 is not integrable (non-klt); "
                    "such densities are excluded from solvable models")
            if a > 1.0:
                raise ValueError(f"pole exponent {a} exceeds 1")
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "exponents", exponents)

    def __len__(self):
        return len(self.exponents)

    def factor(self, fiber: FiberGrid, t) -> np.ndarray:
        out = np.ones(fiber.shape)
        t2 = abs(t) ** 2
        for c, a in zip(self.centers, self.exponents):
            out *= (fiber.distance2(c) + t2) ** a
        return out

    def min_distance2(self, fiber: FiberGrid) -> np.ndarray:
        if not self.centers:
            return np.full(fiber.shape, np.inf)
        return np.min([fiber.distance2(c) for c in self.centers], axis=0)


SmoothFactor = Callable[[FiberGrid], np.ndarray]


@dataclass(frozen=True, eq=False)
class VolumeDensity:
    """Reference volume form Omega_t, stored as a density against dA."""

    fiber: FiberGrid
    values: np.ndarray
    poles: PoleSpec
    t: complex
    c_t: float
    form: Optional[HermitianForm] = None
    smooth: Optional[SmoothFactor] = None
    normalize: bool = False

    @property
    def total(self) -> float:
        return integrate(self.values, self.fiber.dA)

    def on(self, fiber: FiberGrid) -> "VolumeDensity":
        """Re-evaluate the recipe on another grid."""
        if self.form is None:
            raise ValueError("density was built from raw values; no recipe to rebuild")
        return volume_density(fiber, self.poles, self.t, normalize=self.normalize,
                              form=self.form.on(fiber), smooth=self.smooth)

    @classmethod
    def from_values(cls, fiber: FiberGrid, values, t=0.0) -> "VolumeDensity":
        values = np.asarray(values, dtype=float)
        if values.shape != fiber.shape:
            raise ValueError(f"density shape {values.shape} != grid shape {fiber.shape}")
        if not np.all(np.isfinite(values)) or not np.all(values > 0):
            raise ValueError("density must be finite and positive at every cell")
        return cls(fiber, freeze(values.copy()), PoleSpec(), t, 1.0)


def volume_density(fiber: FiberGrid, poles: PoleSpec, t=0.0, normalize: bool = True,
                   form: Optional[HermitianForm] = None, smooth: Optional[SmoothFactor] = None):
    """Smoothed pole density  c_t * det(chi) * S * prod_j (d_j^2 + |t|^2)^a_j.

    With ``normalize`` the constant c_t makes the midpoint integral of
    Omega_t equal the class volume V, so phi = 0 is a consistent initial
    guess; otherwise c_t = 1.
    """
    if form is None:
        form = background_form(fiber, "flat")
    if form.fiber is not fiber:
        raise ValueError("form and density must live on the same grid")
    raw = form.density * poles.factor(fiber, t)
    if smooth is not None:
        s = np.asarray(smooth(fiber), dtype=float)
        if s.shape != fiber.shape or not np.all(s > 0):
            raise ValueError("smooth factor must be positive with the grid shape")
        raw = raw * s
    if not np.all(np.isfinite(raw)) or not np.all(raw > 0):
        raise ValueError("density is not finite and positive at every cell centre")
    c_t = form.volume / integrate(raw, fiber.dA) if normalize else 1.0
    return VolumeDensity(fiber, freeze(raw * c_t), poles, t, c_t, form=form,
                         smooth=smooth, normalize=normalize)


@dataclass(frozen=True, eq=False)
class FamilyConfig:
    """Discretised degenerating family: a decreasing t-grid over one model fiber."""

    t_values: tuple
    fiber: FiberGrid
    form: HermitianForm
    poles: PoleSpec = field(default_factory=PoleSpec)
    normalize: bool = True
    smooth: Optional[SmoothFactor] = None

    def __post_init__(self):
        ts = [abs(t) for t in self.t_values]
        if any(b >= a for a, b in zip(ts, ts[1:])):
            raise ValueError("family t-values must be strictly decreasing in |t|")
        if sum(1 for t in ts if t == 0) > 1:
            raise ValueError("at most one t-value may be zero")
        if self.form.fiber is not self.fiber:
            raise ValueError("family form must live on the family grid")

    @property
    def volume(self) -> float:
        return self.form.volume

    def density(self, t) -> VolumeDensity:
        return volume_density(self.fiber, self.poles, t, normalize=self.normalize,
                              form=self.form, smooth=self.smooth)

    def densities(self):
        return [self.density(t) for t in self.t_values]

    def with_fiber(self, fiber: FiberGrid) -> "FamilyConfig":
        return FamilyConfig(self.t_values, fiber, self.form.on(fiber), self.poles,
                            self.normalize, self.smooth)


def geometric_t_grid(t_max: float, ratio: float, M: int, append_zero: bool = False):
    if not t_max > 0:
        raise ValueError("t_max must be positive")
    if not 0 < ratio < 1:
        raise ValueError("t-grid ratio must lie in (0, 1)")
    if M < 2:
        raise ValueError(f"a family needs M >= 2 refinement steps, got {M}")
    ts = [t_max * ratio ** k for k in range(M + 1)]
    if append_zero:
        ts.append(0.0)
    return tuple(ts)


def family(fiber: FiberGrid, form: HermitianForm, poles: PoleSpec = PoleSpec(), *,
           t_max: float = 0.5, ratio: float = 0.5, M: int = 5, append_zero: bool = False,
           t_values: Optional[Sequence[float]] = None, normalize: bool = True,
           smooth: Optional[SmoothFactor] = None) -> FamilyConfig:
    """Family on the geometric grid t_k = t_max * ratio**k, k = 0..M.

    ``t_values`` overrides the geometric grid with a custom strictly
    decreasing sequence.
    """
    if t_values is None:
        ts = geometric_t_grid(t_max, ratio, M, append_zero)
    else:
        ts = tuple(t_values)
        if len(ts) < 2:
            raise ValueError("a custom family needs at least two t-values")
    return FamilyConfig(ts, fiber, form, poles, normalize, smooth)
