"""Closed-form hyperbolic metric on the plumbing annulus {r_in < |x| < 1}.

The complete curvature -1 metric is rho |dx|^2 with

    rho(r) = ( pi / (r |log r_in| sin(pi log r / log r_in)) )^2 ,

which satisfies (1/2) Delta log rho = rho.  Taking chi = dA (flat) and
Omega = exp(r^2 / 2) dA (so that chi = i ddbar log Omega), the potential
phi = log rho - r^2/2 solves chi + i ddbar phi = e^phi Omega exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import FiberGrid, VolumeDensity, background_form
from .solver import DirichletData
from .validation import freeze

__all__ = ["HyperbolicAnnulusOracle", "OracleFields", "hyperbolic_annulus_oracle"]


@dataclass(frozen=True)
class OracleFields:
    form: object
    density: VolumeDensity
    potential: np.ndarray
    dirichlet: DirichletData
    interior: np.ndarray


@dataclass(frozen=True)
class HyperbolicAnnulusOracle:
    r_in: float

    def __post_init__(self):
        if not 0.0 < self.r_in < 1.0:
            raise ValueError(f"annulus inner radius must lie in (0, 1), got {self.r_in}")

    @property
    def log_width(self) -> float:
        return math.log(self.r_in)

    def _sine(self, r):
        # one shared evaluation: near the rings the sine is small and its
        # argument's rounding is amplified, so every formula must reuse it
        return np.sin(np.pi * np.log(r) / self.log_width)

    def conformal_factor(self, r):
        r = np.asarray(r, dtype=float)
        return np.pi / (r * abs(self.log_width) * self._sine(r))

    def metric_density(self, r):
        """rho = lambda^2, the density of the hyperbolic area form."""
        return self.conformal_factor(r) ** 2

    def reference_density(self, r):
        return np.exp(0.5 * np.asarray(r, dtype=float) ** 2)

    def potential(self, r):
        r = np.asarray(r, dtype=float)
        return np.log(self.metric_density(r)) - 0.5 * r ** 2

    def laplacian_log_density(self, r):
        """Delta log rho from the closed-form second s-derivative (s = log r)."""
        r = np.asarray(r, dtype=float)
        k = np.pi / self.log_width
        d2 = 2.0 * k ** 2 / self._sine(r) ** 2
        return d2 / r ** 2

    def defect(self, r):
        """Relative pointwise defect of chi + i ddbar phi - e^phi Omega."""
        r = np.asarray(r, dtype=float)
        lhs = 1.0 + 0.5 * (self.laplacian_log_density(r) - 2.0)
        rhs = np.exp(self.potential(r)) * self.reference_density(r)
        return np.abs(lhs - rhs) / np.abs(rhs)

    def verify(self, n_points=1000, seed=0) -> float:
        """Max relative defect at random radii; must be < 1e-12 before use."""
        rng = np.random.default_rng(seed)
        s = rng.uniform(self.log_width, 0.0, size=n_points)
        s = s[(s > self.log_width) & (s < 0.0)]
        return float(np.max(self.defect(np.exp(s))))

    def on_grid(self, fiber: FiberGrid, guard: float = 0.25) -> OracleFields:
        """Fields on an annulus grid.

        The outer ``guard`` fraction of rings at each end (at least the
        flagged boundary rings) carry Dirichlet data from the closed form;
        the remaining rings are the solver's unknowns.
        """
        if fiber.kind != "annulus" or not math.isclose(fiber.r_in, self.r_in):
            raise ValueError("oracle needs an annulus grid with the same inner radius")
        if not 0.0 <= guard < 0.5:
            raise ValueError("guard fraction must lie in [0, 0.5)")
        r = np.abs(fiber.z[0])
        n_rad = fiber.shape[0]
        k = max(1, int(round(guard * n_rad)))
        fixed = np.zeros(fiber.shape, dtype=bool)
        fixed[:k] = fixed[n_rad - k:] = True
        phi = self.potential(r)
        density = VolumeDensity.from_values(fiber, self.reference_density(r))
        return OracleFields(
            form=background_form(fiber, "flat"),
            density=density,
            potential=freeze(phi),
            dirichlet=DirichletData(freeze(fixed), freeze(np.where(fixed, phi, 0.0))),
            interior=freeze(~fixed),
        )


def hyperbolic_annulus_oracle(r_in: float) -> HyperbolicAnnulusOracle:
    return HyperbolicAnnulusOracle(float(r_in))
