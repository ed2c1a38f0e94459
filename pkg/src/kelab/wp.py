"""Family-level quantities: the Weil-Petersson potential, the log integral,
continuity scans along the t-grid and uniform fiber diagnostics."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .barrier import SectionField
from .geometry import HermitianForm, integrate
from .operators import MetricPieces, gradient_norm2
from .pluripotential import ma_measure
from .solver import PotentialField
from .validation import check_region

__all__ = [
    "Diagnostics",
    "WPRecord",
    "wp_potential",
    "log_integral",
    "ContinuityReport",
    "continuity_scan",
    "fiber_diagnostics",
]


@dataclass(frozen=True)
class Diagnostics:
    """Uniform bounds on a region away from the poles."""

    sup_phi: float
    sup_trace: float
    sup_grad: float

    def as_tuple(self):
        return (self.sup_phi, self.sup_trace, self.sup_grad)


@dataclass(frozen=True)
class WPRecord:
    """Per-fiber energy integrals.

    ``A[j]`` is  int phi (chi + i ddbar phi)^j ^ chi^(n-j)  and
    ``psi_wp = sum_j A[j] / ((n + 1) V)``.
    """

    t: complex
    A: tuple
    psi_wp: float
    volume: float
    I: Optional[float] = None
    diagnostics: Optional[Diagnostics] = None

    @property
    def n(self):
        return len(self.A) - 1


def wp_potential(phi: PotentialField, form: HermitianForm, V: Optional[float] = None,
                 I: Optional[float] = None, diagnostics: Optional[Diagnostics] = None) -> WPRecord:
    """Weil-Petersson potential of a solved fiber.

    ``V`` defaults to the class volume of ``form``.
    """
    V = form.volume if V is None else float(V)
    n = form.fiber.n
    A = []
    for j in range(n + 1):
        mu = ma_measure(phi, form, j)
        A.append(integrate(phi.values * mu.values, form.fiber.dA))
    psi = math.fsum(A) / ((n + 1) * V)
    return WPRecord(phi.t, tuple(A), psi, V, I, diagnostics)


def log_integral(sigma: SectionField, form: HermitianForm) -> float:
    """I = int (-log|sigma|^2) chi^n by the midpoint rule.

    At t = 0 the cells next to the centre are included; their midpoint
    values are finite because centres never sit on cell centres.
    """
    if sigma.fiber.shape != form.fiber.shape:
        raise ValueError("section and form live on different grids")
    return integrate(sigma.neg_log * form.density, form.fiber.dA)


@dataclass(frozen=True)
class ContinuityReport:
    """Adjacent differences of values along a decreasing t-grid.

    The Cauchy tail is the largest delta from index ``k0`` on; the verdict
    is "consistent-with-continuity" iff it is below ``tol`` times the value
    scale (max |v|, or 1 if all values vanish).
    """

    t_values: tuple
    values: tuple
    deltas: tuple
    k0: int
    tail: float
    scale: float
    tol: float
    witness: int

    @property
    def threshold(self):
        return self.tol * self.scale

    @property
    def passed(self) -> bool:
        return self.tail < self.threshold

    @property
    def verdict(self) -> str:
        return "consistent-with-continuity" if self.passed else "discontinuity-suspected"

    @property
    def eventually_decreasing(self) -> bool:
        d = self.deltas[self.k0:]
        return all(b <= a for a, b in zip(d, d[1:]))


def continuity_scan(t_values: Sequence, values: Sequence[float], tol: float = 1e-3,
                    tail: int = 3, relative: bool = True) -> ContinuityReport:
    """Cauchy-tail test of continuity as t -> 0 along the grid.

    Parameters
    ----------
    t_values, values
        At least four points, |t| strictly decreasing.
    tol : float
        Tolerance, relative to the value scale when ``relative``.
    tail : int
        Number of trailing adjacent deltas forming the tail.
    """
    ts = tuple(t_values)
    vs = tuple(float(v) for v in values)
    if len(ts) != len(vs):
        raise ValueError("need one value per t")
    if len(vs) < 4:
        raise ValueError("a continuity scan needs at least four t-points")
    if any(abs(b) >= abs(a) for a, b in zip(ts, ts[1:])):
        raise ValueError("t-values must decrease strictly in |t|")
    if not all(math.isfinite(v) for v in vs):
        raise ValueError("continuity scan values must be finite")
    deltas = tuple(abs(b - a) for a, b in zip(vs, vs[1:]))
    k0 = max(0, len(deltas) - int(tail))
    tail_d = deltas[k0:]
    witness = k0 + int(np.argmax(tail_d))
    scale = max(abs(v) for v in vs) if relative else 1.0
    if scale == 0.0:
        scale = 1.0
    return ContinuityReport(ts, vs, deltas, k0, max(tail_d), scale, tol, witness)


def fiber_diagnostics(phi: PotentialField, form: HermitianForm, region) -> Diagnostics:
    """sup|phi|, sup tr_g(chi) and sup |grad phi|_g over ``region``.

    g = chi + i ddbar phi is the solved metric; the gradient uses central
    differences.  The region may not contain masked (pole) cells.
    """
    fiber = form.fiber
    sel = check_region(region, fiber)
    if not np.any(sel):
        raise ValueError("diagnostics region is empty")
    if np.any(sel & ~phi.mask):
        raise ValueError("diagnostics region intersects masked cells near a pole")
    pieces = MetricPieces(form, phi.values)
    trace = pieces.trace_of()
    grad = np.sqrt(np.maximum(gradient_norm2(pieces, fiber, phi.values), 0.0))
    return Diagnostics(float(np.max(np.abs(phi.values[sel]))), float(np.max(trace[sel])),
                       float(np.max(grad[sel])))
