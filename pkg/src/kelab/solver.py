"""Damped Newton solver for (chi + i ddbar phi)^n = e^phi Omega on model fibers."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import scipy.fft
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from sklearn.base import BaseEstimator

from .geometry import FamilyConfig, FiberGrid, HermitianForm, VolumeDensity, integrate
from .operators import MetricPieces, check_n2_supported, symmetrizer
from .validation import check_field, freeze

log = logging.getLogger(__name__)

__all__ = [
    "SolverError",
    "NonConvergence",
    "PositivityLoss",
    "BoundaryDataMissing",
    "SolverOptions",
    "DirichletData",
    "PotentialField",
    "ResidualReport",
    "FiberResult",
    "residual",
    "solve_ke",
    "continuation_solve",
    "pole_mask",
    "KahlerEinsteinSolver",
]


class SolverError(RuntimeError):
    """Base class for solver failures; ``t`` is attached by family solves."""

    t = None


class NonConvergence(SolverError):
    def __init__(self, msg, residual=float("nan"), n_iter=0):
        super().__init__(msg)
        self.residual = residual
        self.n_iter = n_iter


class PositivityLoss(SolverError):
    def __init__(self, msg, residual=float("nan"), n_iter=0):
        super().__init__(msg)
        self.residual = residual
        self.n_iter = n_iter


class BoundaryDataMissing(SolverError, ValueError):
    pass


@dataclass(frozen=True)
class SolverOptions:
    """Newton and linear-solver settings.

    ``ladder`` lists coarse grid resolutions solved first (torus charts only),
    each solution interpolated up as the next initial guess.
    ``preconditioner`` selects the CG preconditioner for n = 1 solves:
    ``"jacobi"`` (diagonal), ``"amg"`` (smoothed aggregation) or ``"direct"``
    (sparse LU, no CG).
    """

    tol: float = 1e-9
    max_iter: int = 60
    armijo: float = 1e-4
    linear_tol: float = 1e-10
    ladder: tuple = ()
    boundary: str = "periodic"
    preconditioner: str = "amg"
    min_step: float = 2.0 ** -30

    def __post_init__(self):
        if not (self.tol > 0 and self.linear_tol > 0 and self.armijo > 0):
            raise ValueError("solver tolerances must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.boundary not in ("periodic", "dirichlet"):
            raise ValueError(f"unknown boundary condition {self.boundary!r}")
        if self.preconditioner not in ("jacobi", "amg", "direct"):
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")
        object.__setattr__(self, "ladder", tuple(int(n) for n in self.ladder))


@dataclass(frozen=True, eq=False)
class DirichletData:
    """Fixed values on the cells where ``mask`` is True."""

    mask: np.ndarray
    values: np.ndarray


@dataclass(frozen=True, eq=False)
class PotentialField:
    """Grid potential phi with its validity mask and solve diagnostics."""

    fiber: FiberGrid
    values: np.ndarray
    mask: np.ndarray
    residual: float = float("nan")
    n_iter: int = 0
    t: complex = 0.0
    history: tuple = ()

    @classmethod
    def from_values(cls, fiber, values, mask=None, t=0.0):
        values = check_field(values, fiber, "potential")
        if mask is None:
            mask = np.ones(fiber.shape, dtype=bool)
        return cls(fiber, freeze(values.copy()), freeze(np.asarray(mask, dtype=bool)), t=t)

    @property
    def n(self):
        return self.fiber.n

    def shifted(self, c: float) -> "PotentialField":
        return replace(self, values=freeze(self.values + c))


@dataclass(frozen=True)
class ResidualReport:
    field: np.ndarray
    sup: float
    l1: float


@dataclass
class FiberResult:
    """Outcome of one fiber in a family solve: a potential or an error."""

    t: complex
    potential: Optional[PotentialField] = None
    error: Optional[SolverError] = None
    n_iter: int = 0

    @property
    def ok(self):
        return self.potential is not None


def pole_mask(density: VolumeDensity, radius: Optional[float] = None) -> np.ndarray:
    """Valid-cell mask: False within one cell of a pole when t = 0."""
    fiber = density.fiber
    mask = np.ones(fiber.shape, dtype=bool)
    if abs(density.t) == 0 and len(density.poles):
        r = fiber.cell_size if radius is None else radius
        mask &= density.poles.min_distance2(fiber) >= r * r
    return mask


def residual(phi, form: HermitianForm, density: VolumeDensity, free=None) -> ResidualReport:
    """Per-cell defect (chi + i ddbar phi)^n - e^phi Omega against dA."""
    fiber = form.fiber
    values = check_field(phi, fiber, "potential")
    F = MetricPieces(form, values).det() - np.exp(values) * density.values
    sel = np.ones(fiber.shape, dtype=bool) if free is None else free
    Fs = np.where(sel, F, 0.0)
    return ResidualReport(F, float(np.max(np.abs(Fs))), integrate(np.abs(Fs), fiber.dA))


# ------------------------------------------------------------------ linear algebra

def _cg_solve(A, b, options):
    if options.preconditioner == "direct":
        return spla.spsolve(A.tocsc(), b)
    if options.preconditioner == "amg":
        import pyamg

        # Gershgorin ("local") Jacobi weights: the default spectral-radius
        # estimate starts from an unseeded random vector, which would make
        # repeated solves differ in the last bits.
        ml = pyamg.smoothed_aggregation_solver(
            A.tocsr(), smooth=("jacobi", {"omega": 4.0 / 3.0, "weighting": "local"}))
        M = ml.aspreconditioner(cycle="V")
    else:
        M = sp.diags(1.0 / A.diagonal())
    x, info = spla.cg(A, b, rtol=options.linear_tol, atol=0.0, M=M, maxiter=20 * A.shape[0])
    if info != 0:
        log.warning("PCG did not reach rtol=%g (info=%d); using sparse LU", options.linear_tol, info)
        x = spla.spsolve(A.tocsc(), b)
    return x


def _newton_step_n1(fiber, pieces, phi, F, density, free, options):
    L = fiber.laplacians[0]
    w = symmetrizer(fiber).ravel()
    idx = np.flatnonzero(free.ravel())
    react = (np.exp(phi) * density.values).ravel()
    # -W J = -(1/2) W L + diag(W e^phi Omega) is SPD on the free cells
    A = (-0.5 * sp.diags(w) @ L).tocsr()[idx][:, idx] + sp.diags(w[idx] * react[idx])
    b = w[idx] * F.ravel()[idx]
    step = np.zeros(fiber.shape)
    step.ravel()[idx] = _cg_solve(A.tocsr(), b, options)
    return step


def _merit(F, weights):
    """L2 norm of the defect; pairwise summation suffices for a line search."""
    return float(np.sqrt(np.sum(F * F * weights)))


def _fft_symbol(fiber):
    N = fiber.resolution
    tau = fiber.tau
    k = np.arange(N)
    lam_s = -4.0 * N ** 2 * np.sin(np.pi * k / N) ** 2
    lam_u = lam_s / tau.imag ** 2
    # last axis in half-spectrum layout for the real transform
    grids = np.meshgrid(lam_s, lam_u, lam_s, lam_u[: N // 2 + 1], indexing="ij", sparse=True)
    return grids[0] + grids[1], grids[2] + grids[3]


def _newton_step_n2(fiber, pieces, phi, F, density, options):
    react = np.exp(phi) * density.values
    shape = fiber.shape
    size = int(np.prod(shape))

    def matvec(v):
        v = v.reshape(shape)
        return (pieces.jacobian_apply(fiber, v) - react * v).ravel()

    lam1, lam2 = _fft_symbol(fiber)
    symbol = 0.5 * np.mean(pieces.h22) * lam1 + 0.5 * np.mean(pieces.h11) * lam2 - np.mean(react)

    def precond(r):
        return scipy.fft.irfftn(scipy.fft.rfftn(r.reshape(shape)) / symbol, s=shape).ravel()

    A = spla.LinearOperator((size, size), matvec=matvec, dtype=float)
    M = spla.LinearOperator((size, size), matvec=precond, dtype=float)
    x, info = spla.gmres(A, -F.ravel(), rtol=options.linear_tol, atol=0.0, M=M,
                         restart=60, maxiter=50)
    if info != 0:
        log.warning("GMRES stopped before rtol=%g (info=%d)", options.linear_tol, info)
    return x.reshape(shape)


# ------------------------------------------------------------------ Newton driver

def _prepare_boundary(fiber, options, dirichlet):
    if fiber.kind == "annulus" or options.boundary == "dirichlet":
        if dirichlet is None:
            raise BoundaryDataMissing("annulus / dirichlet solves need boundary ring data")
        mask = np.asarray(dirichlet.mask, dtype=bool)
        if mask.shape != fiber.shape:
            raise BoundaryDataMissing("Dirichlet mask does not match the grid")
        if fiber.boundary is not None and not np.all(mask[fiber.boundary]):
            raise BoundaryDataMissing("Dirichlet data must cover the boundary rings")
        vals = check_field(dirichlet.values, fiber, "Dirichlet values", allow_nonfinite=True)
        if not np.all(np.isfinite(vals[mask])):
            raise BoundaryDataMissing("Dirichlet values must be finite on the mask")
        return mask, vals
    return np.zeros(fiber.shape, dtype=bool), None


def _interpolate_up(phi_coarse, shape):
    from scipy.ndimage import zoom

    factors = [s / c for s, c in zip(shape, phi_coarse.shape)]
    out = zoom(phi_coarse, factors, order=3, mode="grid-wrap", grid_mode=True)
    if out.shape != tuple(shape):
        raise ValueError("ladder levels must divide the target resolution")
    return out


def solve_ke(fiber: FiberGrid, form: HermitianForm, density: VolumeDensity,
             options: Optional[SolverOptions] = None, *, initial=None,
             dirichlet: Optional[DirichletData] = None) -> PotentialField:
    """Solve (chi + i ddbar phi)^n = e^phi Omega by damped Newton iteration.

    Parameters
    ----------
    fiber, form, density
        Grid, background form chi and reference density Omega on one grid.
    options : SolverOptions, optional
    initial : array_like, optional
        Initial guess (default phi = 0).
    dirichlet : DirichletData, optional
        Required on the annulus; must cover the flagged boundary rings.

    Returns
    -------
    PotentialField
        With ``residual`` the achieved sup-norm defect on the free cells.

    Raises
    ------
    NonConvergence, PositivityLoss, BoundaryDataMissing
    """
    options = options or SolverOptions()
    if form.fiber is not fiber or density.fiber is not fiber:
        raise ValueError("fiber, form and density must share one grid")
    if fiber.n == 2:
        check_n2_supported(fiber)
    fixed, fixed_vals = _prepare_boundary(fiber, options, dirichlet)
    free = ~fixed
    valid = pole_mask(density)

    if initial is None and options.ladder and fiber.periodic:
        initial = _ladder_guess(fiber, form, density, options)
    phi = np.zeros(fiber.shape) if initial is None else check_field(initial, fiber, "initial").copy()
    if fixed_vals is not None:
        phi[fixed] = fixed_vals[fixed]

    positive_cells = free & valid

    def evaluate(p):
        pieces = MetricPieces(form, p)
        F = pieces.det() - np.exp(p) * density.values
        F[fixed] = 0.0
        return pieces, F

    pieces, F = evaluate(phi)
    history = []
    weights = fiber.dA
    for it in range(options.max_iter + 1):
        sup = float(np.max(np.abs(F)))
        history.append(sup)
        if sup < options.tol:
            break
        if it == options.max_iter:
            raise NonConvergence(
                f"Newton budget of {options.max_iter} iterations exhausted; "
                f"last residual {sup:.3e}", residual=sup, n_iter=it)
        if fiber.n == 1:
            step = _newton_step_n1(fiber, pieces, phi, F, density, free, options)
        else:
            step = _newton_step_n2(fiber, pieces, phi, F, density, options)
        step[fixed] = 0.0
        merit = _merit(F, weights)
        alpha, lost_positivity = 1.0, False
        while True:
            trial = phi + alpha * step
            t_pieces, t_F = evaluate(trial)
            positive = bool(np.all(t_pieces.min_eigenvalue()[positive_cells] > 0))
            if fiber.n == 2:
                positive = positive and bool(np.all(t_pieces.det()[positive_cells] > 0))
            t_merit = _merit(t_F, weights)
            if positive and (t_merit <= (1.0 - options.armijo * alpha) * merit
                             or float(np.max(np.abs(t_F))) < options.tol):
                break
            lost_positivity = not positive
            alpha *= 0.5
            if alpha < options.min_step:
                exc = PositivityLoss if lost_positivity else NonConvergence
                raise exc(
                    "damped Newton step cannot "
                    + ("restore positivity" if lost_positivity else "decrease the residual")
                    + f" (residual {sup:.3e})", residual=sup, n_iter=it)
        phi, pieces, F = trial, t_pieces, t_F

    final = float(np.max(np.abs(F)))
    return PotentialField(fiber, freeze(phi), freeze(valid), residual=final,
                          n_iter=len(history) - 1, t=density.t, history=tuple(history))


def _ladder_guess(fiber, form, density, options):
    from .geometry import build_torus_fiber

    levels = sorted(n for n in options.ladder if n < fiber.resolution)
    if not levels:
        return None
    try:
        guess = None
        for N in levels:
            coarse = build_torus_fiber(fiber.n, fiber.tau, N)
            c_form, c_density = form.on(coarse), density.on(coarse)
            sub = replace(options, ladder=())
            if guess is not None:
                guess = _interpolate_up(guess, coarse.shape)
            guess = solve_ke(coarse, c_form, c_density, sub, initial=guess).values
        return _interpolate_up(guess, fiber.shape)
    except ValueError:
        log.info("density or form has no recipe; skipping the grid ladder")
        return None


def continuation_solve(family: FamilyConfig, options: Optional[SolverOptions] = None,
                       warm_start: bool = True, densities=None):
    """Solve every fiber of ``family`` in t order, warm-starting along t.

    Failures are recorded per fiber (with ``t`` attached) and the sweep
    continues; a failed fiber does not seed the next one.
    """
    options = options or SolverOptions()
    results = []
    guess = None
    densities = densities or family.densities()
    for t, density in zip(family.t_values, densities):
        try:
            pot = solve_ke(family.fiber, family.form, density, options,
                           initial=guess if warm_start else None)
        except SolverError as exc:
            exc.t = t
            log.warning("fiber t=%s failed: %s", t, exc)
            results.append(FiberResult(t, None, exc, getattr(exc, "n_iter", 0)))
            guess = None
            continue
        results.append(FiberResult(t, pot, None, pot.n_iter))
        guess = pot.values
    return results


class KahlerEinsteinSolver(BaseEstimator):
    """Estimator wrapper around :func:`solve_ke`.

    ``fit(density)`` solves on ``density.fiber`` against ``form`` (default:
    the form the density was built from) and stores ``potential_``,
    ``n_iter_`` and ``residual_``.
    """

    def __init__(self, tol=1e-9, max_iter=60, armijo=1e-4, linear_tol=1e-10,
                 ladder=(), preconditioner="amg"):
        self.tol = tol
        self.max_iter = max_iter
        self.armijo = armijo
        self.linear_tol = linear_tol
        self.ladder = ladder
        self.preconditioner = preconditioner

    def _options(self, boundary="periodic"):
        return SolverOptions(tol=self.tol, max_iter=self.max_iter, armijo=self.armijo,
                             linear_tol=self.linear_tol, ladder=tuple(self.ladder),
                             boundary=boundary, preconditioner=self.preconditioner)

    def fit(self, X: VolumeDensity, y=None, form=None, initial=None, dirichlet=None):
        if not isinstance(X, VolumeDensity):
            raise TypeError("fit expects a VolumeDensity")
        form = form if form is not None else X.form
        if form is None:
            raise ValueError("no background form given and the density carries none")
        boundary = "dirichlet" if dirichlet is not None else "periodic"
        self.potential_ = solve_ke(X.fiber, form, X, self._options(boundary),
                                   initial=initial, dirichlet=dirichlet)
        self.form_ = form
        self.n_iter_ = self.potential_.n_iter
        self.residual_ = self.potential_.residual
        return self

    def transform(self, X: VolumeDensity):
        """Solve for ``X`` warm-started from the fitted potential; return phi."""
        initial = getattr(self, "potential_", None)
        initial = None if initial is None or initial.fiber.shape != X.fiber.shape else initial.values
        form = X.form if X.form is not None else self.form_
        return solve_ke(X.fiber, form, X, self._options(), initial=initial).values

    def score(self, X: VolumeDensity, y=None):
        """Negative sup-norm defect of the fitted potential against ``X``."""
        return -residual(self.potential_.values, self.form_, X).sup
