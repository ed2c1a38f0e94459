"""Discrete i ddbar, Monge-Ampère densities and their linearisations.

Conventions: chi = sum g_jk (i/2) dz_j ^ dzbar_k, so (i/2) dz ^ dzbar = dA and
i ddbar phi contributes 2 * phi_{j kbar} to the coefficient matrix.  For n = 1
this is Delta(phi)/2.  Monge-Ampère measures are normalised so that
chi^n has density det(g) against dA.

n = 1 uses the standard second-order stencil (5-point on a rectangular
torus, 9-point for a skew modulus, log-polar on the annulus).  n = 2 uses
compact second differences on the diagonal and, for the off-diagonal entry,
one-sided mixed differences averaged over the four corner orientations.  With
that choice the discrete determinant is an exact null Lagrangian on the
periodic grid, so sum(det(g + ddbar phi)) dA = V holds to rounding.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

CORNERS = ((1, 1), (1, -1), (-1, 1), (-1, -1))


def _periodic_index(shape):
    return np.arange(int(np.prod(shape))).reshape(shape)


def assemble_laplacian(fiber):
    """Sparse matrix of the real Laplacian on an n = 1 grid (all cells)."""
    if fiber.n != 1:
        raise ValueError("sparse Laplacian assembly is for n = 1 grids")
    shape = fiber.shape
    idx = _periodic_index(shape)
    rows, cols, vals = [], [], []

    def add(coef, di, dj, wrap_i=True):
        src = idx
        dst = np.roll(np.roll(idx, -di, axis=0), -dj, axis=1)
        c = np.broadcast_to(coef, shape)
        keep = np.ones(shape, dtype=bool)
        if not wrap_i and di:
            if di > 0:
                keep[-di:] = False
            else:
                keep[:-di] = False
        rows.append(src[keep])
        cols.append(dst[keep])
        vals.append(c[keep])

    if fiber.kind == "torus":
        N = fiber.resolution
        tau = fiber.tau
        # Delta = a d_ss + 2b d_su + c d_uu in lattice coordinates z = s + tau u
        a = 1.0 + (tau.real / tau.imag) ** 2
        b = -tau.real / tau.imag ** 2
        c = 1.0 / tau.imag ** 2
        h2 = N ** 2
        add(-2.0 * (a + c) * h2, 0, 0)
        for d in (1, -1):
            add(a * h2, d, 0)
            add(c * h2, 0, d)
        if b != 0.0:
            q = 2.0 * b * h2 / 4.0
            add(q, 1, 1)
            add(q, -1, -1)
            add(-q, 1, -1)
            add(-q, -1, 1)
    else:
        ds, dth = fiber.spacing
        w = np.exp(-2.0 * fiber.log_radius)[:, None]
        add(-2.0 * w * (1 / ds ** 2 + 1 / dth ** 2), 0, 0)
        for d in (1, -1):
            add(w / ds ** 2, d, 0, wrap_i=False)
            add(w / dth ** 2, 0, d)
    n_cells = idx.size
    L = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n_cells, n_cells),
    )
    L.sum_duplicates()
    return L


def symmetrizer(fiber) -> np.ndarray:
    """Positive weight w with diag(w) @ Laplacian symmetric."""
    if fiber.kind == "annulus":
        return np.broadcast_to(np.exp(2.0 * fiber.log_radius)[:, None], fiber.shape)
    return np.ones(fiber.shape)


# ---------------------------------------------------------------- n = 2 pieces

def _steps(fiber):
    N = fiber.resolution
    return (1.0 / N, fiber.tau.imag / N, 1.0 / N, fiber.tau.imag / N)


def check_n2_supported(fiber):
    if fiber.kind != "torus" or fiber.tau.real != 0.0:
        raise NotImplementedError("n = 2 operators need a rectangular torus (Re tau = 0)")


def _d2(phi, axis, h):
    return (np.roll(phi, -1, axis) + np.roll(phi, 1, axis) - 2.0 * phi) / (h * h)


def _dplus(phi, axis, h):
    return (np.roll(phi, -1, axis) - phi) / h


def partial_laplacians(fiber, phi):
    """Real Laplacians in z1 and in z2 (n = 2)."""
    h = _steps(fiber)
    return _d2(phi, 0, h[0]) + _d2(phi, 1, h[1]), _d2(phi, 2, h[2]) + _d2(phi, 3, h[3])


def corner_offdiagonals(fiber, phi):
    """The four corner-oriented approximations of 2 * phi_{1 2bar}."""
    h = _steps(fiber)
    d = [_dplus(phi, k, h[k]) for k in range(4)]
    E = {(a, b): _dplus(d[a], b, h[b]) for a in (0, 1) for b in (2, 3)}
    out = []
    for s1, s2 in CORNERS:
        def shifted(a, b):
            e = E[(a, b)]
            if s1 < 0:
                e = np.roll(e, 1, a)
            if s2 < 0:
                e = np.roll(e, 1, b)
            return e
        P = shifted(0, 2) + shifted(1, 3)
        Q = shifted(0, 3) - shifted(1, 2)
        out.append(0.5 * (P + 1j * Q))
    return out


# ----------------------------------------------------------- public surface

class MetricPieces:
    """Coefficients of chi + i ddbar phi on the grid.

    For n = 1: ``h`` is the scalar density g + Delta(phi)/2.
    For n = 2: ``h11``, ``h22`` and the corner list ``h12c``.
    """

    def __init__(self, form, phi):
        fiber = form.fiber
        self.form = form
        self.n = fiber.n
        phi = np.asarray(phi, dtype=float)
        if self.n == 1:
            L = fiber.laplacians[0]
            self.ddbar = 0.5 * (L @ phi.ravel()).reshape(fiber.shape)
            self.h = np.real(form.coeffs[0, 0]) + self.ddbar
        else:
            check_n2_supported(fiber)
            if not form.diagonal:
                raise NotImplementedError("n = 2 requires a diagonal background form")
            lap1, lap2 = partial_laplacians(fiber, phi)
            self.g11 = np.real(form.coeffs[0, 0])
            self.g22 = np.real(form.coeffs[1, 1])
            self.h11 = self.g11 + 0.5 * lap1
            self.h22 = self.g22 + 0.5 * lap2
            self.h12c = corner_offdiagonals(fiber, phi)

    def det(self):
        if self.n == 1:
            return self.h
        sq = sum(np.abs(c) ** 2 for c in self.h12c) / 4.0
        return self.h11 * self.h22 - sq

    def mixed(self, m):
        """Density of (chi + i ddbar phi)^m ^ chi^(n-m), normalised."""
        if not 0 <= m <= self.n:
            raise ValueError(f"mixed degree m={m} outside [0, {self.n}]")
        if m == 0:
            return np.array(self.form.density)
        if m == self.n:
            return self.det()
        return 0.5 * (self.h11 * self.g22 + self.h22 * self.g11)

    def min_eigenvalue(self):
        if self.n == 1:
            return self.h
        h12 = sum(self.h12c) / 4.0
        a, d = self.h11, self.h22
        return 0.5 * (a + d) - np.sqrt(0.25 * (a - d) ** 2 + np.abs(h12) ** 2)

    def trace_of(self):
        """tr_g(chi) where g = chi + i ddbar phi (the solved metric)."""
        if self.n == 1:
            return np.real(self.form.coeffs[0, 0]) / self.h
        h12 = sum(self.h12c) / 4.0
        det = self.h11 * self.h22 - np.abs(h12) ** 2
        return (self.g11 * self.h22 + self.g22 * self.h11) / det

    def jacobian_apply(self, fiber, v):
        """Directional derivative of the top-degree density (n = 2)."""
        lap1, lap2 = partial_laplacians(fiber, v)
        out = 0.5 * (self.h22 * lap1 + self.h11 * lap2)
        for hc, dc in zip(self.h12c, corner_offdiagonals(fiber, v)):
            out -= 0.5 * np.real(np.conj(hc) * dc)
        return out


def ma_density(form, phi, m=None):
    pieces = MetricPieces(form, phi)
    return pieces.mixed(form.n if m is None else m)


def gradient(fiber, phi):
    """Central-difference gradient, real components (d/dx_k, d/dy_k) per cell."""
    phi = np.asarray(phi, dtype=float)
    if fiber.kind == "annulus":
        ds, dth = fiber.spacing
        dphi_ds = np.gradient(phi, ds, axis=0)
        dphi_dth = (np.roll(phi, -1, 1) - np.roll(phi, 1, 1)) / (2 * dth)
        inv_r = np.exp(-fiber.log_radius)[:, None]
        th = np.angle(fiber.z[0])
        dr = dphi_ds * inv_r
        dt = dphi_dth * inv_r
        return [dr * np.cos(th) - dt * np.sin(th), dr * np.sin(th) + dt * np.cos(th)]
    N = fiber.resolution
    tau = fiber.tau
    comps = []
    for k in range(fiber.n):
        d_s = (np.roll(phi, -1, 2 * k) - np.roll(phi, 1, 2 * k)) * (N / 2.0)
        d_u = (np.roll(phi, -1, 2 * k + 1) - np.roll(phi, 1, 2 * k + 1)) * (N / 2.0)
        comps.append(d_s)
        comps.append((d_u - tau.real * d_s) / tau.imag)
    return comps


def gradient_norm2(pieces, fiber, phi):
    """|d phi|^2 measured in the metric g = chi + i ddbar phi."""
    comps = gradient(fiber, phi)
    if fiber.n == 1:
        # metric g (dx^2 + dy^2) has inverse 1/g on covectors
        return (comps[0] ** 2 + comps[1] ** 2) / pieces.h
    # complex gradient dphi/dz_k = (phi_x - i phi_y)/2; |dphi|^2 = 4 g^{j kbar} phi_j conj(phi_k)
    p1 = 0.5 * (comps[0] - 1j * comps[1])
    p2 = 0.5 * (comps[2] - 1j * comps[3])
    h12 = sum(pieces.h12c) / 4.0
    det = pieces.h11 * pieces.h22 - np.abs(h12) ** 2
    q = (pieces.h22 * np.abs(p1) ** 2 + pieces.h11 * np.abs(p2) ** 2
         - 2 * np.real(h12 * p2 * np.conj(p1))) / det
    return 4.0 * q
