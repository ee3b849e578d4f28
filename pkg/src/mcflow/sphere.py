"""Real harmonic analysis on the unit circle and the unit 2-sphere.

Fields are stored two ways:

* coefficient vectors in a fully normalized real harmonic basis, ordered by
  degree ``l`` ascending and then by order ascending;
* samples on a quadrature grid (uniform angles for n = 1, Gauss-Legendre
  colatitudes times uniform longitudes for n = 2).

Ordering conventions (they are part of the trajectory/config formats):

n = 1
    index 0 is the constant ``1/sqrt(2 pi)``; for ``l >= 1`` order 0 is
    ``cos(l theta)/sqrt(pi)`` at index ``2l-1`` and order 1 is
    ``sin(l theta)/sqrt(pi)`` at index ``2l``.
n = 2
    index ``l*l + l + m`` for ``-l <= m <= l``; ``m > 0`` carries
    ``sqrt(2) P_l^m(cos theta) cos(m phi)``, ``m < 0`` carries
    ``sqrt(2) P_l^|m|(cos theta) sin(|m| phi)``, with ``P`` the unit-normalized
    associated Legendre functions (``scipy.special.sph_legendre_p_all``).

Points on the sphere are ``omega = (cos t, sin t)`` for n = 1 and
``omega = (sin t cos p, sin t sin p, cos t)`` for n = 2.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import comb, pi

import numpy as np
from scipy.special import sph_legendre_p_all

SPHERE_AREA = {1: 2.0 * pi, 2: 4.0 * pi}


def sphere_area(n: int) -> float:
    return SPHERE_AREA[n]


def harmonic_dimension(n: int, l: int) -> int:
    """Number of independent degree-``l`` harmonics on the n-sphere."""
    if l < 0:
        return 0
    return comb(n + l, n) - (comb(n + l - 2, n) if l >= 2 else 0)


def laplacian_eigenvalue(n: int, l):
    """Eigenvalue ``l(l+n-1)`` of minus the Laplace-Beltrami operator."""
    return l * (l + n - 1)


class BasisTables:
    """Quadrature grid and basis tables for degree <= ``L_max``.

    Parameters
    ----------
    n : int
        Sphere dimension, 1 or 2.
    L_max : int
        Truncation degree.
    oversample : float
        Grid refinement factor. With ``oversample = 1`` the grid is the
        smallest one on which products of two band-limited fields integrate
        exactly; nonlinear terms are evaluated on the default factor 2.
    """

    def __init__(self, n: int, L_max: int, oversample: float = 2.0):
        if n not in (1, 2):
            raise ValueError(f"unsupported dimension n={n}; only 1 and 2 are provided")
        if int(L_max) != L_max or L_max < 2:
            raise ValueError(f"L_max={L_max} cannot represent degree-2 perturbations")
        if oversample < 1:
            raise ValueError("oversample must be >= 1")
        self.n = n
        self.L_max = L_max = int(L_max)
        self.oversample = float(oversample)
        self.area = SPHERE_AREA[n]

        if n == 1:
            self.degrees = np.concatenate([[0], np.repeat(np.arange(1, L_max + 1), 2)])
            self.orders = np.concatenate([[0], np.tile([0, 1], L_max)])
            self._build_circle()
        else:
            ls, ms = [], []
            for l in range(L_max + 1):
                for m in range(-l, l + 1):
                    ls.append(l)
                    ms.append(m)
            self.degrees = np.array(ls)
            self.orders = np.array(ms)
            self._build_sphere()

        self.size = self.degrees.size
        self.eig_laplace = -laplacian_eigenvalue(n, self.degrees).astype(float)
        self.low_mask = self.degrees <= 1
        self.omega.setflags(write=False)
        self.weights.setflags(write=False)

    # ------------------------------------------------------------------ grids
    def _build_circle(self):
        L = self.L_max
        N = int(np.ceil(self.oversample * 4 * L))
        self.shape = (N,)
        self.theta = 2.0 * pi * np.arange(N) / N
        self.weights = np.full(N, 2.0 * pi / N)
        self.omega = np.stack([np.cos(self.theta), np.sin(self.theta)], axis=1)
        self._tables = self._circle_tables(self.theta)

    def _circle_tables(self, theta):
        l = self.degrees[None, :]
        cos = np.cos(l * theta[:, None])
        sin = np.sin(l * theta[:, None])
        is_cos = (self.orders == 0)[None, :]
        norm = np.where(self.degrees == 0, 1.0 / np.sqrt(2 * pi), 1.0 / np.sqrt(pi))
        f = np.where(is_cos, cos, sin) * norm
        d1 = np.where(is_cos, -l * sin, l * cos) * norm
        d2 = -(l**2) * f
        return f, d1, d2

    def _build_sphere(self):
        L = self.L_max
        nlat = int(np.ceil(self.oversample * (L + 1)))
        nlon = int(np.ceil(self.oversample * (2 * L + 2)))
        self.shape = (nlat, nlon)
        x, wx = np.polynomial.legendre.leggauss(nlat)
        # colatitude increasing from north to south
        x, wx = x[::-1], wx[::-1]
        self.colat = np.arccos(x)
        self.lon = 2.0 * pi * np.arange(nlon) / nlon
        th, ph = np.meshgrid(self.colat, self.lon, indexing="ij")
        self.theta = th.ravel()
        self.phi = ph.ravel()
        self.weights = np.outer(wx, np.full(nlon, 2.0 * pi / nlon)).ravel()
        self.omega = np.stack(
            [np.sin(self.theta) * np.cos(self.phi),
             np.sin(self.theta) * np.sin(self.phi),
             np.cos(self.theta)], axis=1)
        self._lat_w = wx
        self._P = self._legendre_tables(self.colat)
        self._T = self._trig_tables(self.lon)
        # column of the trig table used by each coefficient
        self._mcol = self.orders + L
        self._select = np.zeros((self.degrees.size, 2 * L + 1))
        self._select[np.arange(self.degrees.size), self._mcol] = 1.0

    def _legendre_tables(self, colat, diff_n=2):
        """(value, d/dtheta, d2/dtheta2) tables of shape (len(colat), size).

        Only the first ``diff_n + 1`` tables are computed and returned.
        """
        L = self.L_max
        tab = sph_legendre_p_all(L, L, np.asarray(colat, dtype=float), diff_n=diff_n)
        m = np.abs(self.orders)
        return tuple(t[self.degrees, m].T for t in tab)

    def _trig_tables(self, lon):
        L = self.L_max
        m = np.arange(-L, L + 1)[None, :]
        lon = np.asarray(lon, dtype=float)[:, None]
        am = np.abs(m)
        c, s = np.cos(am * lon), np.sin(am * lon)
        r2 = np.sqrt(2.0)
        t = np.where(m > 0, r2 * c, np.where(m < 0, r2 * s, 1.0))
        dt = np.where(m > 0, -r2 * am * s, np.where(m < 0, r2 * am * c, 0.0))
        d2t = -(am**2) * t
        return t, dt, d2t

    # ------------------------------------------------------------ transforms
    def _synth_sphere(self, c, P, T):
        return ((P * c) @ self._select) @ T.T

    def synthesize(self, coeffs):
        """Grid samples (flat, row-major in (colatitude, longitude))."""
        c = self._check_coeffs(coeffs)
        if self.n == 1:
            return self._tables[0] @ c
        return self._synth_sphere(c, self._P[0], self._T[0]).ravel()

    def analyze(self, values):
        """L2-orthogonal projection of grid samples onto degrees <= L_max."""
        v = np.asarray(values, dtype=float)
        if v.shape != (self.theta.size,):
            raise ValueError(f"grid field has shape {v.shape}, expected ({self.theta.size},)")
        if self.n == 1:
            return self._tables[0].T @ (self.weights * v)
        nlat, nlon = self.shape
        lat = (v.reshape(nlat, nlon) @ self._T[0]) * (2.0 * pi / nlon)
        return np.einsum("ik,ik->k", self._lat_w[:, None] * self._P[0], lat[:, self._mcol])

    def derivatives(self, coeffs):
        """Coordinate derivatives of a field on the grid.

        Returns ``(f, f_t, f_tt)`` for n = 1 and
        ``(f, f_t, f_p, f_tt, f_tp, f_pp)`` for n = 2 (t = colatitude,
        p = longitude).
        """
        c = self._check_coeffs(coeffs)
        if self.n == 1:
            f, d1, d2 = self._tables
            return f @ c, d1 @ c, d2 @ c
        (P, dP, d2P), (T, dT, d2T) = self._P, self._T
        out = [self._synth_sphere(c, A, B).ravel() for A, B in
               ((P, T), (dP, T), (P, dT), (d2P, T), (dP, dT), (P, d2T))]
        return tuple(out)

    def frame_derivatives(self, coeffs):
        """Value, gradient and Hessian in an orthonormal tangent frame.

        Returns ``(f, grad, hess)`` with ``grad`` of shape (N, n) and ``hess``
        of shape (N, n, n); the frame is ``d/dtheta`` (n = 1) or
        ``(e_theta, e_phi)`` (n = 2), so the round-metric Christoffel terms
        are already folded in.
        """
        if self.n == 1:
            f, ft, ftt = self.derivatives(coeffs)
            return f, ft[:, None], ftt[:, None, None]
        f, ft, fp, ftt, ftp, fpp = self.derivatives(coeffs)
        s, c = np.sin(self.theta), np.cos(self.theta)
        grad = np.stack([ft, fp / s], axis=1)
        h12 = (ftp - c / s * fp) / s
        h22 = (fpp + s * c * ft) / s**2
        hess = np.stack([np.stack([ftt, h12], 1), np.stack([h12, h22], 1)], 1)
        return f, grad, hess

    def tangent_frame(self):
        """Unit tangent vectors in R^{n+1} at the nodes, shape (N, n, n+1)."""
        if self.n == 1:
            return np.stack([-np.sin(self.theta), np.cos(self.theta)], axis=1)[:, None, :]
        th, ph = self.theta, self.phi
        e_t = np.stack([np.cos(th) * np.cos(ph), np.cos(th) * np.sin(ph), -np.sin(th)], 1)
        e_p = np.stack([-np.sin(ph), np.cos(ph), np.zeros_like(ph)], 1)
        return np.stack([e_t, e_p], axis=1)

    # ---------------------------------------------------- pointwise evaluation
    def evaluate(self, coeffs, points, chunk=4096):
        """Evaluate a field at arbitrary unit vectors ``points`` (shape (M, n+1))."""
        c = self._check_coeffs(coeffs)
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.empty(pts.shape[0])
        for s in range(0, pts.shape[0], chunk):
            p = pts[s:s + chunk]
            if self.n == 1:
                out[s:s + chunk] = self._circle_tables(np.arctan2(p[:, 1], p[:, 0]))[0] @ c
            else:
                th = np.arccos(np.clip(p[:, 2], -1.0, 1.0))
                ph = np.arctan2(p[:, 1], p[:, 0])
                P = self._legendre_tables(th, diff_n=0)[0]
                T = self._trig_tables(ph)[0][:, self._mcol]
                out[s:s + chunk] = (P * T) @ c
        return out

    def evaluate_angles(self, coeffs, theta, phi=None):
        """Evaluate on a tensor grid of angles (theta only for n = 1)."""
        c = self._check_coeffs(coeffs)
        if self.n == 1:
            return self._circle_tables(np.asarray(theta, dtype=float))[0] @ c
        P = self._legendre_tables(theta, diff_n=0)[0]
        T = self._trig_tables(phi)[0]
        return self._synth_sphere(c, P, T)

    # ---------------------------------------------------------------- helpers
    def index(self, l: int, order: int) -> int:
        if not 0 <= l <= self.L_max:
            raise ValueError(f"degree {l} outside 0..{self.L_max}")
        if self.n == 1:
            if l == 0:
                if order != 0:
                    raise ValueError("degree 0 has only order 0")
                return 0
            if order not in (0, 1):
                raise ValueError("n=1 orders are 0 (cos) and 1 (sin)")
            return 2 * l - 1 + order
        if abs(order) > l:
            raise ValueError(f"order {order} outside -{l}..{l}")
        return l * l + l + order

    def degree_slice(self, l: int) -> np.ndarray:
        return np.flatnonzero(self.degrees == l)

    def linear_mode_coeffs(self) -> np.ndarray:
        """Coefficients of the coordinate functions omega^j, shape (n+1, size)."""
        return np.stack([self.analyze(self.omega[:, j]) for j in range(self.n + 1)])

    def integrate(self, values):
        return float(self.weights @ np.asarray(values, dtype=float))

    def lp_norm(self, values, p: float) -> float:
        v = np.abs(np.asarray(values, dtype=float))
        return float(self.weights @ v**p) ** (1.0 / p)

    def _check_coeffs(self, coeffs):
        c = np.asarray(coeffs, dtype=float)
        if c.shape != (self.size,):
            raise ValueError(f"coefficient vector has shape {c.shape}, expected ({self.size},)")
        return c

    def __repr__(self):
        return f"BasisTables(n={self.n}, L_max={self.L_max}, grid={self.shape})"


def build_basis(n: int, L_max: int, oversample: float = 2.0) -> BasisTables:
    return BasisTables(n, L_max, oversample)


def basis_dimension(n: int, L_max: int) -> int:
    return sum(harmonic_dimension(n, l) if n == 2 else (1 if l == 0 else 2)
               for l in range(L_max + 1))


# ----------------------------------------------------------------------------
# Field containers and the functional interface over them.


@dataclass
class HarmonicField:
    """Coefficients of a scalar field in the real harmonic basis."""

    n: int
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)


@dataclass
class GridField:
    """Samples of a field (scalar or vector valued) at the quadrature nodes."""

    n: int
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid field contains non-finite values")


def _coeffs_of(f: HarmonicField, B: BasisTables) -> np.ndarray:
    if f.n != B.n or f.coeffs.shape != (B.size,):
        raise ValueError(f"field (n={f.n}, len={f.coeffs.size}) does not match {B!r}")
    return f.coeffs


def analyze(g: GridField, B: BasisTables) -> HarmonicField:
    if g.n != B.n:
        raise ValueError("dimension mismatch between grid field and basis")
    return HarmonicField(B.n, B.analyze(g.values))


def synthesize(f: HarmonicField, B: BasisTables) -> GridField:
    return GridField(B.n, B.synthesize(_coeffs_of(f, B)))


def laplace_beltrami(f: HarmonicField, B: BasisTables) -> HarmonicField:
    return HarmonicField(B.n, B.eig_laplace * _coeffs_of(f, B))


def gradient_squared(f: HarmonicField, B: BasisTables) -> GridField:
    _, grad, _ = B.frame_derivatives(_coeffs_of(f, B))
    return GridField(B.n, np.sum(grad**2, axis=1))


def hessian_form(f: HarmonicField, B: BasisTables) -> GridField:
    """Pointwise ``grad f . Hess(f) grad f`` for the round metric."""
    _, grad, hess = B.frame_derivatives(_coeffs_of(f, B))
    return GridField(B.n, np.einsum("ni,nij,nj->n", grad, hess, grad))


def ambient_gradient(f: HarmonicField, B: BasisTables) -> GridField:
    """Surface gradient of ``f`` embedded in R^{n+1}; values have shape (N, n+1)."""
    _, grad, _ = B.frame_derivatives(_coeffs_of(f, B))
    return GridField(B.n, np.einsum("ni,nij->nj", grad, B.tangent_frame()))


def inner_product(f: HarmonicField, g: HarmonicField) -> float:
    if f.n != g.n or f.coeffs.shape != g.coeffs.shape:
        raise ValueError("fields have mismatched dimensions")
    return float(f.coeffs @ g.coeffs)


def sobolev_weights(B: BasisTables, s: float) -> np.ndarray:
    if s < 0:
        raise ValueError("Sobolev index must be non-negative")
    return (1.0 + laplacian_eigenvalue(B.n, B.degrees)) ** s


def sobolev_norm(f: HarmonicField, s: float, B: BasisTables) -> float:
    c = _coeffs_of(f, B)
    return float(np.sqrt(sobolev_weights(B, s) @ c**2))
