"""Curvature of star-shaped graphs ``rho(omega) omega`` and the operators of the
rescaled flow linearized around the round sphere of radius ``sqrt(n/a)``.

All functions take coefficient vectors (see :mod:`mcflow.sphere`) and return
coefficient vectors unless the name says ``grid``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .sphere import BasisTables, laplacian_eigenvalue

log = logging.getLogger(__name__)


class StarShapedError(ValueError):
    """The radius function is not strictly positive."""


class SmallnessError(ValueError):
    """A perturbation left the regime ``|xi| <= rho_a / 2``."""


class LowModeError(ValueError):
    """A field that must avoid degrees 0 and 1 has content there."""


@dataclass(frozen=True)
class OperatorContext:
    """Scale parameter ``a`` and Lyapunov index ``k`` on a fixed basis."""

    basis: BasisTables
    a: float
    k: int

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError(f"scale parameter must be positive, got a={self.a}")
        if int(self.k) != self.k or self.k < 2 or not self.k > self.basis.n / 2 + 1:
            raise ValueError(f"Lyapunov index k={self.k} must be an integer > n/2 + 1")

    @property
    def n(self) -> int:
        return self.basis.n

    @property
    def rho_a(self) -> float:
        return float(np.sqrt(self.n / self.a))

    def with_scale(self, a: float) -> "OperatorContext":
        return OperatorContext(self.basis, a, self.k)


def default_k(n: int) -> int:
    """Smallest integer above n/2 + 1."""
    return int(np.floor(n / 2 + 1)) + 1


# ----------------------------------------------------------------------------
# geometry of the graph


def _graph_terms(B: BasisTables, rho):
    rho_g, grad, hess = B.frame_derivatives(rho)
    if rho_g.min() <= 0:
        raise StarShapedError(f"radius function reaches {rho_g.min():.3g} <= 0")
    q = np.sum(grad**2, axis=1)
    hform = np.einsum("ni,nij,nj->n", grad, hess, grad)
    lap = B.synthesize(B.eig_laplace * rho)
    return rho_g, q, hform, lap


def graph_speed_grid(rho, B: BasisTables):
    """Radial speed of mean curvature flow for the graph of ``rho``, on the grid.

    ``d rho/dt = Lap rho/rho^2 - n/rho - (grad rho . Hess rho grad rho)/(rho^2 (rho^2+|grad rho|^2))
    - |grad rho|^2/(rho (rho^2+|grad rho|^2))``.
    """
    r, q, hform, lap = _graph_terms(B, rho)
    s = r**2 + q
    return lap / r**2 - B.n / r - hform / (r**2 * s) - q / (r * s)


def graph_speed(rho, B: BasisTables):
    """Projection of :func:`graph_speed_grid` onto degrees <= L_max."""
    return B.analyze(graph_speed_grid(rho, B))


def mean_curvature(rho, B: BasisTables):
    """Mean curvature (sum of principal curvatures, positive on spheres) on the grid."""
    r, q, hform, lap = _graph_terms(B, rho)
    s = r**2 + q
    speed = lap / r**2 - B.n / r - hform / (r**2 * s) - q / (r * s)
    return -r * speed / np.sqrt(s)


# ----------------------------------------------------------------------------
# spectral operators around rho_a


def la_multipliers(ctx: OperatorContext) -> np.ndarray:
    """Per-coefficient eigenvalues ``(a/n)(l(l+n-1) - 2n)`` of the linearized operator."""
    n = ctx.n
    return ctx.a / n * (laplacian_eigenvalue(n, ctx.basis.degrees) - 2 * n)


def linearized_operator(ctx: OperatorContext, xi):
    """Apply ``(a/n)(-Lap - 2n)``; minus this is the linearization of ``G(rho) + a rho``."""
    return la_multipliers(ctx) * np.asarray(xi, dtype=float)


def _require_high_modes(ctx, xi, tol=1e-10):
    xi = np.asarray(xi, dtype=float)
    low = np.linalg.norm(xi[ctx.basis.low_mask])
    if low > tol * max(np.linalg.norm(xi), 1.0):
        raise LowModeError(f"field has degree <= 1 content of norm {low:.3g}")
    return xi


def fractional_power_apply(ctx: OperatorContext, xi, p: float):
    """Spectral power ``L_a^p`` on fields supported on degrees >= 2."""
    xi = _require_high_modes(ctx, xi)
    mult = la_multipliers(ctx)
    out = np.zeros_like(xi)
    hi = ~ctx.basis.low_mask
    out[hi] = mult[hi] ** p * xi[hi]
    return out


def lyapunov(ctx: OperatorContext, xi) -> float:
    """``1/2 <xi, L_a^k xi>`` for ``xi`` orthogonal to degrees 0 and 1."""
    xi = _require_high_modes(ctx, xi)
    hi = ~ctx.basis.low_mask
    return 0.5 * float(np.sum(la_multipliers(ctx)[hi] ** ctx.k * xi[hi] ** 2))


def check_smallness(ctx: OperatorContext, xi_grid):
    bound = 0.5 * ctx.rho_a
    m = float(np.max(np.abs(xi_grid)))
    if m > bound:
        raise SmallnessError(f"sup|xi| = {m:.4g} exceeds rho_a/2 = {bound:.4g}")
    return m


def nonlinear_remainder_grid(ctx: OperatorContext, xi, terms=None):
    """Quadratic-and-higher part of ``G(rho_a + xi)`` on the grid.

    Evaluated from the closed form (every term carries at least two factors
    of ``xi`` or its derivatives, so roundoff scales with ``xi``)::

        -(rho_a + rho) xi Lap xi/(rho^2 rho_a^2) - n xi^2/(rho rho_a^2)
        - |grad xi|^2/(rho (rho^2 + |grad xi|^2))
        - grad xi . Hess xi grad xi/(rho^2 (rho^2 + |grad xi|^2))

    with ``rho = rho_a + xi``. ``terms`` may carry precomputed
    ``(xi, grad, hess)`` from :meth:`BasisTables.frame_derivatives`.
    """
    B = ctx.basis
    if terms is None:
        terms = B.frame_derivatives(xi)
    x, grad, hess = terms
    check_smallness(ctx, x)
    ra, n = ctx.rho_a, B.n
    lap = B.synthesize(B.eig_laplace * np.asarray(xi, dtype=float))
    r = ra + x
    q = np.sum(grad**2, axis=1)
    hform = np.einsum("ni,nij,nj->n", grad, hess, grad)
    s = r**2 + q
    return (-(ra + r) * x * lap / (r**2 * ra**2) - n * x**2 / (r * ra**2)
            - q / (r * s) - hform / (r**2 * s))


def nonlinear_remainder(ctx: OperatorContext, xi):
    return ctx.basis.analyze(nonlinear_remainder_grid(ctx, xi))


def nonlinear_remainder_by_difference(ctx: OperatorContext, xi):
    """``G(rho_a+xi) - G(rho_a) - dG(rho_a) xi`` with ``dG(rho_a) = (a/n)(Lap + n)``.

    Independent route to :func:`nonlinear_remainder`, used as an oracle.
    """
    B = ctx.basis
    xi = np.asarray(xi, dtype=float)
    rho = xi.copy()
    rho[0] += ctx.rho_a * np.sqrt(B.area)
    g_rho = graph_speed(rho, B)
    g0 = np.zeros(B.size)
    g0[0] = -B.n / ctx.rho_a * np.sqrt(B.area)
    dg = ctx.a / B.n * (B.eig_laplace + B.n) * xi
    return g_rho - g0 - dg


# ----------------------------------------------------------------------------
# independent curvature oracle


def embedded_curvature_oracle(rho, B: BasisTables, resolution: int = 512):
    """Mean curvature of the embedding ``omega -> rho(omega) omega`` from finite differences.

    Second-order central differences of width ``h = 2 pi/resolution`` (n = 1)
    or ``h = pi/resolution`` (n = 2) are taken in the angle coordinates around
    every quadrature node; the curvature follows from the first and second
    fundamental forms of the embedded surface. Nothing here uses the graph
    formula, so it checks :func:`mean_curvature` independently.
    """
    if resolution < 8 * B.L_max:
        raise ValueError(f"oracle resolution {resolution} too coarse for L_max={B.L_max}")
    rho = np.asarray(rho, dtype=float)
    if B.n == 1:
        h = 2.0 * np.pi / resolution
        th = B.theta
        X = [_embed_circle(B, rho, th + d) for d in (-h, 0.0, h)]
        d1 = (X[2] - X[0]) / (2 * h)
        d2 = (X[2] - 2 * X[1] + X[0]) / h**2
        cross = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
        return cross / np.sum(d1**2, axis=1) ** 1.5

    h = np.pi / resolution
    if B.colat.min() <= h or B.colat.max() >= np.pi - h:
        raise ValueError("oracle stencil reaches a pole; increase resolution")
    nlat, nlon = B.shape
    X = {}
    for i in (-1, 0, 1):
        for j in (-1, 0, 1):
            th = B.colat + i * h
            ph = B.lon + j * h
            r = B.evaluate_angles(rho, th, ph)
            T, P = np.meshgrid(th, ph, indexing="ij")
            X[i, j] = r[..., None] * np.stack(
                [np.sin(T) * np.cos(P), np.sin(T) * np.sin(P), np.cos(T)], axis=-1)
    Xt = (X[1, 0] - X[-1, 0]) / (2 * h)
    Xp = (X[0, 1] - X[0, -1]) / (2 * h)
    Xtt = (X[1, 0] - 2 * X[0, 0] + X[-1, 0]) / h**2
    Xpp = (X[0, 1] - 2 * X[0, 0] + X[0, -1]) / h**2
    Xtp = (X[1, 1] - X[1, -1] - X[-1, 1] + X[-1, -1]) / (4 * h**2)
    nrm = np.cross(Xt, Xp)
    nrm /= np.linalg.norm(nrm, axis=-1, keepdims=True)
    E, F, G = (np.sum(u * v, axis=-1) for u, v in ((Xt, Xt), (Xt, Xp), (Xp, Xp)))
    L, M, N = (np.sum(u * nrm, axis=-1) for u in (Xtt, Xtp, Xpp))
    H = -(E * N - 2 * F * M + G * L) / (E * G - F**2)
    return H.ravel()


def _embed_circle(B, rho, theta):
    r = B.evaluate_angles(rho, theta)
    return r[:, None] * np.stack([np.cos(theta), np.sin(theta)], axis=1)


def linearization_defect(ctx: OperatorContext, eta, eps: float) -> float:
    """``||G(rho_a + eps eta) + a (rho_a + eps eta) + eps L_a eta||``; of order ``eps^2``."""
    B = ctx.basis
    eta = np.asarray(eta, dtype=float)
    rho = eps * eta
    rho[0] += ctx.rho_a * np.sqrt(B.area)
    return float(np.linalg.norm(graph_speed(rho, B) + ctx.a * rho + eps * linearized_operator(ctx, eta)))


def linearization_order(ctx: OperatorContext, eta, eps=(1e-2, 1e-3, 1e-4)) -> float:
    """Fitted exponent of :func:`linearization_defect` against ``eps``."""
    d = [linearization_defect(ctx, eta, e) for e in eps]
    return float(np.polyfit(np.log(eps), np.log(d), 1)[0])
