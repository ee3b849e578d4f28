"""Scale/center modulation of a near-spherical graph.

A surface ``x(omega) = z + lambda * rho(omega) * omega`` is split as
``rho = sqrt(n/a) + xi`` with ``xi`` orthogonal to ``1`` and to the
coordinate functions ``omega^j``. The center ``z`` and the scale ``a`` solve
equations that are affine in the unknown, so both are computed in closed
form. Under the rescaled flow, keeping the orthogonality fixes the rates
``a_tau`` and ``z_tau``; those are computed here as well.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .curvature import OperatorContext, nonlinear_remainder_grid
from .sphere import BasisTables

log = logging.getLogger(__name__)


class RegimeError(ValueError):
    """The surface is too far from a round sphere to be decomposed."""


class FixedPointError(RuntimeError):
    """The center-rate iteration did not converge."""


def _values(x):
    return np.asarray(getattr(x, "values", x), dtype=float)


def mode_constant(n: int, area: float) -> float:
    """``c = int (omega^j)^2 = |S^n|/(n+1)``."""
    return area / (n + 1)


def find_center(x_radial, B: BasisTables) -> np.ndarray:
    """Center ``z`` with ``int ((x - z).omega) omega^j = 0`` for every ``j``.

    ``x_radial`` holds ``x(omega).omega`` at the grid nodes.
    """
    v = _values(x_radial)
    c = mode_constant(B.n, B.area)
    return (B.omega.T @ (B.weights * v)) / c


def scale_guard(n: int, a_ref: float, area: float) -> float:
    """L1 radius around ``sqrt(n/a_ref)`` inside which the scale is unique."""
    return (n - 0.5) ** 2.5 * np.sqrt(n) * area / (6.0 * a_ref**3)


def find_scale(rho, B: BasisTables, a_ref: float | None = None) -> float:
    """``a = n/mean(rho)^2``, the solution of ``int (rho - sqrt(n/a)) = 0``.

    When ``a_ref`` is given the L1 distance of ``rho`` to ``sqrt(n/a_ref)`` is
    compared with :func:`scale_guard` and a warning is logged if it exceeds it.
    """
    rho = np.asarray(rho, dtype=float)
    mean = rho[0] / np.sqrt(B.area)
    if mean <= 0:
        raise RegimeError(f"mean radius {mean:.4g} is not positive")
    if a_ref is not None:
        dist = B.lp_norm(B.synthesize(rho) - np.sqrt(B.n / a_ref), 1)
        delta = scale_guard(B.n, a_ref, B.area)
        if dist > delta:
            log.warning("L1 distance %.3g to sqrt(n/a_ref) exceeds guard %.3g", dist, delta)
    return B.n / mean**2


@dataclass
class Decomposition:
    """``x = z + lam * (sqrt(n/a) + xi) omega`` with ``xi`` free of degrees 0, 1."""

    a: float
    z: np.ndarray
    lam: float
    xi: np.ndarray

    @property
    def rho_a(self) -> float:
        return float(np.sqrt(len(self.z) - 1) / np.sqrt(self.a))

    def rho(self, B: BasisTables) -> np.ndarray:
        """Coefficients of ``rho = rho_a + xi``."""
        r = self.xi.copy()
        r[0] += self.rho_a * np.sqrt(B.area)
        return r


def decompose(x_radial, lam: float, B: BasisTables) -> Decomposition:
    """Split ``x(omega).omega`` (grid samples) at scale ``lam`` into center, scale and perturbation."""
    if not lam > 0:
        raise ValueError(f"scale factor must be positive, got {lam}")
    v = _values(x_radial)
    z = find_center(v, B)
    rho_grid = (v - B.omega @ z) / lam
    mean = B.integrate(rho_grid) / B.area
    dev = float(np.max(np.abs(rho_grid - mean)))
    if not mean > 0 or dev > 0.5 * mean:
        raise RegimeError(
            f"surface left the near-sphere regime: mean radius {mean:.4g}, max deviation {dev:.4g}")
    rho = B.analyze(rho_grid)
    a = find_scale(rho, B)
    xi = rho.copy()
    xi[B.low_mask] = 0.0
    return Decomposition(a=a, z=z, lam=float(lam), xi=xi)


def orthogonality_residual(xi, B: BasisTables) -> float:
    """``max_j |<xi, omega^j>|`` (``omega^0 = 1``) computed by grid quadrature."""
    g = B.synthesize(xi) * B.weights
    modes = np.column_stack([np.ones(B.theta.size), B.omega])
    return float(np.max(np.abs(g @ modes)))


# ----------------------------------------------------------------------------
# rates


@dataclass
class ModulationRates:
    a_tau: float
    z_tau: np.ndarray
    iterations: int
    residual: float


@dataclass
class ProjectedDynamics:
    """Everything one evaluation of the rescaled right-hand side needs."""

    rates: ModulationRates
    w: np.ndarray            # z_tau / lambda
    forcing: np.ndarray      # coefficients of N(xi) + w.grad(xi)/rho, all degrees
    defect: float            # degree <= 1 norm of forcing + F, before projection
    xi_grid: np.ndarray


def projected_dynamics(ctx: OperatorContext, lam: float, xi, tol: float = 1e-12,
                       max_iter: int = 50) -> ProjectedDynamics:
    """Solve the projection equations for ``(a_tau, z_tau)`` at one instant.

    Writing ``w = z_tau/lambda`` and ``V = grad(xi)`` embedded in R^{n+1},
    conservation of ``int rho omega^j = 0`` and ``mean(rho) = sqrt(n/a)``
    under the rescaled flow gives::

        c w_j = <N(xi) + w.V/rho, omega^j>
        (sqrt(n)/2) a^{-3/2} a_tau |S^n| = -<N(xi) + w.V/rho, 1>

    ``w`` appears on both sides; it is found by fixed-point iteration from
    ``w = 0`` (a contraction for small ``|grad xi|``), to absolute
    tolerance ``tol`` on ``w``.
    """
    B = ctx.basis
    n, a = B.n, ctx.a
    terms = B.frame_derivatives(xi)
    x, grad, _ = terms
    N = nonlinear_remainder_grid(ctx, xi, terms)
    rho = ctx.rho_a + x
    V = np.einsum("ni,nij->nj", grad, B.tangent_frame()) / rho[:, None]
    wq = B.weights
    c = mode_constant(n, B.area)
    b = B.omega.T @ (wq * N)
    M = B.omega.T @ (wq[:, None] * V)        # M[j, k] = <V_k/rho, omega^j>
    w = np.zeros(n + 1)
    residual = np.inf
    it = 0
    while it < max_iter:
        it += 1
        w_new = (b + M @ w) / c
        residual = float(np.max(np.abs(w_new - w)))
        w = w_new
        if residual <= tol:
            break
    else:
        raise FixedPointError(f"center-rate iteration stalled at residual {residual:.3g}")

    adv = V @ w
    mean_part = float(wq @ (N + adv))
    a_tau = -2.0 * a**1.5 * mean_part / (np.sqrt(n) * B.area)
    forcing = B.analyze(N + adv)
    F_grid = 0.5 * np.sqrt(n) * a**-1.5 * a_tau - B.omega @ w
    low = (forcing + B.analyze(F_grid))[B.low_mask]
    rates = ModulationRates(a_tau=a_tau, z_tau=lam * w, iterations=it, residual=residual)
    return ProjectedDynamics(rates=rates, w=w, forcing=forcing,
                             defect=float(np.linalg.norm(low)), xi_grid=x)


def modulation_rates(d: Decomposition, ctx: OperatorContext, tol: float = 1e-12,
                     max_iter: int = 50) -> ModulationRates:
    ctx = ctx.with_scale(d.a) if ctx.a != d.a else ctx
    return projected_dynamics(ctx, d.lam, d.xi, tol, max_iter).rates


# ----------------------------------------------------------------------------
# re-graphing over a shifted center


def regraph(rho, B: BasisTables, shift, tol: float = 1e-12, max_iter: int = 60) -> np.ndarray:
    """Radius function of the graph ``{rho(omega) omega}`` seen from center ``shift``.

    For each node direction ``u`` solve ``|h + s u| = rho((h + s u)/|h + s u|)``
    for ``s`` by secant iteration (relative tolerance ``tol``); ``rho`` is
    synthesized at the intersection directions. Returns coefficients.
    """
    h = np.asarray(shift, dtype=float)
    rho = np.asarray(rho, dtype=float)
    if not np.any(h):
        return rho.copy()
    u = B.omega
    r_h = float(np.linalg.norm(h))
    if r_h >= B.evaluate(rho, (h / r_h)[None, :])[0]:
        raise RegimeError("shifted center lies outside the surface")

    def resid(s):
        p = h + s[:, None] * u
        r = np.linalg.norm(p, axis=1)
        return r - B.evaluate(rho, p / r[:, None])

    s0 = B.synthesize(rho) - u @ h
    s1 = s0 * (1 + 1e-6) + 1e-9
    f0, f1 = resid(s0), resid(s1)
    for _ in range(max_iter):
        denom = f1 - f0
        safe = np.where(denom == 0, 1.0, denom)
        step = np.where(denom == 0, 0.0, f1 * (s1 - s0) / safe)
        s0, f0 = s1, f1
        s1 = s1 - step
        if np.max(np.abs(step) / np.abs(s1)) <= tol:
            break
        f1 = resid(s1)
    else:
        raise FixedPointError("ray intersection did not converge")
    if np.min(s1) <= 0:
        raise RegimeError("shifted center lies outside the surface")
    return B.analyze(s1)


def recenter(rho, B: BasisTables, tol: float = 1e-12, max_iter: int = 30):
    """Find the center of the graph of ``rho`` and re-graph over it.

    Returns ``(z, rho_z)`` with ``rho_z`` the radius function over ``z``,
    orthogonal to every ``omega^j``.
    """
    rho = np.asarray(rho, dtype=float)
    c = mode_constant(B.n, B.area)
    lin = B.linear_mode_coeffs()
    z = np.zeros(B.n + 1)
    cur = rho
    for _ in range(max_iter):
        dz = (lin @ cur) / c
        if np.max(np.abs(dz)) <= tol:
            return z, cur
        z = z + dz
        cur = regraph(rho, B, z)
    raise FixedPointError("recentering did not converge")
