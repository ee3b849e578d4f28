"""Time integration of the physical and rescaled graph flows.

Both systems are advanced with a variable-step IMEX-SBDF2 scheme (first step
IMEX-Euler) whose implicit operator is diagonal in the harmonic basis, so a
step needs no linear solve. Step sizes are adapted with a step-doubling error
estimate.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .curvature import (OperatorContext, SmallnessError, StarShapedError, check_smallness,
                        graph_speed, la_multipliers)
from .diagnostics import DiagnosticsRecord, make_record
from .modulation import FixedPointError, RegimeError, decompose, projected_dynamics
from .sphere import BasisTables

log = logging.getLogger(__name__)


class StepSizeError(RuntimeError):
    """The adaptive step fell below the minimum step size."""


GUARD_ERRORS = (SmallnessError, StarShapedError, RegimeError, FixedPointError, StepSizeError)


@dataclass(frozen=True)
class FlowState:
    """Rescaled state ``x = z + lam * (sqrt(n/a) + xi) omega`` at rescaled time ``tau``."""

    tau: float
    t: float
    lam: float
    a: float
    z: np.ndarray
    xi: np.ndarray


@dataclass(frozen=True)
class StepControl:
    dtau: float = 1e-3
    tol_abs: float = 1e-12
    tol_rel: float = 1e-8
    safety: float = 0.8
    lambda_min: float = 0.05
    dtau_min: float = 1e-12
    max_steps: int = 200000

    def __post_init__(self):
        if not self.dtau > 0:
            raise ValueError("dtau must be positive")
        if not self.lambda_min > 0:
            raise ValueError("lambda_min must be positive")
        if not 0 < self.safety <= 1:
            raise ValueError("safety factor must lie in (0, 1]")


# ----------------------------------------------------------------------------
# generic stepper


class IMEXBDF2:
    """Adaptive IMEX-SBDF2 for ``U' = F(U)`` with a frozen diagonal stiff part ``A(U_n)``.

    Parameters
    ----------
    rhs : callable
        ``U -> F(U)``, the full right-hand side.
    stiff : callable
        ``U -> A`` (a vector), evaluated at the start of each step; the scheme
        treats ``A * U`` implicitly and ``F(U) - A * U`` explicitly.
    blocks : list of slices
        Error-norm blocks; each is scaled by ``tol_abs + tol_rel * max|U_block|``.
    """

    def __init__(self, rhs: Callable, stiff: Callable, blocks, ctrl: StepControl, u0, h0=None):
        self.rhs, self.stiff, self.blocks, self.ctrl = rhs, stiff, blocks, ctrl
        self.u = np.asarray(u0, dtype=float).copy()
        self.f = rhs(self.u)
        self.u_prev = self.f_prev = None
        self.h_prev = None
        self.h = float(ctrl.dtau if h0 is None else h0)
        self.accepted = self.rejected = 0

    @staticmethod
    def _euler(A, h, u, f):
        return (u + h * (f - A * u)) / (1.0 - h * A)

    @staticmethod
    def _sbdf2(A, h, u, f, u_prev, f_prev, h_prev):
        w = h / h_prev
        a0 = (1 + 2 * w) / (1 + w)
        a1 = -(1 + w)
        a2 = w * w / (1 + w)
        e, e_prev = f - A * u, f_prev - A * u_prev
        rhs = -a1 * u - a2 * u_prev + h * ((1 + w) * e - w * e_prev)
        return rhs / (a0 - h * A)

    def _error(self, big, small, order):
        err = np.abs(big - small) / (2**order - 1)
        worst = 0.0
        for blk in self.blocks:
            scale = self.ctrl.tol_abs + self.ctrl.tol_rel * np.max(np.abs(small[blk]))
            worst = max(worst, float(np.max(err[blk])) / scale)
        return worst

    def step(self):
        """Take one accepted step; returns the step size used."""
        c = self.ctrl
        A = self.stiff(self.u)
        while True:
            h = self.h
            if h < c.dtau_min:
                raise StepSizeError(f"step size {h:.3g} below minimum {c.dtau_min:.3g}")
            try:
                if self.u_prev is None:
                    order = 1
                    big = self._euler(A, h, self.u, self.f)
                    mid = self._euler(A, h / 2, self.u, self.f)
                    f_mid = self.rhs(mid)
                    small = self._euler(A, h / 2, mid, f_mid)
                else:
                    order = 2
                    big = self._sbdf2(A, h, self.u, self.f, self.u_prev, self.f_prev, self.h_prev)
                    mid = self._sbdf2(A, h / 2, self.u, self.f, self.u_prev, self.f_prev,
                                      self.h_prev)
                    f_mid = self.rhs(mid)
                    small = self._sbdf2(A, h / 2, mid, f_mid, self.u, self.f, h / 2)
                f_new = self.rhs(small)
                err = self._error(big, small, order)
            except (SmallnessError, StarShapedError, FloatingPointError, FixedPointError):
                # a trial step left the admissible set; retry smaller
                err = np.inf
            if np.isfinite(err) and err <= 1.0:
                break
            self.rejected += 1
            self.h = h * (0.2 if not np.isfinite(err) else
                          float(np.clip(c.safety * err ** (-1.0 / (order + 1)), 0.2, 0.9)))
        # history at the half-step spacing of the accepted solution
        self.u_prev, self.f_prev, self.h_prev = mid, f_mid, h / 2
        self.u, self.f = small, f_new
        self.accepted += 1
        grow = 2.0 if err == 0 else c.safety * err ** (-1.0 / (order + 1))
        self.h = h * float(np.clip(grow, 0.2, 2.0))
        return h


# ----------------------------------------------------------------------------
# rescaled system


class RescaledFlow:
    """Packed state ``[xi, a, z, log lam, t]`` with ``tau`` as independent variable."""

    def __init__(self, basis: BasisTables, k: int, fp_tol: float = 1e-12, fp_max_iter: int = 50):
        self.B, self.k = basis, k
        self.fp_tol, self.fp_max_iter = fp_tol, fp_max_iter
        m, n = basis.size, basis.n
        self.s_xi = slice(0, m)
        self.i_a = m
        self.s_z = slice(m + 1, m + 2 + n)
        self.i_loglam = m + 2 + n
        self.i_t = m + 3 + n
        self.dim = m + 4 + n
        self.blocks = [self.s_xi, slice(self.i_a, self.i_a + 1), self.s_z,
                       slice(self.i_loglam, self.i_loglam + 1), slice(self.i_t, self.i_t + 1)]
        self.last = None

    def pack(self, s: FlowState) -> np.ndarray:
        u = np.empty(self.dim)
        u[self.s_xi] = s.xi
        u[self.i_a] = s.a
        u[self.s_z] = s.z
        u[self.i_loglam] = np.log(s.lam)
        u[self.i_t] = s.t
        return u

    def unpack(self, u, tau) -> FlowState:
        return FlowState(tau=float(tau), t=float(u[self.i_t]), lam=float(np.exp(u[self.i_loglam])),
                         a=float(u[self.i_a]), z=u[self.s_z].copy(), xi=u[self.s_xi].copy())

    def context(self, u) -> OperatorContext:
        return OperatorContext(self.B, float(u[self.i_a]), self.k)

    def dynamics(self, u):
        ctx = self.context(u)
        lam = float(np.exp(u[self.i_loglam]))
        return ctx, lam, projected_dynamics(ctx, lam, u[self.s_xi], self.fp_tol, self.fp_max_iter)

    def rhs(self, u):
        ctx, lam, d = self.dynamics(u)
        self.last = d
        xi = u[self.s_xi]
        f = np.empty(self.dim)
        forcing = np.where(self.B.low_mask, 0.0, d.forcing)
        f[self.s_xi] = -la_multipliers(ctx) * xi + forcing
        f[self.i_a] = d.rates.a_tau
        f[self.s_z] = d.rates.z_tau
        f[self.i_loglam] = -ctx.a
        f[self.i_t] = lam * lam
        return f

    def stiff(self, u):
        A = np.zeros(self.dim)
        A[self.s_xi] = -la_multipliers(self.context(u))
        return A


def step_rescaled(s: FlowState, ctrl: StepControl, k: int, basis: BasisTables):
    """One adaptive IMEX-Euler step of the rescaled system (no history).

    Returns ``(new_state, dtau_used, dtau_next)``. Multi-step runs should use
    :func:`run_rescaled`, which carries the SBDF2 history.
    """
    sys = RescaledFlow(basis, k)
    integ = IMEXBDF2(sys.rhs, sys.stiff, sys.blocks, ctrl, sys.pack(s))
    h = integ.step()
    return sys.unpack(integ.u, s.tau + h), h, integ.h


@dataclass
class Trajectory:
    states: list
    records: list
    guard: str | None = None        # message of the guard that stopped the run
    steps: int = 0
    rejected: int = 0

    def series(self, name):
        return np.array([getattr(r, name) for r in self.records])


def _record_rescaled(sys: RescaledFlow, u, tau, with_ratios=True) -> DiagnosticsRecord:
    ctx, lam, d = sys.dynamics(u)
    return make_record(ctx, tau, u[sys.i_t], lam, u[sys.s_z], u[sys.s_xi], d.defect,
                       d.rates, with_ratios)


def run_rescaled(init: FlowState, ctrl: StepControl, basis: BasisTables, k: int,
                 horizon_tau: float, cadence: float = 0.05, with_ratios: bool = True) -> Trajectory:
    """Integrate the rescaled system to ``horizon_tau``.

    Samples are taken at the end of the first accepted step at or past each
    multiple of ``cadence``. A guard trip ends the run; the trajectory up to
    that point is returned with ``guard`` set.
    """
    sys = RescaledFlow(basis, k)
    xi0 = np.asarray(init.xi, dtype=float).copy()
    xi0[basis.low_mask] = 0.0
    init = replace(init, xi=xi0)
    traj = Trajectory([], [])
    try:
        check_smallness(OperatorContext(basis, init.a, k), basis.synthesize(xi0))
        integ = IMEXBDF2(sys.rhs, sys.stiff, sys.blocks, ctrl, sys.pack(init))
    except GUARD_ERRORS as exc:
        traj.guard = f"{type(exc).__name__}: {exc}"
        return traj
    tau = init.tau
    traj.states.append(sys.unpack(integ.u, tau))
    traj.records.append(_record_rescaled(sys, integ.u, tau, with_ratios))
    next_mark = tau + cadence
    try:
        while tau < horizon_tau - 1e-14:
            if integ.accepted >= ctrl.max_steps:
                raise StepSizeError(f"step budget {ctrl.max_steps} exhausted at tau={tau:.6g}")
            integ.h = min(integ.h, horizon_tau - tau)      # land on the horizon exactly
            tau += integ.step()
            if tau >= next_mark - 1e-14 or tau >= horizon_tau - 1e-14:
                traj.states.append(sys.unpack(integ.u, tau))
                traj.records.append(_record_rescaled(sys, integ.u, tau, with_ratios))
                while next_mark <= tau + 1e-14:
                    next_mark += cadence
    except GUARD_ERRORS as exc:
        traj.guard = f"{type(exc).__name__}: {exc}"
        log.warning("rescaled run stopped at tau=%.6g: %s", tau, traj.guard)
    traj.steps, traj.rejected = integ.accepted, integ.rejected
    return traj


# ----------------------------------------------------------------------------
# physical system


class PhysicalFlow:
    """Packed state ``[R, log lam, tau]`` with physical time as independent variable.

    ``R`` is the radius function over the fixed center ``origin``. The scale
    obeys ``d log(lam)/dt = -n/mean(R)^2`` so that ``a = n lam^2/mean(R)^2``
    agrees with the rescaled definition, and ``d tau/dt = lam^-2``.
    """

    def __init__(self, basis: BasisTables):
        self.B = basis
        m = basis.size
        self.s_r = slice(0, m)
        self.i_loglam = m
        self.i_tau = m + 1
        self.dim = m + 2
        self.blocks = [self.s_r, slice(m, m + 1), slice(m + 1, m + 2)]

    def mean_radius(self, u) -> float:
        return float(u[0] / np.sqrt(self.B.area))

    def rhs(self, u):
        f = np.empty(self.dim)
        f[self.s_r] = graph_speed(u[self.s_r], self.B)
        rbar = self.mean_radius(u)
        f[self.i_loglam] = -self.B.n / rbar**2
        f[self.i_tau] = np.exp(-2.0 * u[self.i_loglam])
        return f

    def stiff(self, u):
        A = np.zeros(self.dim)
        A[self.s_r] = self.B.eig_laplace / self.mean_radius(u) ** 2
        return A


def step_physical(rho, dt: float, basis: BasisTables):
    """One IMEX-Euler step of ``d rho/dt = G(rho)`` with implicit part ``Lap/mean(rho)^2``."""
    rho = np.asarray(rho, dtype=float)
    if basis.synthesize(rho).min() <= 0:
        raise StarShapedError("radius function is not positive")
    rbar = rho[0] / np.sqrt(basis.area)
    A = basis.eig_laplace / rbar**2
    return IMEXBDF2._euler(A, dt, rho, graph_speed(rho, basis))


@dataclass(frozen=True)
class PhysicalSample:
    t: float
    tau: float
    lam: float
    mean_radius: float
    rho: np.ndarray


def run_physical(rho0, ctrl: StepControl, basis: BasisTables, k: int, origin=None,
                 cadence: float = 0.05, dt0: float | None = None,
                 with_ratios: bool = True) -> Trajectory:
    """Evolve ``R`` over ``origin`` until the mean radius drops below ``ctrl.lambda_min``.

    Samples are taken at ``tau`` cadence (``tau`` integrated alongside) and
    each carries the decomposition of ``x = origin + R omega`` at the current
    ``lam``. ``states`` holds :class:`FlowState` objects built from those
    decompositions; ``records`` the matching diagnostics.
    """
    B = basis
    origin = np.zeros(B.n + 1) if origin is None else np.asarray(origin, dtype=float)
    sys = PhysicalFlow(B)
    u0 = np.zeros(sys.dim)
    u0[sys.s_r] = rho0
    rbar0 = sys.mean_radius(u0)
    traj = Trajectory([], [])
    h0 = dt0 if dt0 is not None else ctrl.dtau * rbar0**2
    try:
        if B.synthesize(rho0).min() <= 0:
            raise StarShapedError("initial radius function is not positive")
        integ = IMEXBDF2(sys.rhs, sys.stiff, sys.blocks, ctrl, u0, h0=h0)
    except GUARD_ERRORS as exc:
        traj.guard = f"{type(exc).__name__}: {exc}"
        return traj

    def sample(u, t):
        lam = float(np.exp(u[sys.i_loglam]))
        radial = B.synthesize(u[sys.s_r]) + B.omega @ origin
        d = decompose(radial, lam, B)
        ctx = OperatorContext(B, d.a, k)
        dyn = projected_dynamics(ctx, lam, d.xi)
        st = FlowState(tau=float(u[sys.i_tau]), t=float(t), lam=lam, a=d.a, z=d.z, xi=d.xi)
        rec = make_record(ctx, st.tau, t, lam, d.z, d.xi, dyn.defect, dyn.rates, with_ratios)
        traj.states.append(st)
        traj.records.append(rec)

    t = 0.0
    try:
        sample(integ.u, t)
        next_mark = cadence
        while sys.mean_radius(integ.u) >= ctrl.lambda_min:
            if integ.accepted >= ctrl.max_steps:
                raise StepSizeError(f"step budget {ctrl.max_steps} exhausted at t={t:.6g}")
            t += integ.step()
            tau = integ.u[sys.i_tau]
            if tau >= next_mark - 1e-14 or sys.mean_radius(integ.u) < ctrl.lambda_min:
                sample(integ.u, t)
                while next_mark <= tau + 1e-14:
                    next_mark += cadence
    except GUARD_ERRORS as exc:
        traj.guard = f"{type(exc).__name__}: {exc}"
        log.warning("physical run stopped at t=%.6g: %s", t, traj.guard)
    traj.steps, traj.rejected = integ.accepted, integ.rejected
    return traj


# ----------------------------------------------------------------------------
# collapse extrapolation


@dataclass(frozen=True)
class CollapseFit:
    t_star: float
    a_star: float
    residual: float


def estimate_collapse(t, lam, tail: int | None = None) -> CollapseFit:
    """Fit ``lam^2 = 2 a* (t* - t)`` by least squares over the last ``tail`` samples.

    The residual is the RMS misfit of ``lam^2`` relative to its range over the
    window.
    """
    t = np.asarray(t, dtype=float)
    lam = np.asarray(lam, dtype=float)
    if tail is not None:
        t, lam = t[-tail:], lam[-tail:]
    if t.size < 10:
        raise ValueError(f"need at least 10 tail samples, got {t.size}")
    if np.any(np.diff(lam) >= 0):
        raise ValueError("scale factor is not decreasing over the tail")
    y = lam**2
    slope, icpt = np.polyfit(t, y, 1)
    a_star = -slope / 2.0
    t_star = -icpt / slope
    resid = float(np.sqrt(np.mean((y - (icpt + slope * t)) ** 2)) / (y.max() - y.min()))
    return CollapseFit(float(t_star), float(a_star), resid)
