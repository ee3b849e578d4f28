"""Per-sample observables, rate fits and inequality monitors for flow trajectories."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .curvature import (OperatorContext, fractional_power_apply, lyapunov,
                        nonlinear_remainder_grid)
from .sphere import sobolev_weights

RATIO_KEYS = ("n_bound", "a_rate", "z_rate", "npro")


@dataclass(frozen=True)
class DiagnosticsRecord:
    """Observables of one trajectory sample."""

    tau: float
    t: float
    lam: float
    a: float
    z: tuple
    Lambda_k: float
    H1: float
    H2: float
    Hk: float
    orth_residual: float
    modulation_defect: float
    ratios: dict = field(default_factory=dict)

    def row(self) -> list:
        return [self.tau, self.t, self.lam, self.a, *self.z, self.Lambda_k,
                self.H1, self.H2, self.Hk, self.orth_residual, self.modulation_defect]


def csv_header(n: int) -> list[str]:
    return (["tau", "t", "lambda", "a"] + [f"z_{j + 1}" for j in range(n + 1)]
            + ["Lambda_k", "H1", "H2", "Hk", "orth_residual", "modulation_defect"])


# ----------------------------------------------------------------------------
# norms and inequality ratios


def hs_norm(B, xi, s) -> float:
    return float(np.sqrt(sobolev_weights(B, s) @ np.asarray(xi) ** 2))


def _bound_factor(ctx, xi, grad):
    """``(||grad xi||_{L4}^2 + ||xi||_{H1}) ||xi||_{H2}``."""
    B = ctx.basis
    l4 = B.lp_norm(np.sqrt(np.sum(grad**2, axis=1)), 4)
    return (l4**2 + hs_norm(B, xi, 1)) * hs_norm(B, xi, 2)


def npro_ratio(ctx: OperatorContext, xi, N_coeffs=None) -> float:
    """``||L^{(k-1)/2} N|| / ((Lam^{1/2} + Lam^k) ||L^{(k+1)/2} xi||)``.

    ``L`` powers are only defined above degree 1, so they act on the
    degree >= 2 part of the remainder.
    """
    B, k = ctx.basis, ctx.k
    if N_coeffs is None:
        N_coeffs = B.analyze(nonlinear_remainder_grid(ctx, xi))
    Nh = np.where(B.low_mask, 0.0, N_coeffs)
    lam = lyapunov(ctx, xi)
    den = (np.sqrt(lam) + lam**k) * np.linalg.norm(fractional_power_apply(ctx, xi, (k + 1) / 2))
    if den == 0:
        return float("nan")
    return float(np.linalg.norm(fractional_power_apply(ctx, Nh, (k - 1) / 2)) / den)


def inequality_ratios(ctx: OperatorContext, xi, lam: float = 1.0, rates=None) -> dict:
    """Measured constants of the remainder and modulation-rate estimates at one state.

    Each entry is ``lhs / rhs`` of an estimate of the form ``lhs <= C * rhs``;
    ``nan`` when ``xi`` vanishes.
    """
    B = ctx.basis
    x, grad, hess = B.frame_derivatives(xi)
    N = nonlinear_remainder_grid(ctx, xi, (x, grad, hess))
    fac = _bound_factor(ctx, xi, grad)
    out = dict.fromkeys(RATIO_KEYS, float("nan"))
    if fac > 0:
        out["n_bound"] = B.lp_norm(N, 1) / fac
        if rates is not None:
            out["a_rate"] = abs(ctx.a**-1.5 * rates.a_tau) / fac
            out["z_rate"] = float(np.linalg.norm(rates.z_tau)) / (lam * fac)
    out["npro"] = npro_ratio(ctx, xi, B.analyze(N))
    return out


def norm_equivalence_ratio(ctx: OperatorContext, xi) -> float:
    """``Lambda_k(xi) / (a^k ||xi||_{H^k}^2)``; bounded above and below on degrees >= 2."""
    h = hs_norm(ctx.basis, xi, ctx.k)
    return lyapunov(ctx, xi) / (ctx.a**ctx.k * h**2)


def orth_residual(B, xi) -> float:
    g = B.synthesize(xi) * B.weights
    return float(max(abs(g.sum()), np.max(np.abs(g @ B.omega))))


def make_record(ctx: OperatorContext, tau, t, lam, z, xi, defect, rates=None,
                with_ratios=True) -> DiagnosticsRecord:
    B = ctx.basis
    ratios = inequality_ratios(ctx, xi, lam, rates) if with_ratios else {}
    return DiagnosticsRecord(
        tau=float(tau), t=float(t), lam=float(lam), a=float(ctx.a),
        z=tuple(float(v) for v in z), Lambda_k=lyapunov(ctx, xi),
        H1=hs_norm(B, xi, 1), H2=hs_norm(B, xi, 2), Hk=hs_norm(B, xi, ctx.k),
        orth_residual=orth_residual(B, xi), modulation_defect=float(defect),
        ratios=ratios)


# ----------------------------------------------------------------------------
# exponential fits


@dataclass(frozen=True)
class RateFit:
    rate: float
    intercept: float
    window: tuple
    r_squared: float


def tail_window(tau, fraction: float = 0.4) -> tuple:
    """The last ``fraction`` of the sampled ``tau`` range."""
    tau = np.asarray(tau, dtype=float)
    lo = tau[-1] - fraction * (tau[-1] - tau[0])
    return (float(lo), float(tau[-1]))


def fit_exponential(tau, values, window=None, min_points: int = 3) -> RateFit:
    """Least-squares fit ``log(value) = intercept + rate * tau`` over ``window``."""
    tau = np.asarray(tau, dtype=float)
    v = np.asarray(values, dtype=float)
    if window is None:
        window = tail_window(tau)
    lo, hi = window
    if not hi > lo:
        raise ValueError(f"degenerate fit window {window}")
    sel = (tau >= lo) & (tau <= hi)
    if sel.sum() < min_points:
        raise ValueError(f"only {sel.sum()} samples in window {window}")
    if np.any(v[sel] <= 0) or not np.all(np.isfinite(v[sel])):
        raise ValueError("exponential fit needs positive finite values")
    x, y = tau[sel], np.log(v[sel])
    slope, icpt = np.polyfit(x, y, 1)
    ss_res = float(np.sum((y - (icpt + slope * x)) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 else min(1.0, max(0.0, 1.0 - ss_res / ss_tot))
    return RateFit(rate=float(slope), intercept=float(icpt), window=(float(lo), float(hi)),
                   r_squared=r2)


# ----------------------------------------------------------------------------
# monitors over a trajectory


@dataclass(frozen=True)
class DiffIneqReport:
    margins: np.ndarray     # finite-difference d(Lambda)/dtau + (a/n) Lambda - allowance
    violations: int
    tol_abs: float
    tol_rel: float


def check_diffineq(records, n: int, tol_abs: float = 1e-12, tol_rel: float = 1e-6) -> DiffIneqReport:
    """Discrete check of ``d Lambda_k/d tau <= -(a/n) Lambda_k`` between consecutive samples.

    A forward difference of a decaying convex function overestimates its
    derivative, so the check is conservative for sample spacings well below
    ``n/a``. An interval is a violation when its margin is positive.
    """
    tau = np.array([r.tau for r in records])
    L = np.array([r.Lambda_k for r in records])
    a = np.array([r.a for r in records])
    if tau.size < 2:
        return DiffIneqReport(np.zeros(0), 0, tol_abs, tol_rel)
    slope = np.diff(L) / np.diff(tau)
    margins = slope + a[:-1] / n * L[:-1] - (tol_abs + tol_rel * L[:-1])
    return DiffIneqReport(margins, int(np.sum(margins > 0)), tol_abs, tol_rel)


def decay_rates(n: int) -> tuple[float, float]:
    """Exponential rates in ``tau`` of the scale and center drift bounds."""
    return 1.0 - 1.0 / (2 * n), n + 0.5 - 1.0 / (2 * n)


@dataclass(frozen=True)
class DriftReport:
    a_drift: float
    z_drift: float
    a_constant: float
    z_constant: float


def check_parameter_drift(records, n: int) -> DriftReport:
    """Total variation of ``a^{-1/2}`` and of ``z`` against ``Lambda_k(xi_0) int e^{-r s} ds``.

    The constants returned are the drifts divided by that integrated bound,
    i.e. the smallest ``C`` for which the bound holds on this trajectory.
    """
    tau = np.array([r.tau for r in records])
    a = np.array([r.a for r in records])
    z = np.array([r.z for r in records])
    a_drift = float(np.sum(np.abs(np.diff(a**-0.5))))
    z_drift = float(np.sum(np.linalg.norm(np.diff(z, axis=0), axis=1)))
    L0 = records[0].Lambda_k
    span = tau[-1] - tau[0]
    ra, rz = decay_rates(n)
    ia = (1 - np.exp(-ra * span)) / ra
    iz = (1 - np.exp(-rz * span)) / rz
    ca = a_drift / (L0 * ia) if L0 > 0 else float("nan")
    cz = z_drift / (L0 * iz) if L0 > 0 else float("nan")
    return DriftReport(a_drift, z_drift, float(ca), float(cz))


@dataclass(frozen=True)
class AsymptoticsReport:
    t: np.ndarray
    residual: np.ndarray          # |lambda / sqrt(2 a* (t* - t)) - 1|
    residual_decreasing: bool
    final_residual: float
    xi_exponent: float            # slope of log ||xi||_{H^k} against log(t* - t)
    xi_exponent_bound: float      # 1/(2n)
    z_exponent_bound: float       # (n + 1/2 - 1/(2n)) / (2 a*)


def physical_asymptotics(t, lam, hk, t_star: float, a_star: float, n: int,
                         band=(0.1, 0.3)) -> AsymptoticsReport:
    """Compare a physical-time trajectory with ``sqrt(2 a* (t* - t))`` over a ``lambda`` band."""
    t = np.asarray(t, dtype=float)
    lam = np.asarray(lam, dtype=float)
    hk = np.asarray(hk, dtype=float)
    if np.any(t >= t_star):
        raise ValueError("estimated collapse time lies inside the sampled range")
    sel = (lam >= band[0]) & (lam <= band[1])
    if sel.sum() < 3:
        raise ValueError(f"fewer than 3 samples with lambda in {band}")
    ts, ls, hs = t[sel], lam[sel], hk[sel]
    res = np.abs(ls / np.sqrt(2 * a_star * (t_star - ts)) - 1.0)
    decreasing = bool(np.all(np.diff(res) <= 0))
    if np.all(hs > 0):
        xi_exp = float(np.polyfit(np.log(t_star - ts), np.log(hs), 1)[0])
    else:
        xi_exp = float("inf")
    return AsymptoticsReport(ts, res, decreasing, float(res[-1]), xi_exp, 1.0 / (2 * n),
                             decay_rates(n)[1] / (2 * a_star))


# ----------------------------------------------------------------------------
# measured constants


def load_baselines() -> dict:
    """Checked-in inequality constants measured by :func:`measure_baselines`."""
    text = resources.files("mcflow").joinpath("baselines.json").read_text()
    return json.loads(text)


def random_suite(B, a: float, seed: int, count: int = 48, band: int = 8,
                 amplitudes=(0.01, 0.05, 0.1, 0.25), slopes=(2, 4, 8)):
    """Seeded fields on degrees ``2..band`` with sup norm ``amp * sqrt(n/a)``.

    Random fields use spectral decay ``(1 + l)^-p`` for each ``p`` in
    ``slopes`` (steep slopes give nearly pure degree-2 shapes); every single
    basis function of degree 2, 3 and 4 is added at each amplitude as well.
    """
    rng = np.random.default_rng(seed)
    rho_a = np.sqrt(B.n / a)
    sel = (B.degrees >= 2) & (B.degrees <= band)
    shapes = []
    for i in range(count):
        c = np.zeros(B.size)
        c[sel] = rng.standard_normal(sel.sum()) / (1.0 + B.degrees[sel]) ** slopes[i % len(slopes)]
        shapes.append((c, amplitudes[i % len(amplitudes)]))
    for idx in np.flatnonzero((B.degrees >= 2) & (B.degrees <= 4)):
        for amp in amplitudes:
            shapes.append((np.eye(B.size)[idx], amp))
    out = []
    for c, amp in shapes:
        out.append(c * (amp * rho_a / np.max(np.abs(B.synthesize(c)))))
    return out


def measure_baselines(seed: int = 20240611, L_max: int = 16) -> dict:
    """Maximum of each ratio over the seeded suite, per dimension."""
    from .curvature import default_k
    from .modulation import projected_dynamics
    from .sphere import BasisTables

    result = {"seed": seed, "L_max": L_max}
    for n in (1, 2):
        B = BasisTables(n, L_max)
        ctx = OperatorContext(B, float(n), default_k(n))
        rows = {key: [] for key in RATIO_KEYS}
        eq = []
        for xi in random_suite(B, ctx.a, seed + n):
            rates = projected_dynamics(ctx, 1.0, xi).rates
            for key, v in inequality_ratios(ctx, xi, 1.0, rates).items():
                rows[key].append(v)
            eq.append(norm_equivalence_ratio(ctx, xi))
        entry = {key: float(np.max(v)) for key, v in rows.items()}
        entry["norm_equiv_lower"] = float(np.min(eq))
        entry["norm_equiv_upper"] = float(np.max(eq))
        result[f"n{n}"] = entry
    return result


def certification_threshold(n: int, baselines: dict | None = None) -> float:
    """Bound ``1/(5C)`` on ``Lambda_k^{1/2} + Lambda_k^k`` with ``C`` the measured remainder constant."""
    b = baselines if baselines is not None else load_baselines()
    return 1.0 / (5.0 * b[f"n{n}"]["npro"])


def is_small(Lambda_k: float, k: int, n: int, baselines: dict | None = None) -> bool:
    return np.sqrt(Lambda_k) + Lambda_k**k <= certification_threshold(n, baselines)


def fit_convergence(tau, values, tol_abs: float = 1e-12, tol_rel: float = 1e-8,
                    floor_factor: float = 10.0) -> RateFit | None:
    """Exponential rate at which ``values`` approach their final sample.

    ``values`` may be scalar or vector per sample. Only samples whose distance
    to the final value exceeds ``floor_factor * (tol_abs + tol_rel * scale)``
    are fitted, so the integrator noise floor does not bend the fit. Returns
    ``None`` when fewer than three samples qualify.
    """
    tau = np.asarray(tau, dtype=float)
    v = np.asarray(values, dtype=float).reshape(tau.size, -1)
    d = np.linalg.norm(v - v[-1], axis=1)
    floor = floor_factor * (tol_abs + tol_rel * float(np.max(np.abs(v))))
    above = np.flatnonzero(d > floor)
    if above.size < 3:
        return None
    last = above[-1]
    keep = np.arange(last + 1)
    keep = keep[d[keep] > floor]
    if keep.size < 3 or tau[keep[-1]] <= tau[keep[0]]:
        return None
    return fit_exponential(tau[keep], d[keep], window=(tau[keep[0]], tau[keep[-1]]))
