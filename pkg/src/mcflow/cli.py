"""Command-line entry point and run orchestration.

Subcommands::

    mcflow run-physical  --config run.cfg [--out DIR] [--seed N]
    mcflow run-rescaled  --config run.cfg [--out DIR] [--seed N]
    mcflow verify        --config run.cfg [--out DIR]
    mcflow fit           trajectory.csv   [--out DIR]

Exit codes: 0 success, 2 a guard tripped (``error.json`` is written), 3 the
configuration is invalid.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, initial_radius, parse_config
from .curvature import (OperatorContext, embedded_curvature_oracle, la_multipliers,
                        linearization_order, mean_curvature, nonlinear_remainder,
                        nonlinear_remainder_by_difference)
from .diagnostics import (check_diffineq, check_parameter_drift, decay_rates, fit_convergence,
                          fit_exponential, is_small, load_baselines, physical_asymptotics)
from .flow import (GUARD_ERRORS, FlowState, StepControl, estimate_collapse, run_physical,
                   run_rescaled)
from .modulation import decompose, recenter
from .report import (SUMMARY_KEYS, plot_shape, plot_trajectory, read_trajectory_csv,
                     write_json, write_trajectory)
from .sphere import BasisTables

log = logging.getLogger("mcflow")

EXIT_OK, EXIT_GUARD, EXIT_CONFIG = 0, 2, 3


def step_control(cfg: RunConfig) -> StepControl:
    return StepControl(dtau=cfg.dtau0, tol_abs=cfg.tol_abs, tol_rel=cfg.tol_rel,
                       safety=cfg.safety, lambda_min=cfg.lambda_min)


def initial_surface(cfg: RunConfig, B: BasisTables):
    """Center and radius function (over that center) of the configured initial surface.

    Degree-1 content in the configured modes moves the surface; it is
    absorbed into the center by re-graphing so the radius function starts
    orthogonal to the coordinate functions.
    """
    rho = initial_radius(cfg, B)
    z0 = np.zeros(B.n + 1) if cfg.z0 is None else np.asarray(cfg.z0, dtype=float)
    if np.any(rho[B.low_mask][1:]):
        shift, rho = recenter(rho, B)
        z0 = z0 + shift
    return z0, rho


def simulate(cfg: RunConfig):
    """Run the configured flow. Returns ``(basis, trajectory, origin, rho0)``."""
    B = BasisTables(cfg.n, cfg.L_max, cfg.oversample)
    k = cfg.lyapunov_index
    origin, rho0 = initial_surface(cfg, B)
    ctrl = step_control(cfg)
    if cfg.mode == "physical":
        traj = run_physical(rho0, ctrl, B, k, origin=origin, cadence=cfg.cadence)
    else:
        d = decompose(B.synthesize(rho0) + B.omega @ origin, 1.0, B)
        init = FlowState(tau=0.0, t=0.0, lam=1.0, a=d.a, z=d.z, xi=d.xi)
        traj = run_rescaled(init, ctrl, B, k, cfg.tau_horizon, cadence=cfg.cadence)
    return B, traj, origin, rho0


def _xi_rate(tau, hk):
    """Tail decay rate of the perturbation norm, or ``None`` on too short a record."""
    if not np.all(hk > 0):
        return None
    try:
        return fit_exponential(tau, hk).rate
    except ValueError:
        return None


def summarize(cfg: RunConfig, traj, baselines: dict | None = None) -> dict:
    """Summary of a finished run with the fixed key set :data:`SUMMARY_KEYS`."""
    n, k = cfg.n, cfg.lyapunov_index
    recs = traj.records
    s = dict.fromkeys(SUMMARY_KEYS)
    s.update(mode=cfg.mode, n=n, L_max=cfg.L_max, k=k, seed=cfg.seed, samples=len(recs),
             steps=traj.steps, rejected_steps=traj.rejected, guard=traj.guard)
    r_a, r_z = decay_rates(n)
    s["xi_rate_bound"] = -r_a
    s["z_rate_bound"] = -r_z
    s["xi_exponent_bound"] = 1.0 / (2 * n)
    if not recs:
        s["certified"] = False
        return s
    b = baselines if baselines is not None else load_baselines()
    tau = np.array([r.tau for r in recs])
    t = np.array([r.t for r in recs])
    lam = np.array([r.lam for r in recs])
    a = np.array([r.a for r in recs])
    z = np.array([r.z for r in recs])
    hk = np.array([r.Hk for r in recs])
    last = recs[-1]
    s.update(tau_final=last.tau, t_final=last.t, lambda_final=last.lam, a_initial=recs[0].a,
             a_final=last.a, z_final=list(last.z), z_star=list(last.z))
    if cfg.mode == "physical":
        try:
            cf = estimate_collapse(t, lam, tail=10)
            s.update(t_star=cf.t_star, a_star=cf.a_star, collapse_fit_residual=cf.residual)
        except ValueError as exc:
            log.info("no collapse fit: %s", exc)
    else:
        # the remaining physical time is int lam^2 dtau = lam^2/(2a) once a has settled
        s.update(t_star=last.t + last.lam**2 / (2 * last.a), a_star=last.a)
    s["xi_rate"] = _xi_rate(tau, hk)
    for key, series in (("a_rate", a), ("z_rate", z)):
        fit = fit_convergence(tau, series, cfg.tol_abs, cfg.tol_rel)
        s[key] = None if fit is None else fit.rate
    di = check_diffineq(recs, n)
    s["diffineq_violations"] = di.violations
    if len(recs) >= 2:
        dr = check_parameter_drift(recs, n)
        s.update(a_drift=dr.a_drift, z_drift=dr.z_drift, a_drift_constant=dr.a_constant,
                 z_drift_constant=dr.z_constant)
    npro = [r.ratios.get("npro", np.nan) for r in recs]
    npro = [v for v in npro if np.isfinite(v)]
    s["max_npro_ratio"] = max(npro) if npro else None
    s["npro_baseline"] = b[f"n{n}"]["npro"]
    s["max_orth_residual"] = max(r.orth_residual for r in recs)
    s["max_modulation_defect"] = max(r.modulation_defect for r in recs)
    if cfg.mode == "physical" and s["t_star"] is not None:
        try:
            rep = physical_asymptotics(t, lam, hk, s["t_star"], s["a_star"], n)
            s.update(lambda_residual_final=rep.final_residual,
                     lambda_residual_decreasing=rep.residual_decreasing,
                     xi_exponent=rep.xi_exponent, z_exponent_bound=rep.z_exponent_bound)
        except ValueError as exc:
            log.info("no asymptotics report: %s", exc)
    small = bool(is_small(recs[0].Lambda_k, k, n, b))
    s["small_initial_data"] = small
    s["certified"] = bool(
        traj.guard is None and small and di.violations == 0
        and s["max_orth_residual"] <= 1e-10
        and np.all(np.abs(a - n) <= 0.5))
    return s


def run(cfg: RunConfig, out: str | Path | None = None) -> int:
    """Execute a physical or rescaled run and write its outputs; returns the exit code."""
    out = Path(out if out is not None else cfg.out)
    if cfg.mode == "verify":
        return verify(cfg, out)
    try:
        B, traj, origin, rho0 = simulate(cfg)
    except GUARD_ERRORS as exc:
        write_json(out / "error.json", {"error": "guard", "type": type(exc).__name__,
                                        "message": str(exc)})
        return EXIT_GUARD
    summary = summarize(cfg, traj)
    write_trajectory(out / "trajectory.csv", traj.records, cfg.n)
    write_json(out / "summary.json", summary)
    if traj.records:
        cols = read_trajectory_csv(out / "trajectory.csv")
        plot_trajectory(cols, cfg.n, out / "trajectory.png", title=f"{cfg.mode} run, n={cfg.n}")
    plot_shape(B, rho0, origin, out / "initial_shape.png", title="initial surface")
    if traj.states:
        st = traj.states[-1]
        rho = st.xi.copy()
        rho[0] += np.sqrt(cfg.n / st.a) * np.sqrt(B.area)
        plot_shape(B, rho, np.zeros(cfg.n + 1), out / "final_profile.png",
                   title=f"rescaled profile at tau={st.tau:.3g}")
    if traj.guard is not None:
        write_json(out / "error.json", {"error": "guard", "message": traj.guard,
                                        "tau": traj.records[-1].tau if traj.records else None})
        return EXIT_GUARD
    return EXIT_OK


# ----------------------------------------------------------------------------
# verify mode


def verification_checks(n: int, L_max: int, oversample: float = 2.0, seed: int = 7) -> dict:
    """Invariant suite on one basis. Each entry is ``{value, limit, passed}``."""
    B = BasisTables(n, L_max, oversample)
    rng = np.random.default_rng(seed)
    a = float(n)
    ctx = OperatorContext(B, a, 2 if n == 1 else 3)
    checks = {}

    def add(name, value, limit, ok):
        checks[name] = {"value": float(value), "limit": float(limit), "passed": bool(ok)}

    Y = np.column_stack([B.synthesize(e) for e in np.eye(B.size)])
    G = (Y.T * B.weights) @ Y
    err = np.max(np.abs(G - np.eye(B.size)))
    add("orthonormality", err, 1e-12, err <= 1e-12)
    err = abs(B.weights.sum() / B.area - 1)
    add("weights_sum", err, 1e-13, err <= 1e-13)

    l = B.degrees
    expected = a / n * (l * (l + n - 1) - 2 * n)
    err = np.max(np.abs(la_multipliers(ctx) - expected) / np.maximum(np.abs(expected), 1))
    add("spectrum", err, 1e-12, err <= 1e-12)
    worst = 0.0
    for _ in range(200):
        xi = rng.standard_normal(B.size)
        xi[B.low_mask] = 0
        q = xi @ (la_multipliers(ctx) * xi) - 2 * a / n * (xi @ xi)
        worst = min(worst, q / (xi @ xi))
    add("coercivity", -worst, 1e-12, worst >= -1e-12)

    eta = np.zeros(B.size)
    eta[B.index(2, 0)] = 1.0
    eta[B.index(3, 1)] = 0.5
    order = linearization_order(ctx, eta)
    add("linearization_order", order, 2.1, 1.9 <= order <= 2.1)
    xi = eta * 0.05 * ctx.rho_a / np.max(np.abs(B.synthesize(eta)))
    Nd = nonlinear_remainder_by_difference(ctx, xi)
    err = np.linalg.norm(nonlinear_remainder(ctx, xi) - Nd) / np.linalg.norm(Nd)
    add("remainder_formula", err, 1e-6, err <= 1e-6)

    rho = np.zeros(B.size)
    rho[0] = np.sqrt(B.area)
    rho[B.index(2, 0)] = 0.1
    res = 512 if n == 1 else 256
    err = np.max(np.abs(mean_curvature(rho, B) - embedded_curvature_oracle(rho, B, res)))
    add("curvature_oracle", err, 1e-4, err <= 1e-4)

    d = decompose(B.synthesize(rho), 1.0, B)
    d2 = decompose(B.synthesize(d.rho(B)) + B.omega @ d.z, d.lam, B)
    err = max(abs(d2.a - d.a), np.max(np.abs(d2.xi - d.xi)), np.max(np.abs(d2.z - d.z)))
    add("decompose_idempotent", err, 1e-11, err <= 1e-11)

    r0 = np.zeros(B.size)
    r0[0] = np.sqrt(B.area)
    traj = run_physical(r0, StepControl(), B, ctx.k, with_ratios=False)
    cf = estimate_collapse([r.t for r in traj.records], [r.lam for r in traj.records], tail=10)
    err = abs(cf.t_star * 2 * n - 1)
    add("sphere_collapse_time", err, 1e-5, err <= 1e-5 and traj.guard is None)
    err = abs(cf.a_star - n)
    add("sphere_collapse_scale", err, 1e-4, err <= 1e-4)
    return checks


def verify(cfg: RunConfig, out: Path) -> int:
    checks = verification_checks(cfg.n, cfg.L_max, cfg.oversample)
    ok = all(c["passed"] for c in checks.values())
    write_json(out / "verify.json", {"n": cfg.n, "L_max": cfg.L_max, "checks": checks,
                                     "passed": ok})
    return EXIT_OK if ok else EXIT_GUARD


# ----------------------------------------------------------------------------
# fit subcommand


def refit(csv_path) -> dict:
    """Rates re-fitted from a trajectory CSV."""
    cols = read_trajectory_csv(csv_path)
    n = sum(1 for key in cols if key.startswith("z_")) - 1
    tau, t, lam = cols["tau"], cols["t"], cols["lambda"]
    z = np.column_stack([cols[f"z_{j + 1}"] for j in range(n + 1)])
    out = {"n": n, "samples": int(tau.size), "xi_rate": None, "a_rate": None, "z_rate": None,
           "t_star": None, "a_star": None, "collapse_fit_residual": None}
    out["xi_rate"] = _xi_rate(tau, cols["Hk"])
    for key, series in (("a_rate", cols["a"]), ("z_rate", z)):
        f = fit_convergence(tau, series)
        out[key] = None if f is None else f.rate
    try:
        cf = estimate_collapse(t, lam, tail=10)
        out.update(t_star=cf.t_star, a_star=cf.a_star, collapse_fit_residual=cf.residual)
    except ValueError:
        pass
    return out


# ----------------------------------------------------------------------------


def _error(kind: str, message: str):
    sys.stderr.write(json.dumps({"error": kind, "message": message}, sort_keys=True) + "\n")


def load_config(path, seed=None) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    cfg = parse_config(text)
    return cfg if seed is None else cfg.with_seed(seed)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mcflow", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (("run-physical", "integrate the physical flow to near collapse"),
                        ("run-rescaled", "integrate the modulated rescaled flow"),
                        ("verify", "run the invariant suite")):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", required=True, help="configuration file")
        sp.add_argument("--out", help="output directory (overrides the config)")
        sp.add_argument("--seed", type=int, help="random seed (overrides the config)")
    sp = sub.add_parser("fit", help="re-fit rates from a trajectory CSV")
    sp.add_argument("csv", help="trajectory.csv written by a run")
    sp.add_argument("--out", help="directory for fit.json (default: next to the CSV)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "fit":
        try:
            result = refit(args.csv)
        except (OSError, ValueError, KeyError) as exc:
            _error("input", str(exc))
            return EXIT_CONFIG
        out = Path(args.out) if args.out else Path(args.csv).parent
        write_json(out / "fit.json", result)
        sys.stdout.write(json.dumps(result, sort_keys=True) + "\n")
        return EXIT_OK
    try:
        cfg = load_config(args.config, args.seed)
    except ConfigError as exc:
        _error("config", str(exc))
        return EXIT_CONFIG
    mode = {"run-physical": "physical", "run-rescaled": "rescaled", "verify": "verify"}[args.command]
    cfg = replace(cfg, mode=mode)
    code = run(cfg, args.out)
    if code == EXIT_GUARD:
        _error("guard", f"see {Path(args.out or cfg.out) / ('verify.json' if mode == 'verify' else 'error.json')}")
    return code


if __name__ == "__main__":
    sys.exit(main())
