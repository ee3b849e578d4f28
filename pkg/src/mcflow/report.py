"""Serialization of trajectories and summaries, and the report figures.

Every file is written to a temporary sibling and renamed into place, so a
crash never leaves a partial output behind. Floats are written as the
shortest decimal that round-trips (``repr``), which together with fixed
column order and sorted JSON keys makes outputs byte-reproducible.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

from .diagnostics import csv_header

SUMMARY_KEYS = (
    "mode", "n", "L_max", "k", "seed", "samples", "steps", "rejected_steps",
    "tau_final", "t_final", "lambda_final", "a_initial", "a_final", "z_final",
    "t_star", "a_star", "z_star", "collapse_fit_residual",
    "xi_rate", "xi_rate_bound", "a_rate", "z_rate", "z_rate_bound",
    "diffineq_violations", "a_drift", "z_drift", "a_drift_constant", "z_drift_constant",
    "max_npro_ratio", "npro_baseline", "max_orth_residual", "max_modulation_defect",
    "lambda_residual_final", "lambda_residual_decreasing", "xi_exponent",
    "xi_exponent_bound", "z_exponent_bound", "small_initial_data", "certified", "guard",
)


def _clean(v):
    """JSON-ready value: numpy scalars unwrapped, non-finite floats as null."""
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_clean(x) for x in v]
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer, int)):
        return int(v)
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else None
    return v


def atomic_write(path, data: str | bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"newline": "", "encoding": "utf-8"})) as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def format_float(x) -> str:
    return repr(float(x))


def trajectory_csv(records, n: int) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(csv_header(n))
    for r in records:
        w.writerow([format_float(v) for v in r.row()])
    return buf.getvalue()


def read_trajectory_csv(path) -> dict:
    """Columns of a trajectory CSV as float arrays keyed by header name."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path} is empty")
    header, body = rows[0], rows[1:]
    data = np.array([[float(v) for v in row] for row in body], dtype=float).reshape(-1, len(header))
    return {name: data[:, j] for j, name in enumerate(header)}


def dump_json(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_json(path, obj):
    atomic_write(path, dump_json(obj))


def write_trajectory(path, records, n: int):
    atomic_write(path, trajectory_csv(records, n))


# ----------------------------------------------------------------------------
# figures


def _style():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams.update({
        "font.size": 9, "axes.titlesize": 9, "axes.labelsize": 9, "legend.fontsize": 8,
        "axes.spines.top": False, "axes.spines.right": False, "lines.linewidth": 1.2,
        "figure.dpi": 100, "savefig.dpi": 120, "svg.hashsalt": "mcflow",
    })
    return plt


def _save(fig, path):
    buf = io.BytesIO()
    fig.savefig(buf, format="png", metadata={"Software": None})
    atomic_write(path, buf.getvalue())


def plot_trajectory(cols: dict, n: int, path, title: str = ""):
    """Four panels: perturbation norms, scale parameter, center offset, scale factor."""
    plt = _style()
    tau = cols["tau"]
    fig, axes = plt.subplots(2, 2, figsize=(8, 6), constrained_layout=True)
    ax = axes[0, 0]
    for name, label in (("H1", "H^1"), ("H2", "H^2"), ("Hk", "H^k")):
        v = cols[name]
        if np.any(v > 0):
            ax.semilogy(tau[v > 0], v[v > 0], label=label)
    ax.set_xlabel("tau")
    ax.set_ylabel("perturbation norm")
    ax.legend(frameon=False)

    ax = axes[0, 1]
    ax.plot(tau, cols["a"], color="C3")
    ax.axhline(n, color="0.6", lw=0.8, ls="--")
    ax.ticklabel_format(axis="y", useOffset=False)
    ax.set_xlabel("tau")
    ax.set_ylabel("scale parameter a")

    ax = axes[1, 0]
    z = np.column_stack([cols[f"z_{j + 1}"] for j in range(n + 1)])
    dz = np.linalg.norm(z - z[-1], axis=1)
    keep = dz > 0
    if np.any(keep):
        ax.semilogy(tau[keep], dz[keep], color="C2")
    ax.set_xlabel("tau")
    ax.set_ylabel("|z - z_final|")

    ax = axes[1, 1]
    ax.plot(cols["t"], cols["lambda"] ** 2, color="C4")
    ax.set_xlabel("t")
    ax.set_ylabel("lambda^2")
    if title:
        fig.suptitle(title)
    _save(fig, path)
    plt.close(fig)


def plot_shape(basis, rho, origin, path, title: str = ""):
    """Cross-section (n = 2: equatorial and meridional) or outline (n = 1) of a graph."""
    plt = _style()
    fig, ax = plt.subplots(figsize=(4, 4), constrained_layout=True)
    th = np.linspace(0.0, 2.0 * np.pi, 721)
    if basis.n == 1:
        r = basis.evaluate_angles(rho, th)
        ax.plot(origin[0] + r * np.cos(th), origin[1] + r * np.sin(th), color="C0")
    else:
        pts_eq = np.column_stack([np.cos(th), np.sin(th), np.zeros_like(th)])
        pts_mer = np.column_stack([np.sin(th), np.zeros_like(th), np.cos(th)])
        r_eq = basis.evaluate(rho, pts_eq)
        r_mer = basis.evaluate(rho, pts_mer)
        ax.plot(origin[0] + r_eq * pts_eq[:, 0], origin[1] + r_eq * pts_eq[:, 1],
                label="x-y section")
        ax.plot(origin[0] + r_mer * pts_mer[:, 0], origin[2] + r_mer * pts_mer[:, 2],
                label="x-z section")
        ax.legend(frameon=False, loc="upper right")
    ax.set_aspect("equal")
    if title:
        ax.set_title(title)
    _save(fig, path)
    plt.close(fig)
