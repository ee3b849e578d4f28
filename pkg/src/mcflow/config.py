"""Line-based run configuration.

Grammar: one ``key = value`` per line, ``#`` starts a comment, blank lines are
ignored. Perturbation modes are given as ``mode.<degree>.<order> = <amplitude>``
(amplitude of the unit-normalized basis function) and vectors as
comma-separated reals. Example::

    mode = rescaled
    n = 2
    L_max = 16
    mode.2.0 = 0.02
    tau_horizon = 6
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .curvature import default_k


class ConfigError(ValueError):
    """Invalid configuration text; the message names the offending line(s)."""


MODES = ("physical", "rescaled", "verify")


def _int(s):
    v = float(s)
    if not v.is_integer():
        raise ValueError(f"expected an integer, got {s!r}")
    return int(v)


def _float(s):
    v = float(s)
    if not math.isfinite(v):
        raise ValueError(f"expected a finite real, got {s!r}")
    return v


def _vector(s):
    return tuple(_float(p) for p in s.split(","))


def _mode(s):
    if s not in MODES:
        raise ValueError(f"mode must be one of {', '.join(MODES)}, got {s!r}")
    return s


def _str(s):
    if not s:
        raise ValueError("empty value")
    return s


SCALARS = {
    "mode": _mode, "n": _int, "L_max": _int, "oversample": _float, "k": _int,
    "seed": _int, "random_band": _int, "random_amplitude": _float, "radius": _float,
    "z0": _vector, "tol_rel": _float, "tol_abs": _float, "safety": _float,
    "dtau0": _float, "tau_horizon": _float, "lambda_min": _float, "cadence": _float,
    "out": _str,
}


@dataclass(frozen=True)
class RunConfig:
    mode: str
    n: int
    L_max: int
    oversample: float = 2.0
    k: int | None = None
    modes: tuple = ()                 # (degree, order, amplitude) triples
    seed: int | None = None
    random_band: int | None = None
    random_amplitude: float = 0.0
    radius: float = 1.0
    z0: tuple | None = None
    tol_rel: float = 1e-8
    tol_abs: float = 1e-12
    safety: float = 0.8
    dtau0: float = 1e-3
    tau_horizon: float = 6.0
    lambda_min: float = 0.05
    cadence: float = 0.05
    out: str = "out"
    lines: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def lyapunov_index(self) -> int:
        return self.k if self.k is not None else default_k(self.n)

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, seed=seed)


def parse_config(text: str) -> RunConfig:
    """Parse and validate configuration text; raises :class:`ConfigError`."""
    values, lines, modes = {}, {}, []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, val = (p.strip() for p in line.split("=", 1))
        if key in lines:
            raise ConfigError(f"line {lineno}: duplicate key {key!r} (first set on line {lines[key]})")
        lines[key] = lineno
        if key.startswith("mode."):
            parts = key.split(".")
            try:
                if len(parts) != 3:
                    raise ValueError("mode keys look like mode.<degree>.<order>")
                modes.append((_int(parts[1]), _int(parts[2]), _float(val), lineno))
            except ValueError as exc:
                raise ConfigError(f"line {lineno}: {exc}") from None
            continue
        if key not in SCALARS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            values[key] = SCALARS[key](val)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: {key}: {exc}") from None

    for req in ("mode", "n", "L_max"):
        if req not in values:
            raise ConfigError(f"missing required key {req!r}")
    cfg = RunConfig(modes=tuple(m[:3] for m in modes), lines=lines, **values)
    _validate(cfg, {m[:2]: m[3] for m in modes})
    return cfg


def _validate(cfg: RunConfig, mode_lines: dict):
    L = cfg.lines

    def fail(key, msg):
        where = f"line {L[key]}: " if key in L else ""
        raise ConfigError(where + msg)

    if cfg.n not in (1, 2):
        fail("n", f"n must be 1 or 2, got {cfg.n}")
    if cfg.L_max < 2:
        fail("L_max", "L_max must be at least 2")
    if cfg.oversample < 1:
        fail("oversample", "oversample must be at least 1")
    if cfg.k is not None and (cfg.k < 2 or not cfg.k > cfg.n / 2 + 1):
        fail("k", f"k={cfg.k} must be an integer > n/2 + 1")
    for (l, order), lineno in mode_lines.items():
        if not 0 <= l <= cfg.L_max:
            raise ConfigError(f"line {lineno}: degree {l} outside 0..L_max={cfg.L_max}")
        ok = order in (0, 1) and (l > 0 or order == 0) if cfg.n == 1 else abs(order) <= l
        if not ok:
            raise ConfigError(f"line {lineno}: order {order} invalid for degree {l}")
    if cfg.random_band is not None or cfg.random_amplitude:
        if cfg.seed is None:
            fail("random_band" if "random_band" in L else "random_amplitude",
                 "a seed is required when random modes are requested")
        band = cfg.random_band if cfg.random_band is not None else cfg.L_max
        if not 2 <= band <= cfg.L_max:
            fail("random_band", f"random_band must lie in 2..L_max, got {band}")
        if cfg.random_amplitude < 0:
            fail("random_amplitude", "random_amplitude must be non-negative")
    if cfg.z0 is not None and len(cfg.z0) != cfg.n + 1:
        fail("z0", f"z0 needs {cfg.n + 1} components")
    positive = ("radius", "tol_rel", "tol_abs", "safety", "dtau0", "tau_horizon",
                "lambda_min", "cadence")
    for key in positive:
        if not getattr(cfg, key) > 0:
            fail(key, f"{key} must be positive")
    if cfg.safety > 1:
        fail("safety", "safety must not exceed 1")
    if cfg.mode != "verify":
        _amplitude_guard(cfg, mode_lines)


def initial_radius(cfg: RunConfig, basis) -> np.ndarray:
    """Coefficients of the initial radius function over ``z0``."""
    c = np.zeros(basis.size)
    c[0] = cfg.radius * np.sqrt(basis.area)
    for l, order, amp in cfg.modes:
        c[basis.index(l, order)] += amp
    if cfg.random_amplitude:
        rng = np.random.default_rng(cfg.seed)
        band = cfg.random_band if cfg.random_band is not None else cfg.L_max
        sel = (basis.degrees >= 2) & (basis.degrees <= band)
        r = np.zeros(basis.size)
        r[sel] = rng.standard_normal(int(sel.sum())) / (1.0 + basis.degrees[sel]) ** 2
        peak = np.max(np.abs(basis.synthesize(r)))
        if peak > 0:
            c += cfg.random_amplitude * r / peak
    return c


def _amplitude_guard(cfg: RunConfig, mode_lines: dict):
    from .sphere import BasisTables

    B = BasisTables(cfg.n, cfg.L_max, cfg.oversample)
    rho = B.synthesize(initial_radius(cfg, B))
    mean = B.integrate(rho) / B.area
    if not mean > 0:
        raise ConfigError("initial mean radius is not positive")
    # a0 = n/mean^2, so sqrt(n/a0)/2 = mean/2
    sup = float(np.max(np.abs(rho - mean)))
    if not sup < 0.5 * mean:
        where = ", ".join(str(v) for v in sorted(mode_lines.values()))
        if cfg.random_amplitude:
            where = ", ".join(filter(None, [where, str(cfg.lines.get("random_amplitude", ""))]))
        raise ConfigError(
            f"line(s) {where}: initial perturbation sup {sup:.4g} is not below "
            f"sqrt(n/a0)/2 = {0.5 * mean:.4g}")
