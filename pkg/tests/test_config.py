"""Configuration parsing, validation and initial surfaces."""
from pathlib import Path

import numpy as np
import pytest
from numpy.testing import assert_allclose

from mcflow.config import ConfigError, RunConfig, initial_radius, parse_config

from conftest import basis

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

BASE = """\
mode = rescaled
n = 2
L_max = 8
"""


def test_minimal_config_defaults():
    cfg = parse_config(BASE)
    assert cfg == RunConfig(mode="rescaled", n=2, L_max=8)
    assert cfg.lyapunov_index == 3
    assert cfg.with_seed(5).seed == 5
    assert cfg.lines == {"mode": 1, "n": 2, "L_max": 3}


def test_full_config():
    cfg = parse_config(BASE + """
# a comment line
k = 4                 # trailing comment
mode.2.0 = 0.02
mode.3.-1 = -0.01
z0 = 0.1, 0, -0.2
tol_rel = 1e-9
out = somewhere
""")
    assert cfg.k == 4 and cfg.lyapunov_index == 4
    assert cfg.modes == ((2, 0, 0.02), (3, -1, -0.01))
    assert cfg.z0 == (0.1, 0.0, -0.2)
    assert cfg.tol_rel == 1e-9 and cfg.out == "somewhere"


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.cfg")), ids=lambda p: p.name)
def test_shipped_configs_parse(path):
    cfg = parse_config(path.read_text())
    assert cfg.n in (1, 2)


# ---------------------------------------------------------------------------
# errors carry line numbers


@pytest.mark.parametrize("extra, fragment", [
    ("n = 3\n", "duplicate key 'n' (first set on line 2)"),
    ("colour = red\n", "line 4: unknown key 'colour'"),
    ("just words\n", "line 4: expected 'key = value'"),
    ("tol_rel = nan\n", "line 4: tol_rel"),
    ("k = 2.5\n", "line 4: k"),
    ("mode.2 = 0.1\n", "line 4: mode keys"),
    ("mode.9.0 = 0.1\n", "line 4: degree 9 outside"),
    ("mode.2.3 = 0.1\n", "line 4: order 3 invalid"),
    ("k = 2\n", "line 4: k=2 must be"),
    ("random_amplitude = 0.1\n", "line 4: a seed is required"),
    ("seed = 1\nrandom_band = 12\n", "line 5: random_band"),
    ("z0 = 1, 2\n", "line 4: z0 needs 3"),
    ("safety = 2\n", "line 4: safety"),
    ("cadence = 0\n", "line 4: cadence must be positive"),
])
def test_config_errors(extra, fragment):
    with pytest.raises(ConfigError) as exc:
        parse_config(BASE + extra)
    assert fragment in str(exc.value)


def test_missing_and_invalid_required_keys():
    with pytest.raises(ConfigError, match="missing required key 'L_max'"):
        parse_config("mode = rescaled\nn = 2\n")
    with pytest.raises(ConfigError, match="line 1: mode: mode must be one of"):
        parse_config("mode = fast\nn = 2\nL_max = 8\n")
    with pytest.raises(ConfigError, match="line 2: n must be 1 or 2"):
        parse_config("mode = rescaled\nn = 4\nL_max = 8\n")
    with pytest.raises(ConfigError, match="L_max must be at least 2"):
        parse_config("mode = rescaled\nn = 1\nL_max = 1\n")


def test_n1_order_convention():
    ok = parse_config("mode = rescaled\nn = 1\nL_max = 8\nmode.3.1 = 0.01\n")
    assert ok.modes == ((3, 1, 0.01),)
    with pytest.raises(ConfigError, match="order -1 invalid"):
        parse_config("mode = rescaled\nn = 1\nL_max = 8\nmode.3.-1 = 0.01\n")
    with pytest.raises(ConfigError, match="order 1 invalid for degree 0"):
        parse_config("mode = rescaled\nn = 1\nL_max = 8\nmode.0.1 = 0.01\n")


def test_amplitude_guard_names_the_lines():
    with pytest.raises(ConfigError) as exc:
        parse_config(BASE + "mode.2.0 = 0.9\nmode.4.2 = 0.01\n")
    msg = str(exc.value)
    assert "line(s) 4, 5" in msg and "not below" in msg
    # the guard does not apply to verify runs
    parse_config(BASE.replace("rescaled", "verify") + "mode.2.0 = 0.9\n")


# ---------------------------------------------------------------------------
# initial surfaces


def test_initial_radius_modes_and_radius():
    cfg = parse_config(BASE + "radius = 2\nmode.2.1 = 0.05\n")
    B = basis(2, 8)
    c = initial_radius(cfg, B)
    assert c[0] == pytest.approx(2 * np.sqrt(4 * np.pi))
    assert c[B.index(2, 1)] == 0.05
    assert np.count_nonzero(c) == 2


def test_random_initial_radius_is_seeded():
    text = "mode = rescaled\nn = 1\nL_max = 12\nseed = 4\nrandom_band = 6\nrandom_amplitude = 0.05\n"
    B = basis(1, 12)
    c1 = initial_radius(parse_config(text), B)
    c2 = initial_radius(parse_config(text), B)
    c3 = initial_radius(parse_config(text).with_seed(5), B)
    assert np.array_equal(c1, c2) and not np.array_equal(c1, c3)
    pert = c1.copy()
    pert[0] = 0
    assert_allclose(np.max(np.abs(B.synthesize(pert))), 0.05, rtol=1e-12)
    assert np.all(pert[(B.degrees < 2) | (B.degrees > 6)] == 0)
