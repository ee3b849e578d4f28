"""Shared fixtures: cached bases and the longer flow runs used by several test modules."""
from functools import lru_cache

import numpy as np
import pytest

from mcflow.flow import FlowState, StepControl, run_physical, run_rescaled
from mcflow.sphere import BasisTables

ACCEPTANCE = {}


@lru_cache(maxsize=None)
def basis(n, L_max, oversample=2.0):
    return BasisTables(n, L_max, oversample)


def zonal(B, l, eps):
    c = np.zeros(B.size)
    c[B.index(l, 0)] = eps
    return c


def unit_radius(B):
    c = np.zeros(B.size)
    c[0] = np.sqrt(B.area)
    return c


@lru_cache(maxsize=None)
def rescaled_run(n, L_max, l, eps, horizon, cadence=0.05, tol_rel=1e-8):
    """Rescaled run from ``1 + eps Y_{l,0}`` (centered, ``a = n``)."""
    B = basis(n, L_max)
    k = 2 if n == 1 else 3
    init = FlowState(0.0, 0.0, 1.0, float(n), np.zeros(n + 1), zonal(B, l, eps))
    return run_rescaled(init, StepControl(tol_rel=tol_rel), B, k, horizon, cadence=cadence)


@lru_cache(maxsize=None)
def physical_run(n, L_max, l, eps, cadence=0.05, tol_rel=1e-8, lambda_min=0.05, ratios=True):
    """Physical run from ``1 + eps Y_{l,0}`` over the origin."""
    B = basis(n, L_max)
    k = 2 if n == 1 else 3
    rho0 = unit_radius(B) + (zonal(B, l, eps) if eps else 0.0)
    ctrl = StepControl(tol_rel=tol_rel, lambda_min=lambda_min)
    return run_physical(rho0, ctrl, B, k, cadence=cadence, with_ratios=ratios)


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion for the terminal summary."""

    def record(number, passed, detail):
        ACCEPTANCE[number] = (bool(passed), detail)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
