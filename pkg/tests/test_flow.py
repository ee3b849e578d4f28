"""Time stepping in rescaled and physical variables."""
import numpy as np
import pytest
from numpy.testing import assert_allclose

from mcflow.flow import (IMEXBDF2, FlowState, StepControl, StepSizeError, estimate_collapse,
                         run_physical, run_rescaled, step_physical, step_rescaled)

from conftest import basis, physical_run, rescaled_run, unit_radius, zonal


def sphere_state(B, a=None):
    n = B.n
    return FlowState(0.0, 0.0, 1.0, float(n if a is None else a), np.zeros(n + 1),
                     np.zeros(B.size))


# ---------------------------------------------------------------------------
# controls and the generic stepper


@pytest.mark.parametrize("kw", [dict(dtau=0.0), dict(lambda_min=-1.0), dict(safety=1.5)])
def test_step_control_validation(kw):
    with pytest.raises(ValueError):
        StepControl(**kw)


def test_stepper_on_stiff_forced_problem():
    """``u' = -50 (u - sin s) + cos s``, ``s' = 1``; exact ``u = sin s`` from ``u(0) = 0``."""

    def rhs(v):
        return np.array([-50.0 * (v[0] - np.sin(v[1])) + np.cos(v[1]), 1.0])

    def stiff(v):
        return np.array([-50.0, 0.0])

    ctrl = StepControl(dtau=1e-3, tol_rel=1e-8, tol_abs=1e-10)
    integ = IMEXBDF2(rhs, stiff, [slice(0, 1), slice(1, 2)], ctrl, [0.0, 0.0])
    while integ.u[1] < 2.0:
        integ.step()
    assert abs(integ.u[0] - np.sin(integ.u[1])) < 1e-6
    assert integ.accepted > 10


def test_stepper_rejects_then_recovers():
    ctrl = StepControl(dtau=10.0, tol_rel=1e-8, tol_abs=1e-12)
    integ = IMEXBDF2(lambda v: -v**3, lambda v: np.zeros(1), [slice(0, 1)], ctrl, [1.0])
    h = integ.step()
    assert integ.rejected > 0 and h < 10.0
    # u' = -u^3  =>  u = 1/sqrt(1 + 2 t)
    assert integ.u[0] == pytest.approx(1 / np.sqrt(1 + 2 * h), rel=1e-6)


def test_stepper_minimum_step():
    ctrl = StepControl(dtau=1e-3, dtau_min=1e-2)
    integ = IMEXBDF2(lambda v: -v, lambda v: np.zeros(1), [slice(0, 1)], ctrl, [1.0])
    with pytest.raises(StepSizeError):
        integ.step()


# ---------------------------------------------------------------------------
# rescaled flow


@pytest.mark.parametrize("n", [1, 2])
def test_sphere_is_static_in_rescaled_variables(n):
    B = basis(n, 8)
    traj = run_rescaled(sphere_state(B), StepControl(), B, 2 if n == 1 else 3, 1.0, cadence=0.25)
    assert traj.guard is None
    s = traj.states[-1]
    assert s.tau == pytest.approx(1.0)
    assert s.a == pytest.approx(n, rel=1e-13)
    assert_allclose(s.xi, 0.0, atol=0)
    assert_allclose(s.z, 0.0, atol=0)
    assert s.lam == pytest.approx(np.exp(-n), rel=1e-9)
    # local error control: the accumulated error in t is about steps * tol_rel
    assert s.t == pytest.approx((1 - np.exp(-2 * n)) / (2 * n), rel=2e-5)


def test_single_step_api():
    B = basis(2, 8)
    s0 = FlowState(0.0, 0.0, 1.0, 2.0, np.zeros(3), zonal(B, 2, 1e-3))
    s1, h, h_next = step_rescaled(s0, StepControl(dtau=1e-3), 3, B)
    assert s1.tau == pytest.approx(h) and h > 0 and h_next > 0
    assert abs(s1.xi[B.index(2, 0)]) < 1e-3


def test_linear_regime_decay():
    """Tiny degree-2 seed decays like ``exp(-2 tau)`` (multiplier ``(a/n)(6 - 4)`` at ``a = 2``)."""
    traj = rescaled_run(2, 8, 2, 1e-4, 2.0)
    tau = traj.series("tau")
    H0 = traj.series("H2")
    expected = H0[0] * np.exp(-2.0 * tau)
    assert_allclose(H0, expected, rtol=1e-2)


def test_rescaled_bookkeeping():
    traj = rescaled_run(2, 8, 2, 1e-4, 2.0)
    tau = traj.series("tau")
    lam = traj.series("lam")
    a = traj.series("a")
    # d log(lam)/d tau = -a and dt/dtau = lam^2; the error in t is the per-step
    # tolerance accumulated over several hundred steps
    assert_allclose(np.log(lam), -2.0 * tau, rtol=1e-6, atol=1e-9)
    t = traj.series("t")
    assert_allclose(t, (1 - np.exp(-2 * a * tau)) / (2 * a), rtol=2e-5)
    # one sample at the first step past each multiple of the cadence
    assert tau.size == 41 and tau[-1] == pytest.approx(2.0, abs=1e-13)
    assert np.all(np.floor(tau[1:-1] / 0.05 + 1e-9) == np.arange(1, 40))
    assert max(traj.series("orth_residual")) < 1e-10


def test_rescaled_guard_on_large_data():
    B = basis(2, 8)
    init = FlowState(0.0, 0.0, 1.0, 2.0, np.zeros(3), zonal(B, 2, 2.0))
    traj = run_rescaled(init, StepControl(), B, 3, 1.0)
    assert traj.guard is not None and "SmallnessError" in traj.guard
    assert traj.records == []


def test_rescaled_step_budget():
    B = basis(1, 8)
    traj = run_rescaled(sphere_state(B), StepControl(max_steps=3), B, 2, 5.0)
    assert traj.guard is not None and "budget" in traj.guard
    assert traj.steps == 3


# ---------------------------------------------------------------------------
# physical flow


@pytest.mark.parametrize("n", [1, 2])
def test_single_physical_step_on_sphere(n):
    """``R' = -n/R`` so ``R(t) = sqrt(1 - 2 n t)``; one step is second order in ``dt`` locally."""
    B = basis(n, 6)
    errs = []
    for dt in (1e-3, 5e-4):
        r = step_physical(unit_radius(B), dt, B)[0] / np.sqrt(B.area)
        errs.append(abs(r - np.sqrt(1 - 2 * n * dt)))
    assert errs[1] < 1e-6
    assert 3.5 < errs[0] / errs[1] < 4.5


def test_physical_step_rejects_nonpositive_radius():
    B = basis(1, 6)
    with pytest.raises(ValueError):
        step_physical(-unit_radius(B), 1e-3, B)


def test_physical_run_of_sphere():
    traj = physical_run(1, 8, 0, 0.0, 0.05, 1e-8, 0.05, False)
    assert traj.guard is None
    lam = traj.series("lam")
    t = traj.series("t")
    # lam is the sphere radius itself
    assert_allclose(lam**2, 1 - 2 * t, atol=5e-6)
    assert_allclose(traj.series("a"), 1.0, rtol=1e-4)
    assert lam[-1] < 0.05 <= lam[-2]


def test_physical_scaling_symmetry():
    """Doubling the initial radius multiplies the collapse time by four.

    ``lam`` starts at 1 in both runs, so the scale parameter drops by four.
    """
    B = basis(1, 8)
    ctrl = StepControl(lambda_min=0.1)
    t1 = run_physical(unit_radius(B), ctrl, B, 2, cadence=0.1, with_ratios=False)
    t2 = run_physical(2 * unit_radius(B), StepControl(lambda_min=0.2), B, 2, cadence=0.1,
                      with_ratios=False)
    f1 = estimate_collapse(t1.series("t"), t1.series("lam"))
    f2 = estimate_collapse(t2.series("t"), t2.series("lam"))
    assert f2.t_star == pytest.approx(4 * f1.t_star, rel=1e-5)
    assert f2.a_star == pytest.approx(f1.a_star / 4, rel=1e-4)


def test_physical_run_guard():
    B = basis(1, 6)
    traj = run_physical(-unit_radius(B), StepControl(), B, 2)
    assert traj.guard is not None and traj.records == []


# ---------------------------------------------------------------------------
# collapse extrapolation


def test_estimate_collapse_exact_data():
    t = np.linspace(0.0, 0.2, 30)
    lam = np.sqrt(2 * 1.5 * (0.3 - t))
    fit = estimate_collapse(t, lam)
    assert fit.t_star == pytest.approx(0.3, rel=1e-12)
    assert fit.a_star == pytest.approx(1.5, rel=1e-12)
    assert fit.residual < 1e-12
    assert estimate_collapse(t, lam, tail=10).t_star == pytest.approx(0.3, rel=1e-12)


def test_estimate_collapse_input_checks():
    t = np.linspace(0, 1, 9)
    with pytest.raises(ValueError):
        estimate_collapse(t, 2 - t)
    t = np.linspace(0, 1, 12)
    with pytest.raises(ValueError):
        estimate_collapse(t, 1 + t)
