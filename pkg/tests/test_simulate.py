from __future__ import annotations

import numpy as np
import pytest

from augsync import cases
from augsync.equilibrium import solve_equilibrium
from augsync.errors import WindowTooLong
from augsync.model import SystemState
from augsync.simulate import (DomainBox, IntegratorConfig, OutsideDomain, Termination, check_property1,
                              check_property2, integrate, project_algebraic)


@pytest.fixture(scope="module")
def smsl_run(smsl, smsl_eq):
    x = smsl_eq.state.x.copy()
    x[1] += 0.2   # omega kick
    x[0] += 0.05  # zeta offset
    return integrate(smsl, SystemState(x, smsl_eq.state.z), IntegratorConfig(t_end=60.0))


def test_equilibrium_is_stationary(ieee9, x0):
    traj = integrate(ieee9, x0.state, IntegratorConfig(t_end=5.0))
    assert traj.termination is Termination.reached_t_end
    assert np.max(np.abs(traj.X - x0.state.x)) < 1e-9
    assert np.max(traj.zdot_norm) < 1e-9


def test_algebraic_constraint_is_held(smsl, smsl_run):
    gmax = max(np.max(np.abs(smsl.g(x, z))) for x, z in zip(smsl_run.X, smsl_run.Z))
    assert gmax <= 1e-9


def test_trajectory_channels(smsl, smsl_run):
    assert smsl_run.termination is Termination.reached_t_end
    assert smsl_run.times[0] == 0.0 and smsl_run.times[-1] == pytest.approx(60.0)
    assert np.all(np.diff(smsl_run.times) > 0)
    assert smsl_run.X.shape[1] == smsl.n and smsl_run.Z.shape[1] == smsl.m
    k = len(smsl_run) // 2
    f = smsl.f(smsl_run.X[k], smsl_run.Z[k])
    assert smsl_run.f_norm[k] == pytest.approx(np.linalg.norm(f))
    assert np.all(smsl_run.det_sign != 0)


def test_rk45_and_dop853_agree(smsl, smsl_eq):
    x = smsl_eq.state.x.copy()
    x[1] += 0.1
    init = SystemState(x, smsl_eq.state.z)
    a = integrate(smsl, init, IntegratorConfig(t_end=5.0))
    b = integrate(smsl, init, IntegratorConfig(t_end=5.0, method="DOP853"))
    assert np.max(np.abs(a.final.x - b.final.x)) < 1e-6


def test_outside_domain_rejected(ieee9, x0):
    x = x0.state.x.copy()
    z = np.array(x0.state.z)
    z[1] = 0.2  # V1 below the box
    with pytest.raises(OutsideDomain):
        integrate(ieee9, SystemState(x, z), IntegratorConfig(t_end=1.0))


def test_leaving_domain_terminates(smsl, smsl_eq):
    x = smsl_eq.state.x.copy()
    x[1] += 10.0
    box = DomainBox.default(smsl, theta=0.5)
    traj = integrate(smsl, SystemState(x, smsl_eq.state.z), IntegratorConfig(t_end=20.0), box)
    assert traj.termination is Termination.left_domain
    p1 = check_property1(traj, domain=box)
    assert not p1.passed


def test_property_checks_on_converging_run(smsl, smsl_run):
    p1 = check_property1(smsl_run, 1e-4)
    assert p1.passed and p1.window == pytest.approx(12.0)
    p2 = check_property2(smsl_run, smsl, 1e-3)
    assert p2.passed and p2.stage_a and p2.stage_b
    assert p2.distance < 1e-3


def test_property1_fails_on_short_run(smsl, smsl_eq):
    x = smsl_eq.state.x.copy()
    x[1] += 0.2
    traj = integrate(smsl, SystemState(x, smsl_eq.state.z), IntegratorConfig(t_end=2.0))
    assert not check_property1(traj, 1e-4).passed


def test_window_too_long(smsl_run):
    with pytest.raises(WindowTooLong):
        check_property1(smsl_run, window=1000.0)


def test_integrator_config_validation():
    with pytest.raises(ValueError):
        IntegratorConfig(t_end=0.0)
    with pytest.raises(ValueError):
        IntegratorConfig(method="Euler")
    with pytest.raises(ValueError):
        IntegratorConfig(reprojection_interval=0)


def test_projection_recovers_z(ieee9, x0, rng):
    z = project_algebraic(ieee9, x0.state.x2(ieee9), x0.state.z + rng.normal(0, 0.01, ieee9.m))
    np.testing.assert_allclose(z, x0.state.z, atol=1e-9)


def test_infinite_bus_voltage_fixed():
    s = cases.smib_flux_decay()
    eq = solve_equilibrium(s, None, None)
    x = eq.state.x.copy()
    x[0] += 0.1
    traj = integrate(s, SystemState(x, eq.state.z), IntegratorConfig(t_end=5.0))
    np.testing.assert_allclose(traj.Z[:, 2:], np.tile([0.0, 1.0], (len(traj), 1)), atol=1e-12)
