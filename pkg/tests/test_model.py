from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from augsync import cases
from augsync.devices import ClassicalSgPi, ConstPqLoad, FluxDecaySg, InverterPq
from augsync.errors import SingularAlgebraicJacobian, StructuralError
from augsync.model import (Branch, PowerSystem, SystemState, build_admittance, eval_f, eval_g,
                           eval_h, eval_jacobians, eval_reduced_jacobian, factor_dgdz)
from augsync.simulate import embedded_rhs, project_algebraic

from conftest import random_compatible_states


def _complex_ybus(rows, n):
    # independent oracle: y = 1 / (r + jx), pi model with total line charging b
    Y = np.zeros((n, n), complex)
    for i, j, r, x, b in rows:
        y = 1.0 / complex(r, x)
        Y[i - 1, i - 1] += y + 0.5j * b
        Y[j - 1, j - 1] += y + 0.5j * b
        Y[i - 1, j - 1] -= y
        Y[j - 1, i - 1] -= y
    return Y


class TestAdmittance:
    def test_two_bus_line_matches_complex_oracle(self):
        Yb = build_admittance([Branch.from_impedance(1, 2, 0.01, 0.1, shunt_b=0.02)], 2)
        np.testing.assert_allclose(Yb.Y, _complex_ybus([(1, 2, 0.01, 0.1, 0.02)], 2), atol=1e-12)

    def test_symmetric_and_rows_sum_to_shunts(self):
        rows = [(1, 2, 0.0, 0.1, 0.0), (2, 3, 0.02, 0.2, 0.1), (3, 1, 0.0, 0.3, 0.0)]
        Yb = build_admittance([Branch.from_impedance(i, j, r, x, b) for i, j, r, x, b in rows], 3)
        np.testing.assert_allclose(Yb.G, Yb.G.T)
        np.testing.assert_allclose(Yb.B, Yb.B.T)
        # each row sums to the shunt admittance attached at that bus
        np.testing.assert_allclose(Yb.Y.sum(axis=1), [0, 0.05j, 0.05j], atol=1e-12)

    def test_parallel_branches_are_summed(self):
        one = build_admittance([Branch.from_impedance(1, 2, 0.0, 0.2)] * 2, 2)
        half = build_admittance([Branch.from_impedance(1, 2, 0.0, 0.1)], 2)
        np.testing.assert_allclose(one.Y, half.Y)

    def test_invalid_bus_id(self):
        with pytest.raises(StructuralError):
            build_admittance([Branch.from_impedance(1, 3, 0.0, 0.1)], 2)

    def test_self_loop_rejected(self):
        with pytest.raises(StructuralError):
            Branch(1, 1, 0.0, -10.0)


class TestStructure:
    def test_ieee9_dimensions(self, ieee9):
        assert (ieee9.n, ieee9.n1, ieee9.n2, ieee9.m) == (8, 3, 5, 18)
        assert ieee9.x_names[0] == "ClassicalSgPi.1.zeta"

    def test_state_index_aliases(self, ieee9):
        assert ieee9.state_index("zeta") == 0
        assert ieee9.state_index("delta1") == 2
        assert ieee9.state_index("delta2") == 4
        assert ieee9.state_index("FluxDecaySg.2.Eq_prime") == 5
        with pytest.raises(StructuralError):
            ieee9.state_index("delta")  # ambiguous
        with pytest.raises(StructuralError):
            ieee9.state_index("nope")

    def test_device_on_missing_bus(self):
        with pytest.raises(StructuralError):
            PowerSystem(2, [Branch.from_impedance(1, 2, 0, 0.1)], [(3, ConstPqLoad(1, 0))])

    @pytest.mark.parametrize("kw", [dict(M=0.0), dict(D=-1.0), dict(E=0.0), dict(k1=-0.1)])
    def test_classical_parameter_checks(self, kw):
        base = dict(M=0.075, D=0.032, E=1.0, x_d_prime=0.061, P_g0=0.7, k1=0.1, k2=0.72)
        with pytest.raises(StructuralError):
            ClassicalSgPi(**(base | kw))

    def test_flux_decay_requires_xd_above_xd_prime(self):
        with pytest.raises(StructuralError):
            FluxDecaySg(M=0.02, D=0.003, T_d0_prime=1, x_q=0.2, x_d=0.1, x_d_prime=0.12, P_g=1, E_f=1)

    def test_inverter_positive_time_constants(self):
        with pytest.raises(StructuralError):
            InverterPq(tau1=0, tau2=1, d1=1, d2=1, P_ref=0, Q_ref=0, theta_ref=0, V_ref=1)


class TestEvaluation:
    def test_g_at_equilibrium_vanishes(self, ieee9, x0):
        assert np.max(np.abs(eval_g(ieee9, x0.state.x2(ieee9), x0.state.z))) < 1e-10
        f1, f2 = eval_f(ieee9, x0.state)
        assert np.max(np.abs(f1)) < 1e-10 and np.max(np.abs(f2)) < 1e-10

    def test_g_two_bus_hand_computation(self):
        # lossless line x = 0.1, inverter injecting (P, Q) at bus 1, load at bus 2
        inv = InverterPq(tau1=1, tau2=1, d1=1, d2=1, P_ref=0, Q_ref=0, theta_ref=0, V_ref=1)
        s = PowerSystem(2, [Branch.from_impedance(1, 2, 0.0, 0.1)],
                        [(1, inv), (2, ConstPqLoad(0.4, 0.1))])
        x = np.array([0.5, 0.2])
        th1, V1, th2, V2 = 0.1, 1.02, -0.05, 0.97
        z = np.array([th1, V1, th2, V2])
        b = 10.0
        p12 = b * V1 * V2 * np.sin(th1 - th2)
        q12 = b * V1 * V1 - b * V1 * V2 * np.cos(th1 - th2)
        p21 = -p12
        q21 = b * V2 * V2 - b * V1 * V2 * np.cos(th1 - th2)
        expect = [0.5 - p12, 0.2 - q12, -0.4 - p21, -0.1 - q21]
        np.testing.assert_allclose(s.g(x, z), expect, atol=1e-12)

    def test_h_equals_time_derivative_of_projected_z(self, ieee9, x0, rng):
        # advance x by eps f and re-project; (z(eps) - z(-eps)) / 2 eps ~ h
        s = random_compatible_states(ieee9, x0.state, 1, 0.02, rng)[0]
        f = ieee9.f(s.x, s.z)
        eps = 1e-6
        zp = project_algebraic(ieee9, (s.x + eps * f)[ieee9.x2_index], s.z, g_tol=1e-14)
        zm = project_algebraic(ieee9, (s.x - eps * f)[ieee9.x2_index], s.z, g_tol=1e-14)
        np.testing.assert_allclose(eval_h(ieee9, s), (zp - zm) / (2 * eps), atol=1e-7)

    def test_reduced_jacobian_matches_embedded_fd(self, ieee9, x0, rng):
        s = random_compatible_states(ieee9, x0.state, 1, 0.02, rng)[0]
        J = eval_reduced_jacobian(ieee9, s)
        eps = 1e-6
        Jfd = np.zeros_like(J)
        for i in range(ieee9.n):
            dx = np.zeros(ieee9.n)
            dx[i] = eps
            zp = project_algebraic(ieee9, (s.x + dx)[ieee9.x2_index], s.z, g_tol=1e-14)
            zm = project_algebraic(ieee9, (s.x - dx)[ieee9.x2_index], s.z, g_tol=1e-14)
            Jfd[:, i] = (ieee9.f(s.x + dx, zp) - ieee9.f(s.x - dx, zm)) / (2 * eps)
        np.testing.assert_allclose(J, Jfd, atol=1e-6 * max(1.0, np.abs(J).max()))

    def test_equilibrium_has_zero_eigenvalue(self, ieee9, x0):
        ev = np.linalg.eigvals(eval_reduced_jacobian(ieee9, x0.state))
        assert np.min(np.abs(ev)) < 1e-6

    def test_singular_dgdz_raises(self):
        with pytest.raises(SingularAlgebraicJacobian):
            factor_dgdz(np.array([[1.0, 2.0], [2.0, 4.0]]))

    def test_state_is_immutable(self, x0):
        with pytest.raises(ValueError):
            x0.state.x[0] = 1.0

    def test_embedded_rhs_consistent(self, ieee9, x0, rng):
        s = random_compatible_states(ieee9, x0.state, 1, 0.02, rng)[0]
        f, h = embedded_rhs(ieee9, s.x, s.z)
        np.testing.assert_allclose(f, ieee9.f(s.x, s.z))
        np.testing.assert_allclose(h, eval_h(ieee9, s))


SYSTEMS = {
    "ieee9": cases.ieee9,
    "smsl": cases.smsl,
    "smib_flux": cases.smib_flux_decay,
    "smib_inv": cases.smib_inverter,
    "inverters": cases.inverter_network,
}


def _fd_blocks(system, x, z, eps=1e-6):
    n, m = system.n, system.m
    dfdx, dfdz = np.zeros((n, n)), np.zeros((n, m))
    dgdx, dgdz = np.zeros((m, n)), np.zeros((m, m))
    for i in range(n):
        d = np.zeros(n)
        d[i] = eps
        dfdx[:, i] = (system.f(x + d, z) - system.f(x - d, z)) / (2 * eps)
        dgdx[:, i] = (system.g(x + d, z) - system.g(x - d, z)) / (2 * eps)
    for i in range(m):
        d = np.zeros(m)
        d[i] = eps
        dfdz[:, i] = (system.f(x, z + d) - system.f(x, z - d)) / (2 * eps)
        dgdz[:, i] = (system.g(x, z + d) - system.g(x, z - d)) / (2 * eps)
    return dfdx, dfdz, dgdx, dgdz


def _rel(a, b):
    return np.max(np.abs(a - b)) / max(1.0, np.max(np.abs(b)))


@pytest.mark.parametrize("name", sorted(SYSTEMS))
def test_jacobians_match_finite_differences(name):
    system = SYSTEMS[name]()
    rng = np.random.default_rng(7)
    base = system.flat_start()
    for _ in range(5):
        x = base.x + rng.uniform(-0.2, 0.2, system.n)
        z = base.z + rng.uniform(-0.1, 0.1, system.m)
        jac = system.jacobians(x, z)
        fd = _fd_blocks(system, x, z)
        for a, b in zip((jac.df_dx, jac.df_dz, jac.dg_dx, jac.dg_dz), fd):
            assert _rel(a, b) <= 1e-5
        np.testing.assert_array_equal(jac.dg_dx2, jac.dg_dx[:, system.x2_index])


@settings(max_examples=30, deadline=None)
@given(st.floats(-0.5, 0.5), st.floats(0.8, 1.2), st.floats(-1, 1), st.floats(0.5, 1.5))
def test_flux_decay_det_closed_form(theta, V, delta, Eq):
    dev = FluxDecaySg(M=0.02, D=0.003, T_d0_prime=1, x_q=0.2, x_d=0.896, x_d_prime=0.12,
                      P_g=1.63, E_f=1.5)
    dx, _ = dev.dinjection(np.array([0.0, delta, Eq]), theta, V)
    assert abs(np.linalg.det(dx[:, 1:]) - dev.det_dg_dx2(delta, Eq, theta, V)) <= 1e-8 * max(
        1.0, abs(dev.det_dg_dx2(delta, Eq, theta, V)))


def test_eval_jacobians_wrapper(ieee9, x0):
    jac = eval_jacobians(ieee9, x0.state)
    assert jac.df_dx.shape == (8, 8) and jac.dg_dx2.shape == (18, 5) and jac.dg_dz.shape == (18, 18)
    assert isinstance(x0.state, SystemState)
