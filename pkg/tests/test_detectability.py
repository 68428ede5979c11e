from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from augsync import cases
from augsync.detectability import (DetectabilityStatus, NonDegeneracyVerdict, assess_detectability,
                                   certify_device, check_nondegeneracy, degeneration_diagnostics_sg,
                                   lemma1_residual, modularity_violations, verify_lemma1)
from augsync.devices import ClassicalSgPi, ConstPqLoad, FluxDecaySg, InverterPq
from augsync.equilibrium import solve_equilibrium
from augsync.errors import NotModular, RankDeficiency, UnknownDeviceKind
from augsync.model import Branch, PowerSystem, SystemState
from augsync.simulate import IntegratorConfig, integrate, project_state

from conftest import random_compatible_states

SG = dict(M=0.02, D=0.003, T_d0_prime=1.0, x_q=0.20, x_d=0.896, x_d_prime=0.12, P_g=1.63, E_f=1.5)


def _kick(system, eq, name, dv):
    x = eq.state.x.copy()
    x[system.state_index(name)] += dv
    return project_state(system, SystemState(x, eq.state.z))


class TestNonDegeneracy:
    def test_inverter_network_block_is_identity(self):
        s = cases.inverter_network()
        st_ = s.flat_start()
        jac = s.jacobians(st_.x, st_.z)
        for (bus, dev), sl in zip(s.devices, s.device_slices):
            if isinstance(dev, InverterPq):
                rows = jac.dg_dx[2 * (bus - 1):2 * bus, sl]
                np.testing.assert_array_equal(rows, np.eye(2))

    def test_inverter_trajectory_non_degenerate(self):
        s = cases.inverter_network()
        eq = solve_equilibrium(s)
        traj = integrate(s, _kick(s, eq, "InverterPq.1.P", 0.1), IntegratorConfig(t_end=5.0))
        rep = check_nondegeneracy(s, traj)
        assert rep.verdict is NonDegeneracyVerdict.non_degenerate
        assert np.all(rep.ranks == s.n2)

    def test_flux_decay_degenerate_sample_detected(self):
        s = cases.smib_flux_decay()
        eq = solve_equilibrium(s)
        dev = s.devices[0][1]
        th, V = eq.state.z[0], eq.state.z[1]
        delta = eq.state.x[s.state_index("delta")]
        bad = eq.state.x.copy()
        bad[s.state_index("Eq_prime")] = -(dev.x_d_prime - dev.x_q) / dev.x_q * V * np.cos(delta - th)
        states = [eq.state, SystemState(bad, eq.state.z), eq.state]
        rep = check_nondegeneracy(s, states)
        assert rep.verdict is NonDegeneracyVerdict.degenerate_rank
        assert rep.first_bad_sample == 1
        assert rep.ranks[1] < s.n2 and not np.isfinite(rep.M_hat)

    def test_ieee9_trajectory_reports_bound(self, ieee9, x0):
        traj = integrate(ieee9, _kick(ieee9, x0, "zeta", 0.05), IntegratorConfig(t_end=10.0))
        rep = check_nondegeneracy(ieee9, traj)
        assert rep.verdict is NonDegeneracyVerdict.non_degenerate
        assert np.isfinite(rep.M_hat) and rep.M_hat >= rep.bounds.max() - 1e-15
        assert rep.as_dict()["min_rank"] == ieee9.n2


class TestLemma1:
    def test_equilibrium_residual_is_zero(self, ieee9, x0):
        assert verify_lemma1(ieee9, [x0.state] * 3) <= 1e-12

    def test_pointwise_identity_random_states(self, ieee9, x0, rng):
        states = random_compatible_states(ieee9, x0.state, 200, 0.05, rng)
        assert max(lemma1_residual(ieee9, s.x, s.z) for s in states) <= 1e-10

    def test_along_trajectory(self, ieee9, x0):
        traj = integrate(ieee9, _kick(ieee9, x0, "omega1", 0.3), IntegratorConfig(t_end=10.0))
        assert verify_lemma1(ieee9, traj) <= 1e-6

    def test_rank_deficiency_raises(self):
        s = cases.smib_flux_decay()
        eq = solve_equilibrium(s)
        dev = s.devices[0][1]
        th, V = eq.state.z[0], eq.state.z[1]
        delta = eq.state.x[s.state_index("delta")]
        bad = eq.state.x.copy()
        bad[s.state_index("Eq_prime")] = -(dev.x_d_prime - dev.x_q) / dev.x_q * V * np.cos(delta - th)
        with pytest.raises(RankDeficiency):
            verify_lemma1(s, [SystemState(bad, eq.state.z)])


class TestCertificates:
    @pytest.mark.parametrize("kind", ["FluxDecaySg", "ClassicalSgPi", "InverterPq"])
    def test_builtin_kinds_certified(self, kind):
        assert certify_device(kind).certified

    def test_inverter_has_empty_x1(self):
        assert certify_device("InverterPq").x1_empty

    def test_load_vacuous(self):
        c = certify_device(ConstPqLoad(0.1, 0.0))
        assert c.certified and c.x1_empty

    def test_user_subclass_not_certified(self):
        class MyInverter(InverterPq):
            pass

        with pytest.raises(UnknownDeviceKind):
            certify_device(MyInverter(tau1=1, tau2=1, d1=1, d2=1, P_ref=0, Q_ref=0, theta_ref=0,
                                      V_ref=1))
        with pytest.raises(UnknownDeviceKind):
            certify_device("Mystery")


class TestAssess:
    def test_ieee9_theorem3(self, ieee9):
        v = assess_detectability(ieee9)
        assert v.verdict is DetectabilityStatus.as_detectable_if_nondegenerate
        assert v.theorem == "Thm 3"

    def test_inverter_network_theorem1(self):
        assert assess_detectability(cases.inverter_network()).theorem == "Thm 1"

    def test_single_machine_theorem2(self, smsl):
        assert assess_detectability(smsl).theorem == "Thm 2"

    def test_user_device_gives_unknown(self):
        class MySg(FluxDecaySg):
            pass

        s = PowerSystem(2, [Branch.from_impedance(1, 2, 0, 0.1)],
                        [(1, MySg(**SG)), (2, ConstPqLoad(1.0, 0.2))])
        v = assess_detectability(s)
        assert v.verdict is DetectabilityStatus.unknown and v.reasons

    def test_user_certificate_accepted(self):
        class MySg(FluxDecaySg):
            certificate = certify_device("FluxDecaySg")

        s = PowerSystem(2, [Branch.from_impedance(1, 2, 0, 0.1)],
                        [(1, MySg(**SG)), (2, ConstPqLoad(1.0, 0.2))])
        assert assess_detectability(s).verdict is DetectabilityStatus.as_detectable_if_nondegenerate

    def test_non_modular_device_rejected(self):
        s = cases.ieee9()
        assert modularity_violations(s) == []
        orig = s.jacobians

        def leaky(x, z):
            # an omega row that reads a remote bus voltage
            jac = orig(x, z)
            jac.df_dz[1, -1] = 1.0
            return jac

        object.__setattr__(s, "jacobians", leaky)
        with pytest.raises(NotModular):
            assess_detectability(s)

    @settings(max_examples=10, deadline=None)
    @given(st.permutations([0, 1, 2]))
    def test_relabeling_invariant(self, perm):
        devs = [ClassicalSgPi(M=0.075, D=0.032, E=1.0, x_d_prime=0.061, P_g0=0.3, k1=0.1, k2=0.7),
                FluxDecaySg(**SG),
                InverterPq(tau1=1, tau2=1, d1=1, d2=1, P_ref=0.2, Q_ref=0, theta_ref=0, V_ref=1)]
        br = [Branch.from_impedance(1, 2, 0, 0.1), Branch.from_impedance(2, 3, 0, 0.1),
              Branch.from_impedance(3, 4, 0, 0.1)]
        base = PowerSystem(4, br, [(i + 1, d) for i, d in enumerate(devs)] + [(4, ConstPqLoad(1, 0))])
        perm_sys = PowerSystem(4, br, [(i + 1, devs[p]) for i, p in enumerate(perm)]
                               + [(4, ConstPqLoad(1, 0))])
        a, b = assess_detectability(base), assess_detectability(perm_sys)
        assert (a.verdict, a.theorem) == (b.verdict, b.theorem)


class TestDegeneration:
    def test_hand_computed_determinant(self):
        dev = FluxDecaySg(**SG)
        d = degeneration_diagnostics_sg(dev, 0.0, 1.0, 0.0, 1.0)
        # (1 / 0.12^2) ((0.12 - 0.20) / 0.20 + 1) = 41.666...
        assert d.det_value == pytest.approx(0.6 / 0.0144, rel=1e-12)
        assert not d.is_degenerate

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-1.0, 1.0), st.floats(-1.0, 1.0), st.floats(0.5, 1.5))
    def test_degenerate_output_identity(self, delta, theta, V):
        dev = FluxDecaySg(**SG)
        Eq = -(dev.x_d_prime - dev.x_q) / dev.x_q * V * np.cos(delta - theta)
        d = degeneration_diagnostics_sg(dev, delta, Eq, theta, V)
        assert d.is_degenerate and abs(d.det_value) <= 1e-8
        assert d.identity_residual[0] <= 1e-8 and d.identity_residual[1] <= 1e-8

    def test_zero_voltage_flags_assumption(self):
        d = degeneration_diagnostics_sg(FluxDecaySg(**SG), 0.3, 1.0, 0.0, 0.0)
        assert d.det_value == 0.0 and d.is_degenerate and d.assumption1_violation

    def test_determinant_matches_numeric_at_1000_states(self):
        dev = FluxDecaySg(**SG)
        rng = np.random.default_rng(3)
        worst = 0.0
        for _ in range(1000):
            delta, theta = rng.uniform(-np.pi, np.pi, 2)
            Eq, V = rng.uniform(0.3, 1.6), rng.uniform(0.5, 1.5)
            dx, _ = dev.dinjection(np.array([0.0, delta, Eq]), theta, V)
            num = np.linalg.det(dx[:, 1:])
            worst = max(worst, abs(num - dev.det_dg_dx2(delta, Eq, theta, V)) / max(1.0, abs(num)))
        assert worst <= 1e-8
