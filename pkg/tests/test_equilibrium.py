from __future__ import annotations

import numpy as np
import pytest

from augsync import cases
from augsync.equilibrium import (S1_PUBLISHED, S2_PUBLISHED, continuation_values, nearest_equilibrium,
                                 solve_equilibrium, tangent_plane_field, trace_continuum)
from augsync.errors import NewtonDivergence, RankDeficientWithoutPin, StructuralError
from augsync.model import SystemState

X0_PUBLISHED = np.array([0, 0, 0.0431, 0, 0.4756, 1.0288, 0.8500, -0.0365])


def test_pinned_equilibrium_matches_published_point(x0):
    assert np.max(np.abs(x0.state.x - X0_PUBLISHED)) <= 5e-4
    assert x0.f_residual <= 1e-10 and x0.g_residual <= 1e-10
    assert x0.pin == (("ClassicalSgPi.1.zeta", 0.0),)


def test_frozen_golden_values(x0):
    # frozen from this solver on the bundled data (flat start, zeta pinned to 0)
    golden = [0.0, 0.0, 0.043230311457703847, 0.0, 0.47558248681032539, 1.0289160838567828,
              0.85, -0.036490255342092576]
    np.testing.assert_allclose(x0.state.x, golden, atol=1e-9)


def test_without_pin_is_rank_deficient(ieee9, x0):
    with pytest.raises(RankDeficientWithoutPin) as info:
        solve_equilibrium(ieee9, x0.state)
    assert info.value.sigma_ratio < 1e-8


def test_pin_unknown_variable(ieee9):
    with pytest.raises(StructuralError):
        solve_equilibrium(ieee9, None, ("kappa", 0.0))


def test_unreachable_equilibrium_diverges():
    # load far above the line's transfer capacity
    s = cases.smib_classical(P_g0=30.0, k1=0.0, k2=0.0)
    with pytest.raises(NewtonDivergence):
        solve_equilibrium(s, None, ("zeta", 0.0), max_iter=30)


def test_spectrum_has_single_zero_and_is_otherwise_stable(x0):
    ev = np.sort_complex(x0.eigenvalues)
    zero = np.abs(ev) < 1e-6
    assert zero.sum() == 1
    assert np.all(ev[~zero].real < 0)


def test_multiple_pins():
    s = cases.smsl(k1=0.0, k2=0.0, P_g0=0.5, P_d=0.5)
    eq = solve_equilibrium(s, None, [("zeta", 0.0), ("delta", 0.3)])
    assert eq.state.x[s.state_index("delta")] == 0.3
    assert eq.f_residual < 1e-10


def test_nearest_equilibrium_from_perturbed_point(ieee9, x0):
    x = x0.state.x.copy()
    x[0] += 1e-3
    eq = nearest_equilibrium(ieee9, SystemState(x, x0.state.z))
    assert np.max(np.abs(ieee9.f(eq.x, eq.z))) < 1e-10
    assert np.max(np.abs(ieee9.g(eq.x, eq.z))) < 1e-10


def test_continuation_values_inclusive():
    v = continuation_values(-0.1, 0.1, 0.01)
    assert len(v) == 21 and v[0] == -0.1 and v[-1] == 0.1
    with pytest.raises(ValueError):
        continuation_values(0, 1, 0)


def test_continuum_channels(ieee9, x0):
    trace = trace_continuum(ieee9, x0, "zeta", continuation_values(-0.1, 0.1, 0.01))
    assert len(trace.points) == 21
    for p in trace.points:
        assert abs(p.state.x[1]) <= 1e-8 and abs(p.state.x[3]) <= 1e-8
        assert p.f_residual <= 1e-9
    summ = trace.summary(ieee9)
    for ch in ("delta1", "delta2", "Eq_prime", "P3", "Q3"):
        assert np.ptp(summ[ch]) > 1e-3
    np.testing.assert_allclose(summ["zeta"], trace.values)
    # the middle point is the pinned start
    np.testing.assert_allclose(trace.points[10].state.x, x0.state.x, atol=1e-9)


def test_continuum_missing_parameter(smsl, smsl_eq):
    with pytest.raises(StructuralError):
        trace_continuum(smsl, smsl_eq, "Eq_prime", [0.0])


def test_tangent_plane_field_at_equilibrium(ieee9, x0):
    fld = tangent_plane_field(ieee9, x0, grid=5, span=0.05)
    assert fld.u.shape == (5, 5)
    assert abs(fld.u[2, 2]) < 1e-10 and abs(fld.v[2, 2]) < 1e-10
    assert not fld.missing


def test_tangent_plane_field_direction_checks(ieee9, x0):
    with pytest.raises(ValueError):
        tangent_plane_field(ieee9, x0, S1_PUBLISHED, S1_PUBLISHED)
    with pytest.raises(StructuralError):
        tangent_plane_field(ieee9, x0, np.ones(3) / np.sqrt(3), S2_PUBLISHED)


def test_as_dict_roundtrips_names(ieee9, x0):
    d = x0.as_dict(ieee9)
    assert list(d["x"]) == list(ieee9.x_names)
    assert len(d["reduced_jacobian_eigenvalues"]) == 8
