from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from augsync import reports
from augsync.errors import ParseError
from augsync.model import SystemState
from augsync.roa import KrasovskiiV
from augsync.simulate import IntegratorConfig, integrate, project_state


@pytest.fixture(scope="module")
def traj(ieee9, x0):
    x = x0.state.x.copy()
    x[ieee9.state_index("zeta")] += 0.05
    V = KrasovskiiV.for_system(ieee9, np.eye(ieee9.n)).bind(ieee9)
    return integrate(ieee9, project_state(ieee9, SystemState(x, x0.state.z)),
                     IntegratorConfig(t_end=1.0), vfunc=V)


class TestTrajectoryCsv:
    def test_column_order(self, ieee9, traj):
        header = reports.format_trajectory(traj).splitlines()[0].split(",")
        assert header[0] == "t" and header[1:9] == list(ieee9.x_names)
        assert header[9:18] == [f"theta{i}" for i in range(1, 10)]
        assert header[18:27] == [f"V{i}" for i in range(1, 10)]
        assert header[27:] == ["zdot_norm", "f_norm", "V_value", "det_sign_logabs"]

    def test_round_trip_byte_identical(self, traj):
        text = reports.format_trajectory(traj)
        back = reports.parse_trajectory_text(text)
        assert reports.format_trajectory(back) == text
        np.testing.assert_array_equal(back.X, traj.X)
        np.testing.assert_array_equal(back.Z, traj.Z)

    def test_file_round_trip(self, traj, tmp_path):
        p = tmp_path / "t.csv"
        reports.write_trajectory(p, traj)
        assert reports.format_trajectory(reports.read_trajectory(p)) == p.read_text()

    def test_deterministic(self, ieee9, x0):
        x = x0.state.x.copy()
        x[1] += 0.1
        start = project_state(ieee9, SystemState(x, x0.state.z))
        a = reports.format_trajectory(integrate(ieee9, start, IntegratorConfig(t_end=0.5)))
        b = reports.format_trajectory(integrate(ieee9, start, IntegratorConfig(t_end=0.5)))
        assert a == b

    @pytest.mark.parametrize("bad,where", [
        ("x,y\n1,2\n", 1),
        ("t,a,theta1,V1,zdot_norm,f_norm,det_sign_logabs\n0,1,2,3,4,5\n", 2),
        ("t,a,theta1,V1,zdot_norm,f_norm,det_sign_logabs\n0,1,2,x,4,5,+1:0\n", 2),
        ("t,a,theta1,V1,zdot_norm,f_norm,det_sign_logabs\n0,1,2,3,4,5,oops\n", 2),
    ])
    def test_parse_errors_have_location(self, bad, where):
        with pytest.raises(ParseError) as exc:
            reports.parse_trajectory_text(bad, "f.csv")
        assert exc.value.line == where

    def test_state_file_single_row(self, ieee9, x0, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text(reports.format_state(ieee9, x0.state))
        back = reports.read_state(p, ieee9)
        np.testing.assert_array_equal(back.x, x0.state.x)
        np.testing.assert_array_equal(back.z, x0.state.z)

    def test_state_file_wrong_system(self, smsl, ieee9, x0, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text(reports.format_state(ieee9, x0.state))
        with pytest.raises(ParseError):
            reports.read_state(p, smsl)


class TestMatrix:
    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 6), st.integers(0, 2**31 - 1))
    def test_round_trip_exact(self, n, seed):
        P = np.random.default_rng(seed).standard_normal((n, n))
        np.testing.assert_array_equal(reports.parse_matrix_text(reports.format_matrix(P, "hdr")), P)

    def test_comments_and_commas(self):
        P = reports.parse_matrix_text("# c\n1, 2 # tail\n\n3 4\n")
        np.testing.assert_array_equal(P, [[1, 2], [3, 4]])

    @pytest.mark.parametrize("text", ["", "1 2\n3\n", "1 2\n", "1 a\n2 3\n"])
    def test_rejects_bad(self, text):
        with pytest.raises(ParseError):
            reports.parse_matrix_text(text)

    @pytest.mark.parametrize("name", ["p_matrix_published.txt", "p_matrix_fitted.txt"])
    def test_bundled_matrices_symmetric_pd(self, name):
        from augsync.cases import data_path

        P = reports.read_matrix(data_path(name))
        assert P.shape == (8, 8)
        np.testing.assert_allclose(P, P.T, atol=1e-12)
        assert np.linalg.eigvalsh(P)[0] > 0


class TestReports:
    def test_schema_sorted_and_finite_safe(self):
        text = reports.format_report("k", {"b": np.float64(np.inf), "a": np.arange(2)})
        doc = json.loads(text)
        assert doc["schema"] == reports.REPORT_SCHEMA and doc["kind"] == "k"
        assert doc["result"] == {"a": [0, 1], "b": "inf"}
        assert text.index('"a"') < text.index('"b"')

    def test_read_rejects_other_schema(self, tmp_path):
        p = tmp_path / "r.json"
        p.write_text(json.dumps({"schema": "other/9"}))
        with pytest.raises(ParseError):
            reports.read_report(p)

    def test_write_read(self, tmp_path):
        p = tmp_path / "r.json"
        reports.write_report(p, "x", {"v": 1.5}, config={"seed": 1})
        assert reports.read_report(p)["result"]["v"] == 1.5


class TestRunConfig:
    def test_defaults_round_trip(self):
        cfg = reports.RunConfig()
        assert reports.RunConfig.from_dict(cfg.as_dict()).as_dict() == cfg.as_dict()

    @pytest.mark.parametrize("d", [
        {"thresholds": {"zdot": 0.0}},
        {"thresholds": {"f": -1.0}},
        {"sampler": {"n_samples": 0}},
        {"bogus": 1},
        {"sampler": {"nope": 1}},
    ])
    def test_invalid(self, d):
        with pytest.raises(ValueError):
            reports.RunConfig.from_dict(d)

    def test_bad_json_location(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text('{"sampler": {"seed": }}')
        with pytest.raises(ParseError) as exc:
            reports.read_run_config(p)
        assert exc.value.line == 1

    def test_domain_box(self, ieee9):
        box = reports.DomainSettings(theta=1.0).box(ieee9)
        assert box.contains(np.zeros(ieee9.n), np.tile([0.5, 1.0], 9))
        assert not box.contains(np.zeros(ieee9.n), np.tile([0.5, 1.0], 9) + np.eye(18)[0] * 2)
