"""File formats: trajectory CSV, JSON reports, dense P matrices and run configs.

All writers are deterministic: floats use 17 significant digits in CSV and
``repr`` precision in JSON, keys are sorted, and no timestamps are emitted.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParseError
from .model import PowerSystem, SystemState
from .simulate import DomainBox, IntegratorConfig, Termination, Trajectory

REPORT_SCHEMA = "augsync.report/1"
CSV_FLOAT = "{:.17g}"


def _fmt(v: float) -> str:
    return CSV_FLOAT.format(float(v))


# ------------------------------------------------------------ trajectory CSV

def trajectory_columns(x_names, n_bus: int, with_v: bool) -> list[str]:
    cols = ["t", *x_names]
    cols += [f"theta{i}" for i in range(1, n_bus + 1)]
    cols += [f"V{i}" for i in range(1, n_bus + 1)]
    cols += ["zdot_norm", "f_norm"]
    if with_v:
        cols.append("V_value")
    cols.append("det_sign_logabs")
    return cols


def _det_token(sign: float, logabs: float) -> str:
    # sign and log|det| share one column as "<sign>:<log|det|>"
    return f"{int(sign):+d}:{_fmt(logabs)}"


def _parse_det_token(tok: str, where) -> tuple[float, float]:
    try:
        s, l = tok.split(":")
        return float(int(s)), float(l)
    except ValueError:
        raise ParseError(f"bad det_sign_logabs cell {tok!r}", *where) from None


def format_trajectory(traj: Trajectory) -> str:
    n_bus = traj.Z.shape[1] // 2
    with_v = traj.v_value is not None
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(trajectory_columns(traj.x_names, n_bus, with_v))
    for k in range(len(traj)):
        z = traj.Z[k]
        row = [_fmt(traj.times[k]), *map(_fmt, traj.X[k]), *map(_fmt, z[0::2]), *map(_fmt, z[1::2]),
               _fmt(traj.zdot_norm[k]), _fmt(traj.f_norm[k])]
        if with_v:
            row.append(_fmt(traj.v_value[k]))
        row.append(_det_token(traj.det_sign[k], traj.det_logabs[k]))
        w.writerow(row)
    return buf.getvalue()


def write_trajectory(path, traj: Trajectory) -> None:
    Path(path).write_text(format_trajectory(traj))


def parse_trajectory_text(text: str, path: str | None = None) -> Trajectory:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise ParseError("empty trajectory file", path, 1, 1)
    header = rows[0]
    if len(header) < 5 or header[0] != "t" or header[-1] != "det_sign_logabs":
        raise ParseError("trajectory header must start with 't' and end with 'det_sign_logabs'",
                         path, 1, 1)
    with_v = header[-2] == "V_value"
    body = header[1:-(4 if with_v else 3)]
    n_theta = sum(1 for c in body if c.startswith("theta"))
    n_x = len(body) - 2 * n_theta
    if n_x < 0 or body[n_x:n_x + n_theta] != [f"theta{i}" for i in range(1, n_theta + 1)] \
            or body[n_x + n_theta:] != [f"V{i}" for i in range(1, n_theta + 1)]:
        raise ParseError("trajectory header does not follow the column schema", path, 1, 1)
    x_names = tuple(body[:n_x])
    t, X, Z, zn, fn, vv, ds, dl = [], [], [], [], [], [], [], []
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} cells, found {len(row)}", path, r, 1)
        try:
            vals = [float(c) for c in row[:-1]]
        except ValueError as exc:
            raise ParseError(f"non-numeric cell: {exc}", path, r, 1) from None
        t.append(vals[0])
        X.append(vals[1:1 + n_x])
        th = vals[1 + n_x:1 + n_x + n_theta]
        vm = vals[1 + n_x + n_theta:1 + n_x + 2 * n_theta]
        z = np.empty(2 * n_theta)
        z[0::2], z[1::2] = th, vm
        Z.append(z)
        k = 1 + n_x + 2 * n_theta
        zn.append(vals[k])
        fn.append(vals[k + 1])
        if with_v:
            vv.append(vals[k + 2])
        s, l = _parse_det_token(row[-1], (path, r, len(row)))
        ds.append(s)
        dl.append(l)
    z_names = tuple(f"{q}{b}" for b in range(1, n_theta + 1) for q in ("theta", "V"))
    m = len(t)
    return Trajectory(np.array(t), np.array(X, float).reshape(m, n_x),
                      np.array(Z, float).reshape(m, 2 * n_theta), np.array(zn), np.array(fn),
                      np.array(ds), np.array(dl), Termination.reached_t_end, x_names, z_names,
                      np.array(vv) if with_v else None, "read from CSV")


def read_trajectory(path) -> Trajectory:
    return parse_trajectory_text(Path(path).read_text(), str(path))


def format_state(system: PowerSystem, state: SystemState) -> str:
    """Single-row file in the trajectory column schema (derived channels included)."""
    from .simulate import _Recorder

    rec = _Recorder(system, None)
    rec.add(0.0, state.x, state.z, check=False)
    return format_trajectory(rec.finish(Termination.reached_t_end, ""))


def read_state(path, system: PowerSystem) -> SystemState:
    traj = read_trajectory(path)
    if len(traj) != 1:
        raise ParseError(f"state file must hold exactly one row, found {len(traj)}", str(path), 1, 1)
    if traj.x_names != system.x_names:
        raise ParseError("state file columns do not match the system's states", str(path), 1, 1)
    if traj.Z.shape[1] != system.m:
        raise ParseError("state file bus count does not match the system", str(path), 1, 1)
    return traj.final


# --------------------------------------------------------------- JSON reports

def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if hasattr(obj, "value") and isinstance(getattr(obj, "value"), str):
        return obj.value
    return obj


def format_report(kind: str, payload: dict, *, config: dict | None = None,
                  inputs: dict | None = None) -> str:
    doc = {"schema": REPORT_SCHEMA, "kind": kind, "result": payload}
    if config is not None:
        doc["config"] = config
    if inputs is not None:
        doc["inputs"] = inputs
    return json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n"


def write_report(path, kind: str, payload: dict, **kw) -> str:
    text = format_report(kind, payload, **kw)
    if path is not None:
        Path(path).write_text(text)
    return text


def read_report(path) -> dict:
    doc = json.loads(Path(path).read_text())
    if doc.get("schema") != REPORT_SCHEMA:
        raise ParseError(f"unsupported report schema {doc.get('schema')!r}", str(path), 1, 1)
    return doc


def format_continuum(trace, system: PowerSystem) -> str:
    chans = trace.summary(system)
    names = list(chans)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["parameter", *names, "omega_max_abs", "f_residual"])
    omega = [i for i, nm in enumerate(system.x_names) if nm.endswith(".omega")]
    for k, p in enumerate(trace.points):
        om = float(np.max(np.abs(p.state.x[omega]))) if omega else 0.0
        w.writerow([_fmt(trace.values[k]), *(_fmt(chans[c][k]) for c in names), _fmt(om),
                    _fmt(p.f_residual)])
    return buf.getvalue()


def format_field(fld) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["a", "b", "u", "v"])
    for i, b in enumerate(fld.b):
        for j, a in enumerate(fld.a):
            w.writerow([_fmt(a), _fmt(b), _fmt(fld.u[i, j]), _fmt(fld.v[i, j])])
    return buf.getvalue()


# ----------------------------------------------------------------- P matrices

def format_matrix(P, header: str = "") -> str:
    P = np.atleast_2d(np.asarray(P, float))
    lines = [f"# {ln}" for ln in header.splitlines()] if header else []
    lines += [" ".join(_fmt(v) for v in row) for row in P]
    return "\n".join(lines) + "\n"


def write_matrix(path, P, header: str = "") -> None:
    Path(path).write_text(format_matrix(P, header))


def parse_matrix_text(text: str, path: str | None = None) -> np.ndarray:
    rows = []
    for ln, line in enumerate(text.splitlines(), start=1):
        s = line.split("#", 1)[0].strip()
        if not s:
            continue
        try:
            rows.append([float(t) for t in s.replace(",", " ").split()])
        except ValueError as exc:
            raise ParseError(f"bad matrix entry: {exc}", path, ln, 1) from None
        if len(rows[-1]) != len(rows[0]):
            raise ParseError("ragged matrix row", path, ln, 1)
    if not rows:
        raise ParseError("empty matrix file", path, 1, 1)
    P = np.array(rows)
    if P.shape[0] != P.shape[1]:
        raise ParseError(f"matrix must be square, got {P.shape}", path, 1, 1)
    return P


def read_matrix(path) -> np.ndarray:
    return parse_matrix_text(Path(path).read_text(), str(path))


# ------------------------------------------------------------------ run config

@dataclass
class Thresholds:
    zdot: float = 1e-4
    f: float = 1e-3
    g_tol: float = 1e-10
    rank_tol: float = 1e-8


@dataclass
class SamplerSettings:
    n_samples: int = 1000
    burn_in: int = 100
    thin: int = 2
    step: float = 0.05
    seed: int = 0


@dataclass
class DomainSettings:
    theta: float = math.pi
    V_min: float = 0.5
    V_max: float = 1.5
    x_bound: float = 1e3

    def box(self, system: PowerSystem) -> DomainBox:
        return DomainBox.default(system, self.theta, (self.V_min, self.V_max), self.x_bound)


@dataclass
class RunConfig:
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    domain: DomainSettings = field(default_factory=DomainSettings)
    thresholds: Thresholds = field(default_factory=Thresholds)
    sampler: SamplerSettings = field(default_factory=SamplerSettings)
    output: str | None = None

    def __post_init__(self):
        for name, v in asdict(self.thresholds).items():
            if not v > 0:
                raise ValueError(f"threshold {name} must be > 0")
        if self.sampler.n_samples < 1:
            raise ValueError("sampler n_samples must be >= 1")

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {"integrator", "domain", "thresholds", "sampler", "output"}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown run-config keys: {sorted(extra)}")
        try:
            return cls(IntegratorConfig(**d.get("integrator", {})),
                       DomainSettings(**d.get("domain", {})),
                       Thresholds(**d.get("thresholds", {})),
                       SamplerSettings(**d.get("sampler", {})),
                       d.get("output"))
        except TypeError as exc:
            raise ValueError(f"bad run config: {exc}") from None


def read_run_config(path) -> RunConfig:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"run config is not valid JSON: {exc.msg}", str(path), exc.lineno,
                         exc.colno) from None
    return RunConfig.from_dict(d)
