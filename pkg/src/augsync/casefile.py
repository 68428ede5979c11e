"""Readers for the MATPOWER-style case text and the device parameter file.

Case grammar (subset)::

    file      := { line }
    line      := header | assign | matrix | comment | blank
    header    := "function" ...                     (ignored)
    assign    := "mpc." NAME "=" (NUMBER | STRING) ";"
    matrix    := "mpc." NAME "=" "[" rows "]" ";"
    rows      := row { (";" | newline) row }
    row       := NUMBER { ("," | whitespace) NUMBER }
    comment   := "%" ... end of line

Recognised sections are ``baseMVA``, ``bus``, ``branch`` and ``gen``; any other
``mpc.*`` assignment (``gencost``, ``areas``, cell arrays, ...) is skipped with a
warning.  ``bus`` and ``branch`` are mandatory.

Device file: INI text, one ``[bus N]`` section per attached device::

    [powerflow]
    generator_voltage = 1.0      ; |V| set-point at generator buses (optional)

    [bus 1]
    kind = ClassicalSgPi
    M = 0.075
    E = auto                     ; derived by power-flow initialisation

Parameter names follow the device dataclass fields.  Set-point parameters may
be ``auto``; they are then derived from a power flow (see ``powerflow``).
"""

from __future__ import annotations

import configparser
import dataclasses
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .devices import DEVICE_KINDS
from .errors import MissingSection, ParseError, StructuralError
from .model import Branch

log = logging.getLogger(__name__)

# MATPOWER column indices (0-based)
BUS_I, BUS_TYPE, PD, QD, GS, BS = 0, 1, 2, 3, 4, 5
VM, VA = 7, 8
F_BUS, T_BUS, BR_R, BR_X, BR_B = 0, 1, 2, 3, 4
TAP, SHIFT, BR_STATUS = 8, 9, 10
GEN_BUS, PG, QG, VG, GEN_STATUS = 0, 1, 2, 5, 7

_MIN_COLS = {"bus": 13, "branch": 11, "gen": 8}
_KNOWN = ("baseMVA", "bus", "branch", "gen")
# standard MATPOWER fields that carry nothing the dynamic model needs
_UNUSED = ("version", "gencost", "areas", "bus_name", "gentype", "genfuel", "dcline")


def _skip(key: str, path: str, lineno: int) -> None:
    if key in _UNUSED:
        log.debug("%s:%d: skipping unused section mpc.%s", path, lineno, key)
    else:
        log.warning("%s:%d: ignoring unknown section mpc.%s", path, lineno, key)

# parameters that power-flow initialisation is allowed to fill in
AUTO_PARAMS = {
    "ClassicalSgPi": ("E", "P_g0"),
    "FluxDecaySg": ("P_g", "E_f"),
    "InverterPq": ("P_ref", "Q_ref", "theta_ref", "V_ref"),
}


@dataclass
class CaseFile:
    base_mva: float
    bus: np.ndarray
    branch: np.ndarray
    gen: np.ndarray
    name: str = "case"
    path: str = "<string>"

    @property
    def n_bus(self) -> int:
        return int(self.bus.shape[0])

    @property
    def n_branch(self) -> int:
        return int(self.branch.shape[0])

    def branches(self) -> list[Branch]:
        out = []
        for row in self.branch:
            if row[BR_STATUS] == 0:
                continue
            ratio = row[TAP] if row[TAP] != 0 else 1.0
            out.append(Branch.from_impedance(int(row[F_BUS]), int(row[T_BUS]),
                                             row[BR_R], row[BR_X], row[BR_B], ratio))
        return out

    def bus_shunts(self) -> dict[int, complex]:
        out = {}
        for row in self.bus:
            if row[GS] != 0 or row[BS] != 0:
                out[int(row[BUS_I])] = complex(row[GS], row[BS]) / self.base_mva
        return out

    def loads(self) -> dict[int, tuple[float, float]]:
        """Constant-PQ loads in per-unit, keyed by bus."""
        return {int(r[BUS_I]): (r[PD] / self.base_mva, r[QD] / self.base_mva)
                for r in self.bus if r[PD] != 0 or r[QD] != 0}

    def generators(self) -> dict[int, dict[str, float]]:
        out = {}
        for r in self.gen:
            if r[GEN_STATUS] <= 0:
                continue
            out[int(r[GEN_BUS])] = {"P": r[PG] / self.base_mva, "Q": r[QG] / self.base_mva,
                                    "V": r[VG]}
        return out

    def slack_bus(self) -> int:
        ref = [int(r[BUS_I]) for r in self.bus if int(r[BUS_TYPE]) == 3]
        if len(ref) != 1:
            raise StructuralError(f"case needs exactly one reference bus, found {len(ref)}")
        return ref[0]


def _strip_comment(line: str) -> str:
    out, quoted = [], False
    for ch in line:
        if ch == "'":
            quoted = not quoted
        if ch == "%" and not quoted:
            break
        out.append(ch)
    return "".join(out)


_ASSIGN = re.compile(r"\s*mpc\.(\w+)\s*=\s*")


def parse_case_text(text: str, path: str = "<string>") -> CaseFile:
    lines = text.splitlines()
    sections: dict[str, object] = {}
    name = Path(path).stem if path != "<string>" else "case"
    i = 0
    while i < len(lines):
        lineno = i + 1
        raw = _strip_comment(lines[i])
        i += 1
        stripped = raw.strip()
        if not stripped:
            continue
        if stripped.startswith("function"):
            m = re.search(r"=\s*(\w+)", stripped)
            if m:
                name = m.group(1)
            continue
        m = _ASSIGN.match(raw)
        if not m:
            col = len(raw) - len(raw.lstrip()) + 1
            raise ParseError(f"unexpected text {stripped[:30]!r}", path, lineno, col)
        key = m.group(1)
        rest = raw[m.end():]
        opener = rest.lstrip()[:1]
        if opener in ("[", "{"):
            closer = "]" if opener == "[" else "}"
            start_col = m.end() + (len(rest) - len(rest.lstrip())) + 1
            body: list[tuple[int, int, str]] = []
            chunk = rest.lstrip()[1:]
            chunk_line, chunk_col = lineno, start_col + 1
            while True:
                if closer in chunk:
                    body.append((chunk_line, chunk_col, chunk[:chunk.index(closer)]))
                    break
                body.append((chunk_line, chunk_col, chunk))
                if i >= len(lines):
                    raise ParseError(f"unterminated matrix for mpc.{key}", path, lineno, start_col)
                chunk = _strip_comment(lines[i])
                chunk_line, chunk_col = i + 1, 1
                i += 1
            if key not in _KNOWN:
                _skip(key, path, lineno)
                continue
            if opener == "{":
                raise ParseError(f"mpc.{key} must be a numeric matrix", path, lineno, start_col)
            sections[key] = _parse_matrix(key, body, path)
        else:
            value = rest.strip().rstrip(";").strip()
            if key not in _KNOWN:
                _skip(key, path, lineno)
                continue
            try:
                sections[key] = float(value)
            except ValueError:
                raise ParseError(f"mpc.{key}: expected a number, got {value!r}", path, lineno,
                                 m.end() + 1) from None

    for key in ("bus", "branch"):
        if key not in sections:
            raise MissingSection(f"missing mpc.{key} section", path)
    base = float(sections.get("baseMVA", 100.0))
    if not base > 0:
        raise ParseError("baseMVA must be > 0", path)
    bus = sections["bus"]
    branch = sections["branch"]
    gen = sections.get("gen", np.zeros((0, _MIN_COLS["gen"])))
    case = CaseFile(base, bus, branch, gen, name=name, path=path)
    _validate(case, path)
    return case


def _parse_matrix(key: str, body, path: str) -> np.ndarray:
    rows: list[list[float]] = []
    locs: list[tuple[int, int]] = []
    for line, col0, text in body:
        # a ';' ends a row, a newline does too
        for part in _split_keep_offsets(text, ";"):
            offset, piece = part
            cells, row_loc = [], None
            for m in re.finditer(r"[^\s,]+", piece):
                tok = m.group(0)
                col = col0 + offset + m.start()
                try:
                    cells.append(float(tok))
                except ValueError:
                    raise ParseError(f"mpc.{key}: bad number {tok!r}", path, line, col) from None
                row_loc = row_loc or (line, col)
            if cells:
                rows.append(cells)
                locs.append(row_loc)
    if not rows:
        return np.zeros((0, _MIN_COLS.get(key, 0)))
    width = len(rows[0])
    for r, (line, col) in zip(rows, locs):
        if len(r) != width:
            raise ParseError(f"mpc.{key}: row has {len(r)} columns, expected {width}", path, line, col)
    need = _MIN_COLS.get(key, 0)
    if width < need:
        raise ParseError(f"mpc.{key}: need at least {need} columns, got {width}", path, *locs[0])
    arr = np.array(rows, dtype=float)
    arr.flags.writeable = False
    return arr


def _split_keep_offsets(text: str, sep: str):
    start = 0
    for j, ch in enumerate(text):
        if ch == sep:
            yield start, text[start:j]
            start = j + 1
    yield start, text[start:]


def _validate(case: CaseFile, path: str) -> None:
    ids = case.bus[:, BUS_I].astype(int)
    if list(ids) != list(range(1, len(ids) + 1)):
        raise ParseError("bus ids must be contiguous 1..n in file order", path)
    for row in case.branch:
        f, t = int(row[F_BUS]), int(row[T_BUS])
        if not (1 <= f <= case.n_bus and 1 <= t <= case.n_bus):
            raise ParseError(f"branch {f}-{t} references a missing bus", path)
        if row[SHIFT] != 0:
            raise ParseError(f"branch {f}-{t}: phase-shifting transformers are not supported", path)
    for row in case.gen:
        if not 1 <= int(row[GEN_BUS]) <= case.n_bus:
            raise ParseError(f"generator at missing bus {int(row[GEN_BUS])}", path)


def parse_case(path) -> CaseFile:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read case file: {exc.strerror}", str(p)) from None
    return parse_case_text(text, str(p))


# ------------------------------------------------------------------ devices

@dataclass
class DeviceSpec:
    bus: int
    kind: str
    params: dict[str, float | None]  # None marks an ``auto`` parameter

    @property
    def auto(self) -> list[str]:
        return [k for k, v in self.params.items() if v is None]


@dataclass
class DeviceFile:
    devices: list[DeviceSpec]
    generator_voltage: dict[int, float] | float | None = None
    path: str = "<string>"
    notes: dict[str, str] = field(default_factory=dict)

    @property
    def needs_initialisation(self) -> bool:
        return any(d.auto for d in self.devices)


_SECTION = re.compile(r"^\s*\[\s*bus\s*(\d+)\s*\]\s*$", re.IGNORECASE)


def parse_device_text(text: str, path: str = "<string>") -> DeviceFile:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text, source=path)
    except configparser.ParsingError as exc:
        line = exc.errors[0][0] if exc.errors else None
        raise ParseError("malformed device file line", path, line) from None
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        raise ParseError(str(exc).splitlines()[0], path, line) from None

    section_line = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        s = raw.strip()
        if s.startswith("["):
            section_line[s.strip("[] ").lower().replace(" ", "")] = n

    specs, vgen = [], None
    for sec in cp.sections():
        key = sec.lower().replace(" ", "")
        line = section_line.get(key)
        if key == "powerflow":
            vgen = _parse_powerflow(cp[sec], path, line)
            continue
        m = _SECTION.match(f"[{sec}]")
        if not m:
            raise ParseError(f"unknown section [{sec}]", path, line)
        bus = int(m.group(1))
        items = dict(cp[sec])
        kind = items.pop("kind", None)
        if kind is None:
            raise ParseError(f"[{sec}] lacks 'kind'", path, line)
        if kind not in DEVICE_KINDS:
            raise ParseError(f"[{sec}] unknown device kind {kind!r}", path, line)
        cls = DEVICE_KINDS[kind]
        fields = [fd.name for fd in dataclasses.fields(cls)]
        required = [fd.name for fd in dataclasses.fields(cls) if fd.default is dataclasses.MISSING]
        params: dict[str, float | None] = {}
        for k, v in items.items():
            if k not in fields:
                raise ParseError(f"[{sec}] {kind} has no parameter {k!r}", path, line)
            if v.strip().lower() == "auto":
                if k not in AUTO_PARAMS.get(kind, ()):
                    raise ParseError(f"[{sec}] {k} cannot be 'auto'", path, line)
                params[k] = None
                continue
            try:
                params[k] = float(v)
            except ValueError:
                raise ParseError(f"[{sec}] {k}: expected a number, got {v!r}", path, line) from None
        missing = [f for f in required if f not in params]
        if missing:
            raise ParseError(f"[{sec}] {kind} missing parameter(s) {', '.join(missing)}", path, line)
        specs.append(DeviceSpec(bus, kind, params))
    return DeviceFile(specs, vgen, path)


def _parse_powerflow(sec, path, line):
    out: dict[int, float] = {}
    default = None
    for k, v in sec.items():
        try:
            val = float(v)
        except ValueError:
            raise ParseError(f"[powerflow] {k}: expected a number", path, line) from None
        if k == "generator_voltage":
            default = val
        elif re.fullmatch(r"V\d+", k):
            out[int(k[1:])] = val
        else:
            raise ParseError(f"[powerflow] unknown key {k!r}", path, line)
    if out:
        if default is not None:
            out[0] = default  # bus 0 stands for "every other generator"
        return out
    return default


def parse_device_file(path) -> DeviceFile:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read device file: {exc.strerror}", str(p)) from None
    return parse_device_text(text, str(p))


def format_device_file(specs: list[DeviceSpec], header: str = "") -> str:
    """Emit a fully numeric device file (17 significant digits)."""
    out = []
    if header:
        out.extend(f"# {ln}" if ln else "#" for ln in header.splitlines())
        out.append("")
    for d in sorted(specs, key=lambda s: s.bus):
        out.append(f"[bus {d.bus}]")
        out.append(f"kind = {d.kind}")
        for k, v in d.params.items():
            out.append(f"{k} = {'auto' if v is None else format(v, '.17g')}")
        out.append("")
    return "\n".join(out)
