"""Bundled systems and builders for the small test networks."""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .casefile import CaseFile, DeviceFile, DeviceSpec, parse_case, parse_device_file
from .devices import ClassicalSgPi, ConstPqLoad, FluxDecaySg, InfiniteBus, InverterPq, make_device
from .errors import StructuralError
from .model import Branch, PowerSystem
from .powerflow import PowerFlowResult, initialise_devices

# bus-1 machine (classical generator + PI regulator)
BUS1_TABLE = dict(M=0.075, D=0.032, E=1.01, x_d_prime=0.061, k1=0.10, k2=0.72)
# bus-2 machine (flux-decay)
BUS2_TABLE = dict(M=0.02, D=0.003, T_d0_prime=1.0, x_q=0.20, x_d=0.896, x_d_prime=0.12)
# bus-3 inverter dynamics
BUS3_TABLE = dict(tau1=10.0, tau2=10.0, d1=0.10, d2=0.10)


def data_path(name: str) -> Path:
    return Path(str(resources.files("augsync") / "data" / name))


CASE9 = "case9.m"
CASE9_DEVICES = "case9_devices.ini"
P_MATRIX_TABLE = "p_matrix_published.txt"


@dataclass
class LoadedSystem:
    system: PowerSystem
    case: CaseFile
    devices: list[DeviceSpec]
    flow: PowerFlowResult | None


def build_system(case: CaseFile, device_file: DeviceFile) -> LoadedSystem:
    """Assemble a ``PowerSystem`` from a parsed case and device file.

    Loads come from the case bus table unless a bus also declares a
    ``ConstPqLoad`` in the device file (the device file wins).
    """
    flow = None
    specs = device_file.devices
    if device_file.needs_initialisation:
        specs, flow = initialise_devices(case, device_file)
    for d in specs:
        if not 1 <= d.bus <= case.n_bus:
            raise StructuralError(f"device file references bus {d.bus} outside 1..{case.n_bus}")
    devices = [(d.bus, make_device(d.kind, **d.params)) for d in specs]
    declared_loads = {d.bus for d in specs if d.kind == "ConstPqLoad"}
    for bus, (pd, qd) in sorted(case.loads().items()):
        if bus not in declared_loads:
            devices.append((bus, ConstPqLoad(pd, qd)))
    system = PowerSystem(case.n_bus, case.branches(), devices, case.bus_shunts(),
                         case.base_mva, name=case.name)
    return LoadedSystem(system, case, specs, flow)


def load_system(case_path=None, device_path=None) -> LoadedSystem:
    case = parse_case(case_path or data_path(CASE9))
    dev = parse_device_file(device_path or data_path(CASE9_DEVICES))
    return build_system(case, dev)


def ieee9() -> PowerSystem:
    """The bundled heterogeneous 9-bus system, set points from power-flow initialisation."""
    return load_system().system


def smsl(*, P_g0: float = 0.72, P_d: float = 0.5, Q_d: float = 0.2, x_line: float = 0.1,
         r_line: float = 0.0, M: float = BUS1_TABLE["M"], D: float = BUS1_TABLE["D"],
         E: float = BUS1_TABLE["E"], x_d_prime: float = BUS1_TABLE["x_d_prime"],
         k1: float = BUS1_TABLE["k1"], k2: float = BUS1_TABLE["k2"]) -> PowerSystem:
    """Single machine (classical + PI regulator) feeding a constant-PQ load over one line."""
    gen = ClassicalSgPi(M=M, D=D, E=E, x_d_prime=x_d_prime, P_g0=P_g0, k1=k1, k2=k2)
    line = Branch.from_impedance(1, 2, r_line, x_line)
    return PowerSystem(2, [line], [(1, gen), (2, ConstPqLoad(P_d, Q_d))], name="smsl")


def smsl_flux_decay(*, P_g: float = 0.5, E_f: float = 1.3, P_d: float = 0.5, Q_d: float = 0.2,
                    x_line: float = 0.1) -> PowerSystem:
    """Flux-decay generator feeding a constant-PQ load over a lossless line."""
    gen = FluxDecaySg(P_g=P_g, E_f=E_f, **BUS2_TABLE)
    line = Branch.from_impedance(1, 2, 0.0, x_line)
    return PowerSystem(2, [line], [(1, gen), (2, ConstPqLoad(P_d, Q_d))], name="smsl_flux_decay")


def smib_flux_decay(*, P_g: float = 0.5, E_f: float = 1.3, x_line: float = 0.1,
                    r_line: float = 0.0) -> PowerSystem:
    """Flux-decay generator against an infinite bus."""
    gen = FluxDecaySg(P_g=P_g, E_f=E_f, **BUS2_TABLE)
    line = Branch.from_impedance(1, 2, r_line, x_line)
    return PowerSystem(2, [line], [(1, gen), (2, InfiniteBus())], name="smib_flux_decay")


def smib_classical(*, P_g0: float = 0.5, D: float = 0.032, E: float = 1.05, x_line: float = 0.1,
                   k1: float = 0.0, k2: float = 0.0) -> PowerSystem:
    """Classical machine against an infinite bus (optionally with the PI regulator)."""
    gen = ClassicalSgPi(M=BUS1_TABLE["M"], D=D, E=E, x_d_prime=BUS1_TABLE["x_d_prime"],
                        P_g0=P_g0, k1=k1, k2=k2)
    line = Branch.from_impedance(1, 2, 0.0, x_line)
    return PowerSystem(2, [line], [(1, gen), (2, InfiniteBus())], name="smib_classical")


def smib_inverter(*, P_ref: float = 0.5, Q_ref: float = 0.1, theta_ref: float = 0.05,
                  V_ref: float = 1.0, x_line: float = 0.1, r_line: float = 0.0) -> PowerSystem:
    """Inverter-interfaced source against an infinite bus."""
    inv = InverterPq(P_ref=P_ref, Q_ref=Q_ref, theta_ref=theta_ref, V_ref=V_ref, **BUS3_TABLE)
    line = Branch.from_impedance(1, 2, r_line, x_line)
    return PowerSystem(2, [line], [(1, inv), (2, InfiniteBus())], name="smib_inverter")


def inverter_network(n_inverters: int = 3, x_line: float = 0.1) -> PowerSystem:
    """Ring of inverters plus one load bus and an infinite bus (no x1 states)."""
    n_bus = n_inverters + 2
    branches = [Branch.from_impedance(i, i + 1, 0.01, x_line) for i in range(1, n_bus)]
    branches.append(Branch.from_impedance(n_bus, 1, 0.01, x_line))
    devs = [(i, InverterPq(P_ref=0.3, Q_ref=0.05, theta_ref=0.0, V_ref=1.0, **BUS3_TABLE))
            for i in range(1, n_inverters + 1)]
    devs.append((n_inverters + 1, ConstPqLoad(0.6, 0.2)))
    devs.append((n_bus, InfiniteBus()))
    return PowerSystem(n_bus, branches, devs, name="inverter_network")
