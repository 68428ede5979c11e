"""Structure-preserving power-system DAE model.

The model is the semi-explicit DAE

    x1' = f1(x1, x2, z),   x2' = f2(x1, x2, z),   0 = g(x2, z)

with ``z = (theta_1, V_1, ..., theta_n, V_n)`` interleaved per bus.  The state
vector ``x`` is stored in device order (devices sorted by bus); the split into
``x1`` (states absent from g) and ``x2`` is kept as index arrays.

Bus power balance convention: ``g_i = S_inj,i - S_flow,i`` where
``P_flow,i = V_i sum_j V_j (G_ij cos th_ij + B_ij sin th_ij)`` and
``Q_flow,i = V_i sum_j V_j (G_ij sin th_ij - B_ij cos th_ij)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg as sla

from .devices import Device, InfiniteBus
from .errors import SingularAlgebraicJacobian, StructuralError

# dg/dz is declared singular below this reciprocal condition number (1-norm)
RCOND_MIN = 1e-10


class BusKind(str, Enum):
    device = "device"
    load = "load"
    passive = "passive"
    infinite = "infinite"


@dataclass(frozen=True)
class Bus:
    id: int
    bus_kind: BusKind = BusKind.passive


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    G: float = 0.0
    B: float = 0.0
    shunt_b: float = 0.0
    ratio: float = 1.0

    def __post_init__(self):
        if self.from_bus == self.to_bus:
            raise StructuralError(f"branch {self.from_bus}-{self.to_bus} connects a bus to itself")
        if not self.ratio > 0:
            raise StructuralError("branch tap ratio must be > 0")

    @classmethod
    def from_impedance(cls, from_bus: int, to_bus: int, r: float, x: float,
                       shunt_b: float = 0.0, ratio: float = 1.0) -> "Branch":
        d = r * r + x * x
        if d == 0:
            raise StructuralError(f"branch {from_bus}-{to_bus} has zero impedance")
        return cls(from_bus, to_bus, r / d, -x / d, shunt_b, ratio)


@dataclass(frozen=True)
class AdmittanceMatrix:
    G: np.ndarray
    B: np.ndarray

    @property
    def Y(self) -> np.ndarray:
        return self.G + 1j * self.B


def build_admittance(branches: Iterable[Branch], n_bus: int,
                     bus_shunts: dict[int, complex] | None = None) -> AdmittanceMatrix:
    """Assemble the bus admittance matrix; parallel branches are summed."""
    Y = np.zeros((n_bus, n_bus), dtype=complex)
    for br in branches:
        for b in (br.from_bus, br.to_bus):
            if not 1 <= b <= n_bus:
                raise StructuralError(f"branch references bus {b} outside 1..{n_bus}")
        i, j = br.from_bus - 1, br.to_bus - 1
        y = br.G + 1j * br.B
        ysh = 0.5j * br.shunt_b
        t = br.ratio
        Y[i, i] += (y + ysh) / (t * t)
        Y[j, j] += y + ysh
        Y[i, j] -= y / t
        Y[j, i] -= y / t
    for b, ysh in (bus_shunts or {}).items():
        if not 1 <= b <= n_bus:
            raise StructuralError(f"shunt references bus {b} outside 1..{n_bus}")
        Y[b - 1, b - 1] += ysh
    return AdmittanceMatrix(Y.real.copy(), Y.imag.copy())


@dataclass(frozen=True)
class SystemState:
    """A point ``(x, z)``.  ``x`` is in device order; use ``x1``/``x2`` for the split."""

    x: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float).copy())
        object.__setattr__(self, "z", np.asarray(self.z, dtype=float).copy())
        self.x.setflags(write=False)
        self.z.setflags(write=False)

    def x1(self, system: "PowerSystem") -> np.ndarray:
        return self.x[system.x1_index]

    def x2(self, system: "PowerSystem") -> np.ndarray:
        return self.x[system.x2_index]

    @property
    def theta(self) -> np.ndarray:
        return self.z[0::2]

    @property
    def V(self) -> np.ndarray:
        return self.z[1::2]

    def replace(self, x=None, z=None) -> "SystemState":
        return SystemState(self.x if x is None else x, self.z if z is None else z)


@dataclass(frozen=True)
class JacobianBundle:
    df_dx: np.ndarray
    df_dz: np.ndarray
    dg_dx2: np.ndarray
    dg_dz: np.ndarray
    dg_dx: np.ndarray


class PowerSystem:
    """Network plus bus-attached devices.  Immutable after construction."""

    def __init__(self, n_bus: int, branches: Sequence[Branch],
                 devices: Iterable[tuple[int, Device]],
                 bus_shunts: dict[int, complex] | None = None,
                 base_mva: float = 100.0, name: str = "system"):
        if n_bus < 1:
            raise StructuralError("a system needs at least one bus")
        self.name = name
        self.n_bus = n_bus
        self.base_mva = base_mva
        self.branches = tuple(branches)
        self.admittance = build_admittance(self.branches, n_bus, bus_shunts)
        self._Y = self.admittance.Y

        attached = []
        for bus, dev in devices:
            if not 1 <= bus <= n_bus:
                raise StructuralError(f"device {dev.kind} attached to missing bus {bus}")
            attached.append((int(bus), dev))
        # stable sort keeps the given order among devices on the same bus
        attached.sort(key=lambda bd: bd[0])
        self.devices: tuple[tuple[int, Device], ...] = tuple(attached)

        fixed = [b for b, d in attached if d.fixes_voltage]
        if len(set(fixed)) != len(fixed):
            raise StructuralError("more than one infinite bus source on a bus")
        self._fixed = {b: d for b, d in attached if isinstance(d, InfiniteBus)}

        kinds = {}
        for b in range(1, n_bus + 1):
            devs = [d for bb, d in attached if bb == b]
            if any(d.fixes_voltage for d in devs):
                kinds[b] = BusKind.infinite
            elif any(d.is_dynamic for d in devs):
                kinds[b] = BusKind.device
            elif devs:
                kinds[b] = BusKind.load
            else:
                kinds[b] = BusKind.passive
        self.buses = tuple(Bus(b, kinds[b]) for b in range(1, n_bus + 1))

        slices, names, x1, x2 = [], [], [], []
        offset = 0
        for bus, dev in attached:
            k = dev.n_states
            slices.append(slice(offset, offset + k))
            for s in dev.state_names:
                names.append(f"{dev.kind}.{bus}.{s}")
            x1.extend(offset + i for i in dev.x1_local)
            x2.extend(offset + i for i in dev.x2_local)
            offset += k
        self.device_slices = tuple(slices)
        self.x_names: tuple[str, ...] = tuple(names)
        self.x1_index = np.array(x1, dtype=int)
        self.x2_index = np.array(x2, dtype=int)
        self.n = offset
        self.n1 = len(x1)
        self.n2 = len(x2)
        self.m = 2 * n_bus
        self.z_names = tuple(f"{q}{b}" for b in range(1, n_bus + 1) for q in ("theta", "V"))

    # ------------------------------------------------------------------ lookup
    def state_index(self, name: str) -> int:
        """Index of a state by full name (``kind.bus.state``), ``state<bus>`` or a unique short name."""
        if name in self.x_names:
            return self.x_names.index(name)
        hits = [i for i, full in enumerate(self.x_names) if full.split(".")[2] == name]
        if len(hits) == 1:
            return hits[0]
        hits = [i for i, full in enumerate(self.x_names)
                if full.split(".")[2] + full.split(".")[1] == name]
        if len(hits) == 1:
            return hits[0]
        raise StructuralError(f"state {name!r} not found (or ambiguous) in {self.name}")

    def devices_of_kind(self, kind: str) -> list[tuple[int, Device, slice]]:
        return [(b, d, s) for (b, d), s in zip(self.devices, self.device_slices) if d.kind == kind]

    def flat_start(self) -> SystemState:
        z = np.zeros(self.m)
        z[1::2] = 1.0
        for b, dev in self._fixed.items():
            z[2 * (b - 1)] = dev.theta0
            z[2 * (b - 1) + 1] = dev.V0
        x = np.zeros(self.n)
        for (bus, dev), sl in zip(self.devices, self.device_slices):
            x[sl] = dev.initial_guess(z[2 * (bus - 1)], z[2 * (bus - 1) + 1])
        return SystemState(x, z)

    # ------------------------------------------------------------- evaluation
    def _flows(self, z):
        theta, V = z[0::2], z[1::2]
        e = np.exp(1j * theta)
        Vc = V * e
        I = self._Y @ Vc
        return Vc * np.conj(I), Vc, e, I

    def f(self, x, z) -> np.ndarray:
        out = np.empty(self.n)
        for (bus, dev), sl in zip(self.devices, self.device_slices):
            if sl.stop > sl.start:
                out[sl] = dev.f(x[sl], z[2 * bus - 2], z[2 * bus - 1])
        return out

    def g(self, x, z) -> np.ndarray:
        S, _, _, _ = self._flows(z)
        res = np.empty(self.m)
        res[0::2] = -S.real
        res[1::2] = -S.imag
        for (bus, dev), sl in zip(self.devices, self.device_slices):
            i = 2 * (bus - 1)
            if dev.fixes_voltage:
                continue
            p, q = dev.injection(x[sl], z[i], z[i + 1])
            res[i] += p
            res[i + 1] += q
        for bus, dev in self._fixed.items():
            i = 2 * (bus - 1)
            res[i] = z[i] - dev.theta0
            res[i + 1] = z[i + 1] - dev.V0
        return res

    def _network_dgdz(self, z) -> np.ndarray:
        _, Vc, e, I = self._flows(z)
        Y = self._Y
        nb = self.n_bus
        d = np.arange(nb)
        # d S_flow / d theta and d S_flow / d V (MATPOWER dSbus_dV, polar form)
        dS_dth = -1j * Vc[:, None] * np.conj(Y * Vc[None, :])
        dS_dth[d, d] += 1j * Vc * np.conj(I)
        dS_dV = Vc[:, None] * np.conj(Y * e[None, :])
        dS_dV[d, d] += np.conj(I) * e
        m = self.m
        dg_dz = np.empty((m, m))
        dg_dz[0::2, 0::2] = -dS_dth.real
        dg_dz[0::2, 1::2] = -dS_dV.real
        dg_dz[1::2, 0::2] = -dS_dth.imag
        dg_dz[1::2, 1::2] = -dS_dV.imag
        return dg_dz

    def algebraic_jacobians(self, x, z) -> tuple[np.ndarray, np.ndarray]:
        """``(dg/dx, dg/dz)`` only; cheaper than the full bundle."""
        dg_dz = self._network_dgdz(z)
        dg_dx = np.zeros((self.m, self.n))
        for (bus, dev), sl in zip(self.devices, self.device_slices):
            if dev.fixes_voltage:
                continue
            i = 2 * (bus - 1)
            cx, cz = dev.dinjection(x[sl], z[i], z[i + 1])
            if sl.stop > sl.start:
                dg_dx[i:i + 2, sl] = cx
            dg_dz[i:i + 2, i:i + 2] += cz
        self._fix_rows(dg_dx, dg_dz)
        return dg_dx, dg_dz

    def _fix_rows(self, dg_dx, dg_dz):
        for bus in self._fixed:
            i = 2 * (bus - 1)
            dg_dz[i:i + 2, :] = 0.0
            dg_dz[i, i] = 1.0
            dg_dz[i + 1, i + 1] = 1.0
            dg_dx[i:i + 2, :] = 0.0

    def jacobians(self, x, z) -> JacobianBundle:
        n, m = self.n, self.m
        dg_dx, dg_dz = self.algebraic_jacobians(x, z)
        df_dx = np.zeros((n, n))
        df_dz = np.zeros((n, m))
        for (bus, dev), sl in zip(self.devices, self.device_slices):
            if sl.stop > sl.start:
                i = 2 * (bus - 1)
                a, b = dev.df(x[sl], z[i], z[i + 1])
                df_dx[sl, sl] = a
                df_dz[sl, i:i + 2] = b
        return JacobianBundle(df_dx, df_dz, dg_dx[:, self.x2_index], dg_dz, dg_dx)

    def dg_dz(self, x, z) -> np.ndarray:
        return self.algebraic_jacobians(x, z)[1]


def factor_dgdz(dg_dz: np.ndarray):
    """LU-factor dg/dz, raising ``SingularAlgebraicJacobian`` below ``RCOND_MIN``."""
    anorm = np.linalg.norm(dg_dz, 1)
    if not np.all(np.isfinite(dg_dz)) or anorm == 0.0:
        raise SingularAlgebraicJacobian(0.0)
    lu, piv, info = sla.lapack.dgetrf(dg_dz)
    if info > 0:
        raise SingularAlgebraicJacobian(0.0)
    rcond, _ = sla.lapack.dgecon(lu, anorm, norm="1")
    if rcond < RCOND_MIN:
        raise SingularAlgebraicJacobian(float(rcond))
    return lu, piv


def lu_solve(factor, rhs):
    lu, piv = factor
    sol, _ = sla.lapack.dgetrs(lu, piv, rhs)
    return sol


def _xz(state_or_x, z=None):
    if isinstance(state_or_x, SystemState):
        return state_or_x.x, state_or_x.z
    return np.asarray(state_or_x, dtype=float), np.asarray(z, dtype=float)


# ---------------------------------------------------------------- public API

def eval_g(system: PowerSystem, x2, z) -> np.ndarray:
    """Bus power-balance residuals given the ``x2`` states and algebraic vector."""
    x = np.zeros(system.n)
    x[system.x2_index] = x2
    return system.g(x, np.asarray(z, dtype=float))


def eval_f(system: PowerSystem, state: SystemState) -> tuple[np.ndarray, np.ndarray]:
    f = system.f(state.x, state.z)
    return f[system.x1_index], f[system.x2_index]


def eval_jacobians(system: PowerSystem, state: SystemState) -> JacobianBundle:
    return system.jacobians(state.x, state.z)


def h_from(system: PowerSystem, x, z, jac: JacobianBundle | None = None, f=None) -> np.ndarray:
    jac = jac or system.jacobians(x, z)
    f = system.f(x, z) if f is None else f
    fac = factor_dgdz(jac.dg_dz)
    return -lu_solve(fac, jac.dg_dx @ f)


def eval_h(system: PowerSystem, state: SystemState) -> np.ndarray:
    """z' of the embedded ODE: ``-(dg/dz)^-1 dg/dx2 f2``."""
    return h_from(system, state.x, state.z)


def reduced_jacobian_from(system: PowerSystem, x, z, jac: JacobianBundle | None = None) -> np.ndarray:
    jac = jac or system.jacobians(x, z)
    fac = factor_dgdz(jac.dg_dz)
    return jac.df_dx - jac.df_dz @ lu_solve(fac, jac.dg_dx)


def eval_reduced_jacobian(system: PowerSystem, state: SystemState) -> np.ndarray:
    """``J = df/dx - df/dz (dg/dz)^-1 dg/dx``."""
    return reduced_jacobian_from(system, state.x, state.z)


def det_dgdz(system: PowerSystem, x, z) -> tuple[float, float]:
    """Sign and log|det| of dg/dz."""
    sign, logabs = np.linalg.slogdet(system.dg_dz(x, z))
    return float(sign), float(logabs)
