"""Bus-attached device models.

Every device owns a local state vector ``x`` (possibly empty) and sees only the
voltage phasor ``(theta, V)`` of its own bus.  It contributes

* its state derivative ``f(x, theta, V)``,
* a complex power injection ``(P, Q)`` into the bus power balance.

Local Jacobians are analytic.  ``x1_local`` lists the local states that do not
enter the injection; ``x2_local`` the ones that do.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import ClassVar

import numpy as np
from scipy.optimize import brentq

from .errors import StructuralError


def _require_positive(obj, *names):
    for name in names:
        value = getattr(obj, name)
        if not value > 0:
            raise StructuralError(f"{type(obj).__name__}.{name} must be > 0, got {value!r}")


@dataclass(frozen=True)
class Device:
    kind: ClassVar[str] = "Device"
    state_names: ClassVar[tuple[str, ...]] = ()
    x1_local: ClassVar[tuple[int, ...]] = ()
    x2_local: ClassVar[tuple[int, ...]] = ()
    # True when the device replaces the bus power balance by a voltage constraint
    fixes_voltage: ClassVar[bool] = False

    @property
    def n_states(self) -> int:
        return len(self.state_names)

    @property
    def is_dynamic(self) -> bool:
        return self.n_states > 0

    def f(self, x, theta, V):
        return np.zeros(0)

    def df(self, x, theta, V):
        """Return ``(df/dx, df/dz_local)`` with shapes (k, k) and (k, 2)."""
        k = self.n_states
        return np.zeros((k, k)), np.zeros((k, 2))

    def injection(self, x, theta, V):
        return 0.0, 0.0

    def dinjection(self, x, theta, V):
        """Return ``(d(P,Q)/dx, d(P,Q)/d(theta,V))`` with shapes (2, k) and (2, 2)."""
        return np.zeros((2, self.n_states)), np.zeros((2, 2))

    def initial_guess(self, theta: float, V: float) -> np.ndarray:
        return np.zeros(self.n_states)

    def params(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class ClassicalSgPi(Device):
    """Classical generator (constant E behind x'_d) with a PI speed regulator.

    Local states ``(zeta, omega, delta)``; the regulator output is
    ``u = -k1*omega + zeta`` with ``zeta' = -k2*omega``.
    """

    M: float
    D: float
    E: float
    x_d_prime: float
    P_g0: float
    k1: float
    k2: float

    kind: ClassVar[str] = "ClassicalSgPi"
    state_names: ClassVar[tuple[str, ...]] = ("zeta", "omega", "delta")
    x1_local: ClassVar[tuple[int, ...]] = (0, 1)
    x2_local: ClassVar[tuple[int, ...]] = (2,)

    def __post_init__(self):
        _require_positive(self, "M", "D", "E", "x_d_prime")
        # k1 = k2 = 0 is allowed: it disables the regulator (pure swing machine)
        if self.k1 < 0 or self.k2 < 0:
            raise StructuralError("ClassicalSgPi gains k1, k2 must be >= 0")

    def electrical_power(self, delta, theta, V):
        a = delta - theta
        xd = self.x_d_prime
        return self.E * V * np.sin(a) / xd, self.E * V * np.cos(a) / xd - V * V / xd

    def f(self, x, theta, V):
        zeta, omega, delta = x
        pe, _ = self.electrical_power(delta, theta, V)
        u = -self.k1 * omega + zeta
        return np.array([
            -self.k2 * omega,
            (-self.D * omega - pe + self.P_g0 + u) / self.M,
            omega,
        ])

    def df(self, x, theta, V):
        zeta, omega, delta = x
        a = delta - theta
        xd = self.x_d_prime
        dpe_da = self.E * V * np.cos(a) / xd
        dpe_dV = self.E * np.sin(a) / xd
        M = self.M
        dfdx = np.array([
            [0.0, -self.k2, 0.0],
            [1.0 / M, -(self.D + self.k1) / M, -dpe_da / M],
            [0.0, 1.0, 0.0],
        ])
        dfdz = np.array([
            [0.0, 0.0],
            [dpe_da / M, -dpe_dV / M],
            [0.0, 0.0],
        ])
        return dfdx, dfdz

    def injection(self, x, theta, V):
        return self.electrical_power(x[2], theta, V)

    def dinjection(self, x, theta, V):
        a = x[2] - theta
        xd = self.x_d_prime
        s, c = np.sin(a), np.cos(a)
        dP_da = self.E * V * c / xd
        dQ_da = -self.E * V * s / xd
        dx = np.array([[0.0, 0.0, dP_da], [0.0, 0.0, dQ_da]])
        dz = np.array([
            [-dP_da, self.E * s / xd],
            [-dQ_da, self.E * c / xd - 2.0 * V / xd],
        ])
        return dx, dz

    def initial_guess(self, theta, V):
        # rotor angle delivering P_g0 at the given terminal voltage (zeta = 0)
        r = np.clip(self.P_g0 * self.x_d_prime / (self.E * V), -1.0, 1.0)
        return np.array([0.0, 0.0, theta + np.arcsin(r)])


@dataclass(frozen=True)
class FluxDecaySg(Device):
    """Third-order (flux-decay) synchronous generator, local states ``(omega, delta, Eq')``."""

    M: float
    D: float
    T_d0_prime: float
    x_q: float
    x_d: float
    x_d_prime: float
    P_g: float
    E_f: float

    kind: ClassVar[str] = "FluxDecaySg"
    state_names: ClassVar[tuple[str, ...]] = ("omega", "delta", "Eq_prime")
    x1_local: ClassVar[tuple[int, ...]] = (0,)
    x2_local: ClassVar[tuple[int, ...]] = (1, 2)

    def __post_init__(self):
        _require_positive(self, "M", "D", "T_d0_prime", "x_q", "x_d", "x_d_prime")
        if not self.x_d > self.x_d_prime:
            raise StructuralError("FluxDecaySg requires x_d > x_d_prime")

    @property
    def _c(self) -> float:
        return (self.x_d_prime - self.x_q) / (2.0 * self.x_q * self.x_d_prime)

    def electrical_power(self, delta, Eq, theta, V):
        a = delta - theta
        xd1 = self.x_d_prime
        c = self._c
        pe = c * V * V * np.sin(2 * a) + Eq * V * np.sin(a) / xd1
        qe = (c * V * V * np.cos(2 * a) + Eq * V * np.cos(a) / xd1
              - (xd1 + self.x_q) / (2.0 * self.x_q * xd1) * V * V)
        return pe, qe

    def f(self, x, theta, V):
        omega, delta, Eq = x
        pe, _ = self.electrical_power(delta, Eq, theta, V)
        xd1 = self.x_d_prime
        dEq = (-(self.x_d / xd1) * Eq + (self.x_d - xd1) * V * np.cos(delta - theta) / xd1
               + self.E_f) / self.T_d0_prime
        return np.array([(-self.D * omega - pe + self.P_g) / self.M, omega, dEq])

    def df(self, x, theta, V):
        omega, delta, Eq = x
        (dP_dx, dP_dz) = self.dinjection(x, theta, V)
        M, T = self.M, self.T_d0_prime
        xd1 = self.x_d_prime
        a = delta - theta
        k = (self.x_d - xd1) / (xd1 * T)
        dfdx = np.array([
            [-self.D / M, -dP_dx[0, 1] / M, -dP_dx[0, 2] / M],
            [1.0, 0.0, 0.0],
            [0.0, -k * V * np.sin(a), -self.x_d / (xd1 * T)],
        ])
        dfdz = np.array([
            [-dP_dz[0, 0] / M, -dP_dz[0, 1] / M],
            [0.0, 0.0],
            [k * V * np.sin(a), k * np.cos(a)],
        ])
        return dfdx, dfdz

    def injection(self, x, theta, V):
        return self.electrical_power(x[1], x[2], theta, V)

    def dinjection(self, x, theta, V):
        _, delta, Eq = x
        a = delta - theta
        xd1 = self.x_d_prime
        c = self._c
        s, co = np.sin(a), np.cos(a)
        s2, c2 = np.sin(2 * a), np.cos(2 * a)
        dP_da = 2 * c * V * V * c2 + Eq * V * co / xd1
        dQ_da = -2 * c * V * V * s2 - Eq * V * s / xd1
        dx = np.array([
            [0.0, dP_da, V * s / xd1],
            [0.0, dQ_da, V * co / xd1],
        ])
        dz = np.array([
            [-dP_da, 2 * c * V * s2 + Eq * s / xd1],
            [-dQ_da, 2 * c * V * c2 + Eq * co / xd1 - (xd1 + self.x_q) / (self.x_q * xd1) * V],
        ])
        return dx, dz

    def det_dg_dx2(self, delta, Eq, theta, V) -> float:
        """Closed-form determinant of the 2x2 block d(P,Q)/d(delta, Eq')."""
        xd1 = self.x_d_prime
        return V * V / xd1**2 * ((xd1 - self.x_q) / self.x_q * V * np.cos(delta - theta) + Eq)

    def steady_Eq(self, a, V):
        """E'_q with dEq'/dt = 0 at rotor angle ``a = delta - theta``."""
        return (self.x_d_prime * self.E_f + (self.x_d - self.x_d_prime) * V * np.cos(a)) / self.x_d

    def initial_guess(self, theta, V):
        # steady state delivering P_g at the given terminal voltage
        def mismatch(a):
            return self.electrical_power(theta + a, self.steady_Eq(a, V), theta, V)[0] - self.P_g

        grid = np.linspace(0.0, np.pi / 2, 91) * np.sign(self.P_g or 1.0)
        vals = [mismatch(a) for a in grid]
        a = 0.0
        for a0, a1, v0, v1 in zip(grid[:-1], grid[1:], vals[:-1], vals[1:]):
            if v0 == 0.0 or v0 * v1 < 0:
                a = a0 if v0 == 0.0 else brentq(mismatch, min(a0, a1), max(a0, a1))
                break
        return np.array([0.0, theta + a, self.steady_Eq(a, V)])


@dataclass(frozen=True)
class InverterPq(Device):
    """Inverter-interfaced source with first-order P-theta / Q-V droop, states ``(P, Q)``."""

    tau1: float
    tau2: float
    d1: float
    d2: float
    P_ref: float
    Q_ref: float
    theta_ref: float
    V_ref: float

    kind: ClassVar[str] = "InverterPq"
    state_names: ClassVar[tuple[str, ...]] = ("P", "Q")
    x1_local: ClassVar[tuple[int, ...]] = ()
    x2_local: ClassVar[tuple[int, ...]] = (0, 1)

    def __post_init__(self):
        _require_positive(self, "tau1", "tau2", "d1", "d2")

    def f(self, x, theta, V):
        P, Q = x
        return np.array([
            (-P + self.P_ref - self.d1 * (theta - self.theta_ref)) / self.tau1,
            (-Q + self.Q_ref - self.d2 * (V - self.V_ref)) / self.tau2,
        ])

    def df(self, x, theta, V):
        dfdx = np.diag([-1.0 / self.tau1, -1.0 / self.tau2])
        dfdz = np.diag([-self.d1 / self.tau1, -self.d2 / self.tau2])
        return dfdx, dfdz

    def injection(self, x, theta, V):
        return x[0], x[1]

    def dinjection(self, x, theta, V):
        return np.eye(2), np.zeros((2, 2))

    def initial_guess(self, theta, V):
        return np.array([self.P_ref, self.Q_ref])


@dataclass(frozen=True)
class ConstPqLoad(Device):
    """Constant-power load; injects ``(-P_d, -Q_d)``."""

    P_d: float
    Q_d: float

    kind: ClassVar[str] = "ConstPqLoad"

    def injection(self, x, theta, V):
        return -self.P_d, -self.Q_d


@dataclass(frozen=True)
class InfiniteBus(Device):
    """Stiff voltage source.  Its bus rows of g become ``theta - theta0`` and ``V - V0``."""

    V0: float = 1.0
    theta0: float = 0.0

    kind: ClassVar[str] = "InfiniteBus"
    fixes_voltage: ClassVar[bool] = True


DEVICE_KINDS: dict[str, type[Device]] = {
    cls.kind: cls for cls in (ClassicalSgPi, FluxDecaySg, InverterPq, ConstPqLoad, InfiniteBus)
}

DYNAMIC_KINDS = ("ClassicalSgPi", "FluxDecaySg", "InverterPq")


def make_device(kind: str, **params) -> Device:
    try:
        cls = DEVICE_KINDS[kind]
    except KeyError:
        raise StructuralError(f"unknown device kind {kind!r}") from None
    names = {f.name for f in fields(cls)}
    extra = sorted(set(params) - names)
    if extra:
        raise StructuralError(f"{kind}: unknown parameter(s) {', '.join(extra)}")
    try:
        return cls(**{k: float(v) for k, v in params.items()})
    except TypeError as exc:
        raise StructuralError(f"{kind}: {exc}") from None
