"""AC power flow and device set-point initialisation.

Used to derive the ``auto`` parameters of a device file: a slack/PV/PQ power
flow fixes every bus voltage, then each dynamic device is initialised so that
it sits in steady state at its terminal (omega = 0, zeta = 0 for the PI
regulator).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import root

from .errors import NewtonDivergence, StructuralError


@dataclass(frozen=True)
class PowerFlowResult:
    theta: np.ndarray
    V: np.ndarray
    P: np.ndarray  # net injection per bus (generation minus load), pu
    Q: np.ndarray
    residual: float


def solve_power_flow(Y: np.ndarray, slack: int, pv: dict[int, tuple[float, float]],
                     loads: dict[int, tuple[float, float]], slack_V: float = 1.0,
                     tol: float = 1e-12) -> PowerFlowResult:
    """Solve the bus power flow.

    ``pv`` maps bus -> (P_gen, |V|); ``loads`` maps bus -> (P_d, Q_d); buses are
    1-based.  All remaining buses are PQ with zero generation.
    """
    n = Y.shape[0]
    P_sched = np.zeros(n)
    Q_sched = np.zeros(n)
    for b, (pd, qd) in loads.items():
        P_sched[b - 1] -= pd
        Q_sched[b - 1] -= qd
    for b, (pg, _) in pv.items():
        P_sched[b - 1] += pg
    s = slack - 1
    pv_idx = sorted(b - 1 for b in pv if b != slack)
    pq_idx = [i for i in range(n) if i != s and i not in pv_idx]
    ang_idx = [i for i in range(n) if i != s]

    V0 = np.ones(n)
    V0[s] = slack_V
    for b, (_, v) in pv.items():
        V0[b - 1] = v

    def unpack(u):
        th = np.zeros(n)
        V = V0.copy()
        th[ang_idx] = u[:len(ang_idx)]
        V[pq_idx] = u[len(ang_idx):]
        return th, V

    def mismatch(u):
        th, V = unpack(u)
        Vc = V * np.exp(1j * th)
        S = Vc * np.conj(Y @ Vc)
        return np.concatenate([S.real[ang_idx] - P_sched[ang_idx],
                               S.imag[pq_idx] - Q_sched[pq_idx]])

    u0 = np.concatenate([np.zeros(len(ang_idx)), np.ones(len(pq_idx))])
    sol = root(mismatch, u0, method="hybr", options={"xtol": 1e-14})
    res = float(np.max(np.abs(mismatch(sol.x)))) if sol.x.size else 0.0
    if not res <= max(tol, 1e-9):
        raise NewtonDivergence(f"power flow did not converge (residual {res:.2e})", res)
    th, V = unpack(sol.x)
    Vc = V * np.exp(1j * th)
    S = Vc * np.conj(Y @ Vc)
    return PowerFlowResult(th, V, S.real.copy(), S.imag.copy(), res)


def init_classical(P: float, Q: float, theta: float, V: float, x_d_prime: float):
    """Internal EMF (E, delta) behind x'_d delivering S = P + jQ at V/theta."""
    Vc = V * np.exp(1j * theta)
    I = np.conj((P + 1j * Q) / Vc)
    Eph = Vc + 1j * x_d_prime * I
    return float(abs(Eph)), float(np.angle(Eph))


def init_flux_decay(P: float, Q: float, theta: float, V: float, x_q: float, x_d: float,
                    x_d_prime: float):
    """Rotor angle, E'_q and field voltage E_f for steady operation at S = P + jQ."""
    Vc = V * np.exp(1j * theta)
    I = np.conj((P + 1j * Q) / Vc)
    delta = float(np.angle(Vc + 1j * x_q * I))
    a = delta - theta
    # rotate into the machine frame: q axis along delta
    i_rot = I * np.exp(-1j * (delta - np.pi / 2))
    i_d = i_rot.real
    v_q = V * np.cos(a)
    Eq = v_q + x_d_prime * i_d
    E_f = (x_d / x_d_prime) * Eq - (x_d - x_d_prime) * V * np.cos(a) / x_d_prime
    return delta, float(Eq), float(E_f)


def generator_buses(specs) -> list[int]:
    return sorted(d.bus for d in specs if d.kind in ("ClassicalSgPi", "FluxDecaySg", "InverterPq"))


def initialise_devices(case, device_file):
    """Fill every ``auto`` parameter of ``device_file`` from a power flow on ``case``.

    Returns ``(specs, flow)`` where ``specs`` is a list of fully numeric
    ``DeviceSpec`` and ``flow`` the ``PowerFlowResult``.
    """
    from .casefile import DeviceSpec
    from .model import build_admittance

    specs = device_file.devices
    gens = case.generators()
    slack = case.slack_bus()
    vset = device_file.generator_voltage
    dyn = {d.bus: d for d in specs if d.kind in ("ClassicalSgPi", "FluxDecaySg", "InverterPq")}
    if slack not in dyn and not any(d.kind == "InfiniteBus" and d.bus == slack for d in specs):
        raise StructuralError(f"reference bus {slack} has no generating device")

    def v_at(b):
        if isinstance(vset, dict):
            if b in vset:
                return vset[b]
            if 0 in vset:
                return vset[0]
        elif vset is not None:
            return float(vset)
        if b in gens:
            return gens[b]["V"]
        return 1.0

    def p_at(d):
        key = {"ClassicalSgPi": "P_g0", "FluxDecaySg": "P_g", "InverterPq": "P_ref"}[d.kind]
        if d.params.get(key) is not None:
            return d.params[key]
        if d.bus not in gens:
            raise StructuralError(f"bus {d.bus}: {key} is auto but the case has no generator there")
        return gens[d.bus]["P"]

    pv = {b: (p_at(d), v_at(b)) for b, d in dyn.items() if b != slack}
    loads = dict(case.loads())
    for d in specs:
        if d.kind == "ConstPqLoad":
            loads[d.bus] = (d.params["P_d"], d.params["Q_d"])
    Y = build_admittance(case.branches(), case.n_bus, case.bus_shunts()).Y
    flow = solve_power_flow(Y, slack, pv, loads, slack_V=v_at(slack))

    out = []
    for d in specs:
        params = dict(d.params)
        if d.auto:
            i = d.bus - 1
            pd, qd = loads.get(d.bus, (0.0, 0.0))
            P, Q = flow.P[i] + pd, flow.Q[i] + qd
            th, V = flow.theta[i], flow.V[i]
            if d.kind == "ClassicalSgPi":
                E, _ = init_classical(P, Q, th, V, params["x_d_prime"])
                derived = {"E": E, "P_g0": P}
            elif d.kind == "FluxDecaySg":
                _, _, E_f = init_flux_decay(P, Q, th, V, params["x_q"], params["x_d"],
                                            params["x_d_prime"])
                derived = {"P_g": P, "E_f": E_f}
            else:
                derived = {"P_ref": P, "Q_ref": Q, "theta_ref": th, "V_ref": V}
            for k in d.auto:
                params[k] = float(derived[k])
        out.append(DeviceSpec(d.bus, d.kind, params))
    return out, flow
