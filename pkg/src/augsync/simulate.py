"""Time integration of the embedded ODE ``x' = f(x, z), z' = h(x, z)``.

An explicit adaptive Runge-Kutta pair advances ``(x, z)`` together; ``z`` is
periodically re-projected onto ``g(x2, z) = 0`` (holding ``x``) so the
constraint, a first integral of the embedded ODE, does not drift.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np
from scipy.integrate import DOP853, RK45

from .errors import AugsyncError, NewtonDivergence, SingularAlgebraicJacobian, WindowTooLong
from .model import PowerSystem, SystemState, factor_dgdz, lu_solve


class OutsideDomain(AugsyncError):
    """The initial state lies outside the working domain box."""


class Termination(str, Enum):
    reached_t_end = "reached_t_end"
    impasse = "impasse"
    left_domain = "left_domain"
    diverged = "diverged"


@dataclass(frozen=True)
class IntegratorConfig:
    t_end: float = 100.0
    rel_tol: float = 1e-9
    abs_tol: float = 1e-11
    max_step: float = 0.1
    reprojection_interval: int = 50
    g_drift_tol: float = 1e-9
    g_tol: float = 1e-10
    method: str = "RK45"

    def __post_init__(self):
        for name in ("t_end", "rel_tol", "abs_tol", "max_step", "g_drift_tol", "g_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"IntegratorConfig.{name} must be > 0")
        if self.reprojection_interval < 1:
            raise ValueError("reprojection_interval must be >= 1")
        if self.method not in ("RK45", "DOP853"):
            raise ValueError("method must be RK45 or DOP853")


@dataclass(frozen=True)
class DomainBox:
    x_lo: np.ndarray
    x_hi: np.ndarray
    z_lo: np.ndarray
    z_hi: np.ndarray

    def __post_init__(self):
        for lo, hi in ((self.x_lo, self.x_hi), (self.z_lo, self.z_hi)):
            if np.any(np.asarray(lo) >= np.asarray(hi)):
                raise ValueError("domain box needs lower < upper componentwise")
        if np.any(np.asarray(self.z_lo)[1::2] <= 0):
            raise ValueError("voltage lower bounds must be > 0")

    @classmethod
    def default(cls, system: PowerSystem, theta: float = math.pi, V: tuple[float, float] = (0.5, 1.5),
                x_bound: float = 1e3) -> "DomainBox":
        z_lo = np.empty(system.m)
        z_hi = np.empty(system.m)
        z_lo[0::2], z_hi[0::2] = -theta, theta
        z_lo[1::2], z_hi[1::2] = V
        return cls(np.full(system.n, -x_bound), np.full(system.n, x_bound), z_lo, z_hi)

    def margin(self, x, z) -> float:
        """Smallest distance to a face; negative when outside."""
        return float(min(np.min(x - self.x_lo), np.min(self.x_hi - x),
                         np.min(z - self.z_lo), np.min(self.z_hi - z)))

    def contains(self, x, z) -> bool:
        return self.margin(x, z) >= 0.0


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    X: np.ndarray            # samples x states
    Z: np.ndarray            # samples x algebraic variables
    zdot_norm: np.ndarray
    f_norm: np.ndarray
    det_sign: np.ndarray
    det_logabs: np.ndarray
    termination: Termination
    x_names: tuple[str, ...]
    z_names: tuple[str, ...]
    v_value: np.ndarray | None = None
    message: str = ""
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.times)

    @property
    def states(self) -> list[SystemState]:
        return [SystemState(x, z) for x, z in zip(self.X, self.Z)]

    def state(self, k: int) -> SystemState:
        return SystemState(self.X[k], self.Z[k])

    @property
    def final(self) -> SystemState:
        return self.state(-1)

    @property
    def duration(self) -> float:
        return float(self.times[-1] - self.times[0])


# --------------------------------------------------------------- projection

def project_algebraic(system: PowerSystem, x2, z_guess, *, g_tol: float = 1e-10,
                      max_iter: int = 50) -> np.ndarray:
    """Solve ``g(x2, z) = 0`` for ``z`` by damped Newton from ``z_guess``."""
    x = np.zeros(system.n)
    x[system.x2_index] = x2
    z = np.array(z_guess, dtype=float)
    g = system.g(x, z)
    norm = np.linalg.norm(g, np.inf)
    for it in range(max_iter + 1):
        if not np.isfinite(norm):
            raise NewtonDivergence("non-finite algebraic residual", norm, it)
        if norm <= g_tol:
            return z
        if it == max_iter:
            break
        fac = factor_dgdz(system.dg_dz(x, z))
        step = -lu_solve(fac, g)
        lam = 1.0
        while True:
            zn = z + lam * step
            gn = system.g(x, zn)
            nn = np.linalg.norm(gn, np.inf)
            if np.isfinite(nn) and nn < (1 - 1e-4 * lam) * norm:
                break
            lam *= 0.5
            if lam < 1e-8:
                raise NewtonDivergence(f"algebraic Newton line search failed at |g|={norm:.3e}",
                                       norm, it)
        z, g, norm = zn, gn, nn
    raise NewtonDivergence(f"algebraic Newton did not converge in {max_iter} iterations "
                           f"(|g|={norm:.3e})", norm, max_iter)


def project_state(system: PowerSystem, state: SystemState, **kw) -> SystemState:
    z = project_algebraic(system, state.x[system.x2_index], state.z, **kw)
    return state.replace(z=z)


def embedded_rhs(system: PowerSystem, x, z):
    """``(f, h)`` of the embedded ODE."""
    dg_dx, dg_dz = system.algebraic_jacobians(x, z)
    f = system.f(x, z)
    h = -lu_solve(factor_dgdz(dg_dz), dg_dx @ f)
    return f, h


# -------------------------------------------------------------- integration

def integrate(system: PowerSystem, initial: SystemState, config: IntegratorConfig | None = None,
              domain: DomainBox | None = None, vfunc: Callable | None = None,
              t0: float = 0.0) -> Trajectory:
    """Integrate from ``initial`` to ``config.t_end``.

    ``vfunc(x, z)``, when given, is recorded as the ``v_value`` channel.
    Raises ``OutsideDomain`` when the initial state violates the box.
    """
    config = config or IntegratorConfig()
    domain = domain or DomainBox.default(system)
    n = system.n
    x0 = np.asarray(initial.x, float)
    if not domain.contains(x0, initial.z):
        raise OutsideDomain(f"initial state outside the domain box (margin "
                            f"{domain.margin(x0, initial.z):.3e})")
    z0 = project_algebraic(system, x0[system.x2_index], initial.z, g_tol=config.g_tol)
    if not domain.contains(x0, z0):
        raise OutsideDomain("initial state outside the domain box after algebraic projection")

    rec = _Recorder(system, vfunc)

    def rhs(t, y):
        f, h = embedded_rhs(system, y[:n], y[n:])
        return np.concatenate([f, h])

    stepper = RK45 if config.method == "RK45" else DOP853

    def make(t, y, first_step=None):
        return stepper(rhs, t, y, t0 + config.t_end, rtol=config.rel_tol, atol=config.abs_tol,
                       max_step=config.max_step, first_step=first_step)

    y = np.concatenate([x0, z0])
    try:
        rec.add(t0, x0, z0)
    except SingularAlgebraicJacobian as exc:
        return rec.finish(Termination.impasse, str(exc))
    try:
        solver = make(t0, y)
    except SingularAlgebraicJacobian as exc:
        return rec.finish(Termination.impasse, str(exc))
    since = 0
    while True:
        try:
            msg = solver.step()
        except SingularAlgebraicJacobian as exc:
            return rec.finish(Termination.impasse, f"t={solver.t:.6g}: {exc}")
        if solver.status == "failed":
            return rec.finish(Termination.diverged, f"t={solver.t:.6g}: {msg}")
        t, y = solver.t, solver.y
        if not np.all(np.isfinite(y)):
            return rec.finish(Termination.diverged, f"non-finite state at t={t:.6g}")
        x, z = y[:n], y[n:]
        since += 1
        gnorm = np.linalg.norm(system.g(x, z), np.inf)
        restart = gnorm > config.g_drift_tol or since >= config.reprojection_interval
        try:
            zp = project_algebraic(system, x[system.x2_index], z, g_tol=config.g_tol)
        except SingularAlgebraicJacobian as exc:
            return rec.finish(Termination.impasse, f"t={t:.6g}: {exc}")
        except NewtonDivergence as exc:
            return rec.finish(Termination.diverged, f"t={t:.6g}: {exc}")
        if not domain.contains(x, zp):
            rec.add(t, x, zp, check=False)
            return rec.finish(Termination.left_domain, f"left the domain box at t={t:.6g}")
        try:
            rec.add(t, x, zp)
        except SingularAlgebraicJacobian as exc:
            return rec.finish(Termination.impasse, f"t={t:.6g}: {exc}")
        if solver.status == "finished":
            return rec.finish(Termination.reached_t_end, "")
        if restart:
            h_last = solver.step_size
            try:
                first = min(h_last, config.max_step, t0 + config.t_end - t)
                solver = make(t, np.concatenate([x, zp]), first_step=first)
            except SingularAlgebraicJacobian as exc:
                return rec.finish(Termination.impasse, f"t={t:.6g}: {exc}")
            since = 0


class _Recorder:
    def __init__(self, system: PowerSystem, vfunc):
        self.system = system
        self.vfunc = vfunc
        self.t, self.x, self.z = [], [], []
        self.zn, self.fn, self.ds, self.dl, self.v = [], [], [], [], []

    def add(self, t, x, z, check: bool = True):
        s = self.system
        sign, logabs = np.linalg.slogdet(s.dg_dz(x, z))
        try:
            f, h = embedded_rhs(s, x, z)
            zn = float(np.linalg.norm(h))
        except SingularAlgebraicJacobian:
            if check:
                raise
            f, zn = s.f(x, z), float("nan")
        self.t.append(float(t))
        self.x.append(np.array(x, float))
        self.z.append(np.array(z, float))
        self.zn.append(zn)
        self.fn.append(float(np.linalg.norm(f)))
        self.ds.append(float(sign))
        self.dl.append(float(logabs))
        if self.vfunc is not None:
            self.v.append(float(self.vfunc(x, z)))

    def finish(self, term: Termination, message: str) -> Trajectory:
        s = self.system
        return Trajectory(
            np.array(self.t), np.array(self.x).reshape(len(self.t), s.n),
            np.array(self.z).reshape(len(self.t), s.m), np.array(self.zn), np.array(self.fn),
            np.array(self.ds), np.array(self.dl), term, s.x_names, s.z_names,
            np.array(self.v) if self.vfunc is not None else None, message)


# ---------------------------------------------------------------- properties

@dataclass(frozen=True)
class Property1Result:
    passed: bool
    trailing_max_zdot: float
    window: float
    min_domain_margin: float
    reason: str = ""


@dataclass(frozen=True)
class Property2Result:
    passed: bool
    stage_a: bool
    stage_b: bool
    trailing_max_f: float
    distance: float
    equilibrium: SystemState | None
    reason: str = ""


def _window_mask(traj: Trajectory, window: float | None) -> tuple[np.ndarray, float]:
    if window is None:
        window = 0.2 * traj.duration
    if window > traj.duration + 1e-12:
        raise WindowTooLong(f"window {window:g} s exceeds trajectory length {traj.duration:g} s")
    return traj.times >= traj.times[-1] - window, window


def check_property1(traj: Trajectory, zdot_threshold: float = 1e-4, window: float | None = None,
                    domain: DomainBox | None = None) -> Property1Result:
    """Trailing-window test of ``z`` bounded and ``z' -> 0``."""
    mask, window = _window_mask(traj, window)
    tail = float(np.max(traj.zdot_norm[mask]))
    margin = float("inf")
    if domain is not None:
        margin = min(domain.margin(x, z) for x, z in zip(traj.X, traj.Z))
    if traj.termination is not Termination.reached_t_end:
        return Property1Result(False, tail, window, margin, f"terminated: {traj.termination.value}")
    ok = tail <= zdot_threshold and margin >= 0
    reason = "" if ok else ("trailing |z'| above threshold" if tail > zdot_threshold
                            else "left the domain box")
    return Property1Result(ok, tail, window, margin, reason)


def check_property2(traj: Trajectory, system: PowerSystem, f_threshold: float = 1e-3,
                    window: float | None = None, dist_tol: float = 1e-3) -> Property2Result:
    """Stage (a): trailing ``|f|`` small.  Stage (b): distance from the final
    state to the equilibrium found by Gauss-Newton seeded there."""
    from .equilibrium import nearest_equilibrium

    mask, window = _window_mask(traj, window)
    tail = float(np.max(traj.f_norm[mask]))
    stage_a = tail <= f_threshold and traj.termination is Termination.reached_t_end
    final = traj.final
    try:
        eq = nearest_equilibrium(system, final)
    except (NewtonDivergence, SingularAlgebraicJacobian) as exc:
        return Property2Result(False, stage_a, False, tail, float("inf"), None,
                               f"equilibrium search failed: {exc}")
    dist = float(np.linalg.norm(np.concatenate([final.x - eq.x, final.z - eq.z])))
    stage_b = dist <= dist_tol
    reason = "" if (stage_a and stage_b) else ("trailing |f| above threshold" if not stage_a
                                               else "final state far from equilibrium set")
    return Property2Result(stage_a and stage_b, stage_a, stage_b, tail, dist, eq, reason)
