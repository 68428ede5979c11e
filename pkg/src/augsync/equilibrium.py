"""Equilibria of the DAE: Newton solves, continuation in the PI integrator state,
and the projected vector field around an equilibrium."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NewtonDivergence, RankDeficientWithoutPin, SingularAlgebraicJacobian, StructuralError
from .model import PowerSystem, SystemState, reduced_jacobian_from

# sigma_min / sigma_max below this marks the Newton matrix as rank deficient
RANK_RATIO = 1e-8

S1_PUBLISHED = np.array([1, 0, 1, 0, 1, 1, 1, 1], dtype=float) / np.sqrt(6.0)
S2_PUBLISHED = np.array([0, 1, 0, 1, 0, 0, 0, 0], dtype=float) / np.sqrt(2.0)


@dataclass(frozen=True)
class EquilibriumPoint:
    state: SystemState
    f_residual: float
    g_residual: float
    eigenvalues: np.ndarray = field(repr=False)
    iterations: int = 0
    pin: tuple[tuple[str, float], ...] | None = None

    def as_dict(self, system: PowerSystem) -> dict:
        return {
            "x": dict(zip(system.x_names, map(float, self.state.x))),
            "z": dict(zip(system.z_names, map(float, self.state.z))),
            "f_residual_inf": self.f_residual,
            "g_residual_inf": self.g_residual,
            "iterations": self.iterations,
            "pin": None if self.pin is None else [{"variable": n, "value": v} for n, v in self.pin],
            "reduced_jacobian_eigenvalues": [[float(e.real), float(e.imag)] for e in self.eigenvalues],
        }


def _residual(system, x, z, pin_idx, pin_val):
    F = np.concatenate([system.f(x, z), system.g(x, z)])
    if pin_idx is not None:
        F[pin_idx] = x[pin_idx] - pin_val
    return F


def _normalise_pins(system, pinned):
    """``(name, value)`` or a sequence of them -> (index array, value array)."""
    if pinned is None:
        return None, None, None
    if isinstance(pinned[0], str):
        pinned = [pinned]
    names = [system.x_names[system.state_index(nm)] for nm, _ in pinned]
    idx = np.array([system.state_index(nm) for nm, _ in pinned], dtype=int)
    if len(set(idx.tolist())) != len(idx):
        raise ValueError("a state is pinned twice")
    vals = np.array([float(v) for _, v in pinned])
    return idx, vals, tuple(zip(names, vals.tolist()))


def _newton_matrix(system, x, z, pin_idx):
    jac = system.jacobians(x, z)
    n = system.n
    K = np.block([[jac.df_dx, jac.df_dz], [jac.dg_dx, jac.dg_dz]])
    if pin_idx is not None:
        K[pin_idx, :] = 0.0
        K[pin_idx, pin_idx] = 1.0
    assert K.shape == (n + system.m, n + system.m)
    return K


def _spectrum(system, x, z):
    try:
        return np.linalg.eigvals(reduced_jacobian_from(system, x, z))
    except SingularAlgebraicJacobian:
        return np.full(system.n, np.nan + 0j)


def solve_equilibrium(system: PowerSystem, seed: SystemState | None = None,
                      pinned=None, *, tol: float = 1e-10,
                      max_iter: int = 50) -> EquilibriumPoint:
    """Damped Newton on ``col(f, g) = 0``.

    ``pinned = (name, value)`` fixes one state; its own derivative row is
    replaced by ``x_pin - value`` (on a continuum that row is redundant).
    A list of such pairs fixes several states (e.g. an integrator that is
    switched off plus an angle reference).
    Without a pin a rank-deficient Newton matrix raises ``RankDeficientWithoutPin``.
    """
    seed = seed or system.flat_start()
    x, z = np.array(seed.x, dtype=float), np.array(seed.z, dtype=float)
    pin_idx, pin_val, pin_rec = _normalise_pins(system, pinned)
    if pin_idx is not None:
        x[pin_idx] = pin_val
    n = system.n

    F = _residual(system, x, z, pin_idx, pin_val)
    norm = np.linalg.norm(F, np.inf)
    it = 0
    while norm > tol:
        if it >= max_iter:
            raise NewtonDivergence(f"equilibrium Newton stalled at |F|={norm:.3e}", norm, it)
        K = _newton_matrix(system, x, z, pin_idx)
        if pin_idx is None:
            sv = np.linalg.svd(K, compute_uv=False)
            ratio = sv[-1] / sv[0] if sv[0] > 0 else 0.0
            if ratio < RANK_RATIO:
                raise RankDeficientWithoutPin(ratio)
        try:
            step = np.linalg.solve(K, -F)
        except np.linalg.LinAlgError:
            raise NewtonDivergence("singular Newton matrix", norm, it) from None
        lam = 1.0
        while True:
            xn, zn = x + lam * step[:n], z + lam * step[n:]
            Fn = _residual(system, xn, zn, pin_idx, pin_val)
            nn = np.linalg.norm(Fn, np.inf)
            if np.isfinite(nn) and nn < (1 - 1e-4 * lam) * norm:
                break
            lam *= 0.5
            if lam < 1e-6:
                raise NewtonDivergence(f"line search failed at |F|={norm:.3e}", norm, it)
        x, z, F, norm = xn, zn, Fn, nn
        it += 1

    if pin_idx is None and it == 0:
        # already converged seed: still report rank deficiency honestly
        K = _newton_matrix(system, x, z, None)
        sv = np.linalg.svd(K, compute_uv=False)
        if sv[-1] / sv[0] < RANK_RATIO:
            raise RankDeficientWithoutPin(sv[-1] / sv[0])
    fres = float(np.linalg.norm(system.f(x, z), np.inf))
    gres = float(np.linalg.norm(system.g(x, z), np.inf))
    return EquilibriumPoint(SystemState(x, z), fres, gres, _spectrum(system, x, z), it, pin_rec)


def nearest_equilibrium(system: PowerSystem, state: SystemState, *, tol: float = 1e-10,
                        max_iter: int = 50) -> SystemState:
    """Gauss-Newton with minimum-norm steps; lands on the nearest point of a continuum."""
    x, z = np.array(state.x, dtype=float), np.array(state.z, dtype=float)
    n = system.n
    for it in range(max_iter + 1):
        F = np.concatenate([system.f(x, z), system.g(x, z)])
        norm = np.linalg.norm(F, np.inf)
        if not np.isfinite(norm):
            raise NewtonDivergence("non-finite residual", norm, it)
        if norm <= tol:
            return SystemState(x, z)
        if it == max_iter:
            break
        K = _newton_matrix(system, x, z, None)
        step = np.linalg.lstsq(K, -F, rcond=1e-10)[0]
        lam = 1.0
        while lam >= 1e-6:
            xn, zn = x + lam * step[:n], z + lam * step[n:]
            Fn = np.concatenate([system.f(xn, zn), system.g(xn, zn)])
            if np.linalg.norm(Fn, np.inf) < norm:
                break
            lam *= 0.5
        else:
            raise NewtonDivergence(f"Gauss-Newton line search failed at |F|={norm:.3e}", norm, it)
        x, z = xn, zn
    raise NewtonDivergence(f"Gauss-Newton stalled at |F|={norm:.3e}", norm, max_iter)


# ------------------------------------------------------------- continuation

SUMMARY_CHANNELS = ("zeta", "delta1", "delta2", "Eq_prime", "P3", "Q3", "mean_theta", "mean_V")


@dataclass(frozen=True)
class ContinuumTrace:
    parameter: str
    values: np.ndarray
    points: tuple[EquilibriumPoint, ...]

    def channel(self, system: PowerSystem, name: str) -> np.ndarray:
        if name == "mean_theta":
            return np.array([p.state.theta.mean() for p in self.points])
        if name == "mean_V":
            return np.array([p.state.V.mean() for p in self.points])
        idx = system.state_index(name)
        return np.array([p.state.x[idx] for p in self.points])

    def summary(self, system: PowerSystem) -> dict[str, np.ndarray]:
        out = {}
        for ch in SUMMARY_CHANNELS:
            try:
                out[ch] = self.channel(system, ch)
            except StructuralError:
                continue
        return out


def continuation_values(lo: float, hi: float, step: float) -> np.ndarray:
    if step <= 0:
        raise ValueError("continuation step must be > 0")
    k = int(np.floor((hi - lo) / step + 1e-9))
    return np.round(lo + step * np.arange(k + 1), 12)


def trace_continuum(system: PowerSystem, start: EquilibriumPoint, parameter: str = "zeta",
                    values=None, *, lo: float = -0.1, hi: float = 0.1, step: float = 0.01
                    ) -> ContinuumTrace:
    """Natural continuation: solve with ``parameter`` pinned at each value,
    seeded by the nearest already-solved neighbour, sweeping outward from ``start``."""
    idx = system.state_index(parameter)  # raises StructuralError if absent
    name = system.x_names[idx]
    vals = continuation_values(lo, hi, step) if values is None else np.asarray(values, float)
    p0 = start.state.x[idx]
    order = np.argsort(np.abs(vals - p0), kind="stable")
    solved: dict[int, EquilibriumPoint] = {}
    for k in order:
        done = list(solved)
        if done:
            nb = min(done, key=lambda j: abs(vals[j] - vals[k]))
            seed = solved[nb].state
            if abs(vals[nb] - vals[k]) > abs(p0 - vals[k]):
                seed = start.state
        else:
            seed = start.state
        try:
            solved[k] = solve_equilibrium(system, seed, (name, float(vals[k])))
        except NewtonDivergence as exc:
            raise NewtonDivergence(f"continuation failed at {parameter}={vals[k]:.6g}: {exc}",
                                   exc.residual, exc.iterations) from None
    return ContinuumTrace(name, vals, tuple(solved[k] for k in range(len(vals))))


# ------------------------------------------------------------ vector field

@dataclass(frozen=True)
class ProjectedField:
    a: np.ndarray          # offsets along s1
    b: np.ndarray          # offsets along s2
    u: np.ndarray          # f . s1, shape (len(b), len(a)); NaN where projection failed
    v: np.ndarray          # f . s2
    missing: tuple[tuple[int, int], ...]


def tangent_plane_field(system: PowerSystem, at: EquilibriumPoint, s1=None, s2=None,
                        grid: int = 11, span: float = 0.1, a=None, b=None) -> ProjectedField:
    """Project f onto span(s1, s2) on a grid of offsets ``x* + a s1 + b s2``."""
    from .simulate import project_algebraic

    s1 = S1_PUBLISHED if s1 is None else np.asarray(s1, float)
    s2 = S2_PUBLISHED if s2 is None else np.asarray(s2, float)
    if s1.shape != (system.n,) or s2.shape != (system.n,):
        raise StructuralError(f"direction vectors must have length {system.n}")
    if abs(np.linalg.norm(s1) - 1) > 1e-9 or abs(np.linalg.norm(s2) - 1) > 1e-9 or abs(s1 @ s2) > 1e-9:
        raise ValueError("s1, s2 must be orthonormal")
    a = np.linspace(-span, span, grid) if a is None else np.atleast_1d(np.asarray(a, float))
    b = np.linspace(-span, span, grid) if b is None else np.atleast_1d(np.asarray(b, float))
    u = np.full((len(b), len(a)), np.nan)
    v = np.full((len(b), len(a)), np.nan)
    missing = []
    x0, z0 = at.state.x, at.state.z
    for i, bb in enumerate(b):
        for j, aa in enumerate(a):
            x = x0 + aa * s1 + bb * s2
            try:
                z = project_algebraic(system, x[system.x2_index], z0)
            except (NewtonDivergence, SingularAlgebraicJacobian):
                missing.append((i, j))
                continue
            f = system.f(x, z)
            u[i, j] = f @ s1
            v[i, j] = f @ s2
    return ProjectedField(a, b, u, v, tuple(missing))
