"""Region-of-attraction certificates for convergence of an output ``eta`` to zero.

Three V-function routes are checked by sampling:

* Type I, Krasovskii form ``V = f' P f`` with the relaxed matrix inequality
  ``A' (P J + J' P) A < 0`` on the reduced Jacobian ``J``;
* Type II, ``V`` bounded below with ``V' <= -gamma(|eta|)`` and bounded ``V''``;
* Type III, ``V' <= 0`` on a compact invariant region whose zero set is
  closed off by the per-device detectability certificates.

Every certificate is evidence from finitely many samples (``sampling_only``).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np
import scipy.linalg as sla

from .detectability import DetectabilityStatus, DetectabilityVerdict, DeviceCertificate, certify_device
from .errors import ClaimUnavailable, Infeasible, NewtonDivergence, SingularAlgebraicJacobian, UnknownDeviceKind
from .model import RCOND_MIN, PowerSystem, SystemState, factor_dgdz, lu_solve, reduced_jacobian_from
from .simulate import DomainBox, embedded_rhs, project_algebraic


@dataclass(frozen=True)
class KappaFn:
    """Class-K comparison function ``s -> c s^p``."""

    c: float
    p: float = 2.0

    def __post_init__(self):
        if not self.c > 0 or not self.p >= 1:
            raise ValueError("KappaFn needs c > 0 and p >= 1")

    def __call__(self, s):
        return self.c * np.power(s, self.p)

    def as_dict(self) -> dict:
        return {"c": self.c, "p": self.p}


class EtaSelector(str, Enum):
    """Output whose convergence to zero is certified.

    ``eta_is_f2`` is the default: on non-degenerate sets ``h`` is a bounded
    linear image of ``f2``, so ``f2 -> 0`` implies ``h = z' -> 0``.
    """

    eta_is_f2 = "eta_is_f2"
    eta_is_h = "eta_is_h"

    def evaluate(self, system: PowerSystem, x, z) -> np.ndarray:
        if self is EtaSelector.eta_is_f2:
            return system.f(x, z)[system.x2_index]
        return embedded_rhs(system, x, z)[1]


# -------------------------------------------------------------- Type I

def relaxation_matrix(system: PowerSystem) -> tuple[np.ndarray, np.ndarray]:
    """``(A, keep)`` with ``f = A f[keep]`` identically.

    Each PI integrator state obeys ``zeta' = -k2 omega = -k2 delta'`` so its
    row is dropped from ``xi`` and reconstructed from the ``delta'`` entry.
    """
    dependent = {}
    for bus, dev, sl in system.devices_of_kind("ClassicalSgPi"):
        dependent[sl.start] = (sl.start + 2, -dev.k2)
    keep = np.array([i for i in range(system.n) if i not in dependent], dtype=int)
    pos = {int(i): j for j, i in enumerate(keep)}
    A = np.zeros((system.n, len(keep)))
    for j, i in enumerate(keep):
        A[i, j] = 1.0
    for i, (src, coef) in dependent.items():
        A[i, pos[src]] = coef
    return A, keep


@dataclass(frozen=True)
class KrasovskiiV:
    P: np.ndarray
    A: np.ndarray
    keep: np.ndarray
    level: float = 4.0
    eta: EtaSelector = EtaSelector.eta_is_f2

    def __post_init__(self):
        P = np.asarray(self.P, float)
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise ValueError("P must be square")
        if not np.allclose(P, P.T, rtol=0, atol=1e-12 * max(1.0, np.abs(P).max())):
            raise ValueError("P must be symmetric")
        if P.shape[0] != self.A.shape[0]:
            raise ValueError("P and A dimensions disagree")
        if np.linalg.eigvalsh(P)[0] <= 0:
            raise ValueError("P must be positive definite")

    @classmethod
    def for_system(cls, system: PowerSystem, P, level: float = 4.0,
                   eta: EtaSelector = EtaSelector.eta_is_f2) -> "KrasovskiiV":
        A, keep = relaxation_matrix(system)
        P = np.asarray(P, float)
        return cls(0.5 * (P + P.T), A, keep, level, eta)

    @property
    def alpha(self) -> KappaFn:
        return KappaFn(float(np.linalg.eigvalsh(self.P)[0]), 2.0)

    @property
    def beta(self) -> KappaFn:
        return KappaFn(float(np.linalg.eigvalsh(self.P)[-1]), 2.0)

    def __call__(self, x, z, system: PowerSystem | None = None) -> float:
        raise TypeError("bind the V-function to a system with .bind(system)")

    def bind(self, system: PowerSystem) -> Callable:
        P = self.P

        def value(x, z):
            f = system.f(x, z)
            return float(f @ P @ f)
        return value

    def relaxation_residual(self, system: PowerSystem, states) -> float:
        res = 0.0
        for s in states:
            f = system.f(s.x, s.z)
            res = max(res, float(np.max(np.abs(f - self.A @ f[self.keep]))))
        return res

    def descriptor(self) -> dict:
        return {"type": "krasovskii", "P": self.P.tolist(), "level": self.level,
                "eta": self.eta.value, "alpha": self.alpha.as_dict(), "beta": self.beta.as_dict()}


def krasovskii_value(system: PowerSystem, P, state: SystemState) -> float:
    f = system.f(state.x, state.z)
    return float(f @ np.asarray(P, float) @ f)


def krasovskii_vdot_matrix(system: PowerSystem, P, A, state: SystemState) -> np.ndarray:
    """``A' (P J + J' P) A`` at ``state``."""
    J = reduced_jacobian_from(system, state.x, state.z)
    P = np.asarray(P, float)
    M = A.T @ (P @ J) @ A
    return M + M.T


def lmi_lambda_max(system: PowerSystem, P, A, state: SystemState) -> float:
    return float(np.linalg.eigvalsh(krasovskii_vdot_matrix(system, P, A, state))[-1])


@dataclass(frozen=True)
class FitResult:
    P: np.ndarray
    objective: float
    iterations: int
    history: np.ndarray = field(repr=False)


def _batched_lmi(P, JA, A):
    M = A.T @ (P @ JA)
    M = M + np.swapaxes(M, 1, 2)
    lam, vec = np.linalg.eigh(M)
    return lam[:, -1], vec[:, :, -1]


def _clip_eigs(P, lo, hi):
    P = 0.5 * (P + P.T)
    w, U = np.linalg.eigh(P)
    return (U * np.clip(w, lo, hi)) @ U.T


def fit_P(system: PowerSystem, sample_states, epsilon: float = 1e-3, delta: float = 1e-3, *,
          A: np.ndarray | None = None, p_max: float = 1.0, max_iter: int = 20000,
          P0: np.ndarray | None = None, target: float | None = None,
          active_tol: float = 1e-3, jacobians: list[np.ndarray] | None = None) -> FitResult:
    """Projected subgradient descent on ``max_k lambda_max(A'(P J_k + J_k' P)A)``.

    The subgradient averages ``u (J u)' + (J u) u'`` over the samples within
    ``active_tol`` of the maximum (``u = A v``, ``v`` the top eigenvector);
    the step is Polyak's with a target objective below ``-delta``.  After each
    step ``P`` is symmetrised and its eigenvalues clipped to
    ``[epsilon, p_max]``.  Returns as soon as the objective is below ``-delta``;
    raises ``Infeasible`` otherwise.
    """
    if A is None:
        A, _ = relaxation_matrix(system)
    if jacobians is None:
        jacobians = [reduced_jacobian_from(system, s.x, s.z) for s in sample_states]
    Js = np.asarray(jacobians, float)
    if Js.ndim == 2:
        Js = Js[None]
    n = Js.shape[1]
    JA = Js @ A
    target = -5.0 * delta if target is None else target
    P = _clip_eigs(np.eye(n) * 0.5 * (epsilon + p_max) if P0 is None else np.asarray(P0, float),
                   epsilon, p_max)
    best, best_P = np.inf, P
    hist = []
    for it in range(max_iter):
        lam, vec = _batched_lmi(P, JA, A)
        phi = float(lam.max())
        hist.append(phi)
        if phi < best:
            best, best_P = phi, P
        if phi < -delta:
            return FitResult(P, phi, it, np.array(hist))
        active = np.flatnonzero(lam >= phi - active_tol * max(1.0, abs(phi)))
        U = vec[active] @ A.T                          # rows u_k = A v_k
        JU = np.einsum("kij,kj->ki", Js[active], U)    # rows J_k u_k
        G = (U.T @ JU + JU.T @ U) / len(active)
        gg = float(np.sum(G * G))
        if gg == 0.0:
            break
        P = _clip_eigs(P - (phi - target) / gg * G, epsilon, p_max)
    raise Infeasible(best, len(hist), best_P)


# ------------------------------------------------------------ sampling

@dataclass(frozen=True)
class SamplerConfig:
    n_samples: int = 1000
    burn_in: int = 100
    thin: int = 2
    step: float = 0.05
    max_shrink: int = 30
    seed: int = 0
    threads: int = 1
    frozen: tuple[str, ...] = ()

    def __post_init__(self):
        if self.n_samples < 1 or self.thin < 1 or self.burn_in < 0 or self.threads < 1:
            raise ValueError("invalid sampler configuration")
        if not self.step > 0:
            raise ValueError("sampler step must be > 0")


@dataclass(frozen=True)
class SublevelSample:
    states: tuple[SystemState, ...]
    values: np.ndarray
    proposals: int
    accepted: int
    outside_domain: tuple[SystemState, ...]   # states with V <= l outside the box
    projection_failures: int


def _chain(system, value, level, ref: SystemState, n_out, cfg: SamplerConfig, domain, rng,
           free: np.ndarray):
    x, z = np.array(ref.x, float), np.array(ref.z, float)
    v = value(x, z)
    out, vals, outside = [], [], []
    proposals = accepted = failures = 0
    total = cfg.burn_in + n_out * cfg.thin
    for step in range(total):
        d = np.zeros(system.n)
        d[free] = rng.standard_normal(len(free))
        d /= np.linalg.norm(d)
        lo = -cfg.step * rng.uniform()
        hi = lo + cfg.step
        for _ in range(cfg.max_shrink):
            t = rng.uniform(lo, hi)
            proposals += 1
            xn = x + t * d
            try:
                zn = project_algebraic(system, xn[system.x2_index], z)
                vn = value(xn, zn)
            except (NewtonDivergence, SingularAlgebraicJacobian):
                failures += 1
                vn = math.inf
            if vn <= level:
                if domain.contains(xn, zn):
                    x, z, v = xn, zn, vn
                    accepted += 1
                    break
                if len(outside) < 10:
                    outside.append(SystemState(xn, zn))
            if t < 0:
                lo = t
            else:
                hi = t
        if step >= cfg.burn_in and (step - cfg.burn_in) % cfg.thin == cfg.thin - 1:
            out.append(SystemState(x, z))
            vals.append(v)
    return out, vals, proposals, accepted, outside, failures


def sample_sublevel(system: PowerSystem, value: Callable, level: float, reference: SystemState,
                    config: SamplerConfig | None = None, domain: DomainBox | None = None
                    ) -> SublevelSample:
    """Hit-and-run walk in x (z re-projected) over ``{value <= level}``.

    The walk starts at ``reference``, so it stays in the connected component
    containing it.  ``config.threads`` independent chains with spawned seeds
    are merged in chain order, so results depend only on ``(seed, threads)``.
    """
    config = config or SamplerConfig()
    domain = domain or DomainBox.default(system)
    z_ref = project_algebraic(system, reference.x[system.x2_index], reference.z)
    ref = SystemState(reference.x, z_ref)
    v0 = value(ref.x, ref.z)
    if v0 > level:
        raise ValueError(f"reference point has V = {v0:.4g} > level {level:.4g}")
    frozen = {system.state_index(nm) for nm in config.frozen}
    free = np.array([i for i in range(system.n) if i not in frozen], dtype=int)
    k = config.threads
    counts = [config.n_samples // k + (1 if i < config.n_samples % k else 0) for i in range(k)]
    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(config.seed).spawn(k)]
    args = [(system, value, level, ref, c, config, domain, r, free) for c, r in zip(counts, rngs)]
    if k == 1:
        results = [_chain(*args[0])]
    else:
        with ThreadPoolExecutor(max_workers=k) as ex:
            results = list(ex.map(lambda a: _chain(*a), args))
    states, vals, outside = [], [], []
    prop = acc = fail = 0
    for o, v, p, a, out, f in results:
        states.extend(o)
        vals.extend(v)
        outside.extend(out)
        prop += p
        acc += a
        fail += f
    return SublevelSample(tuple(states), np.array(vals), prop, acc, tuple(outside), fail)


# --------------------------------------------------------- certificates

class RoaVerdict(str, Enum):
    certified_sampled = "certified_sampled"
    refuted = "refuted"
    inconclusive = "inconclusive"


@dataclass(frozen=True)
class RoaCertificate:
    v_descriptor: dict
    level: float
    verdict: RoaVerdict
    n_samples: int
    max_lmi_lambda: float | None = None
    min_rcond: float | None = None
    min_logabs_det: float | None = None
    min_domain_margin: float | None = None
    counterexample: SystemState | None = None
    reason: str = ""
    evidence: dict = field(default_factory=dict)
    sampling_only: bool = True
    samples: tuple[SystemState, ...] = field(default=(), repr=False, compare=False)

    def as_dict(self, system: PowerSystem | None = None) -> dict:
        ce = None
        if self.counterexample is not None:
            ce = {"x": list(map(float, self.counterexample.x)),
                  "z": list(map(float, self.counterexample.z))}
            if system is not None:
                ce["x_names"] = list(system.x_names)
        return {
            "v_function": self.v_descriptor,
            "level": self.level,
            "verdict": self.verdict.value,
            "sampling_only": self.sampling_only,
            "n_samples": self.n_samples,
            "max_lmi_lambda": self.max_lmi_lambda,
            "min_rcond_dg_dz": self.min_rcond,
            "min_logabs_det_dg_dz": self.min_logabs_det,
            "min_domain_margin": self.min_domain_margin,
            "counterexample": ce,
            "reason": self.reason,
            "evidence": self.evidence,
        }


def _rcond(dg_dz) -> float:
    anorm = np.linalg.norm(dg_dz, 1)
    lu, piv, info = sla.lapack.dgetrf(dg_dz)
    if info > 0:
        return 0.0
    rc, _ = sla.lapack.dgecon(lu, anorm, norm="1")
    return float(rc)


def _sample_evidence(system, sample: SublevelSample, domain: DomainBox):
    rconds, logdets, margins = [], [], []
    for s in sample.states:
        dgdz = system.dg_dz(s.x, s.z)
        rconds.append(_rcond(dgdz))
        logdets.append(float(np.linalg.slogdet(dgdz)[1]))
        margins.append(domain.margin(s.x, s.z))
    return np.array(rconds), np.array(logdets), np.array(margins)


def _walk_summary(sample: SublevelSample) -> dict:
    return {"proposals": sample.proposals, "accepted_moves": sample.accepted,
            "projection_failures": sample.projection_failures,
            "sublevel_points_outside_domain": len(sample.outside_domain)}


def certify_type1(system: PowerSystem, V: KrasovskiiV, level: float | None = None,
                  config: SamplerConfig | None = None, reference: SystemState | None = None,
                  domain: DomainBox | None = None) -> RoaCertificate:
    """Sampled check of the Type-I conditions on the component of ``{f'Pf <= l}``."""
    from .equilibrium import solve_equilibrium

    config = config or SamplerConfig()
    domain = domain or DomainBox.default(system)
    level = V.level if level is None else float(level)
    desc = V.descriptor() | {"level": level}
    if reference is None:
        reference = solve_equilibrium(system, None, _default_pin(system)).state
    value = V.bind(system)
    if level == 0.0:
        # the set {f = 0} has no interior to walk; evidence is the reference equilibrium
        z0 = project_algebraic(system, reference.x[system.x2_index], reference.z)
        ref = SystemState(reference.x, z0)
        sample = SublevelSample((ref,), np.array([value(ref.x, ref.z)]), 0, 0, (), 0)
    else:
        sample = sample_sublevel(system, value, level, reference, config, domain)
    rc, ld, mg = _sample_evidence(system, sample, domain)
    lams = np.full(len(sample.states), -np.inf)
    for k, s in enumerate(sample.states):
        f = system.f(s.x, s.z)
        if np.linalg.norm(f[V.keep]) == 0.0:
            continue  # xi = 0: the decrease condition holds trivially
        try:
            lams[k] = lmi_lambda_max(system, V.P, V.A, s)
        except SingularAlgebraicJacobian:
            lams[k] = np.inf
    ev = _walk_summary(sample) | {"seed": config.seed, "threads": config.threads}
    common = dict(n_samples=len(sample.states), samples=sample.states,
                  max_lmi_lambda=float(lams.max()) if len(lams) else None,
                  min_rcond=float(rc.min()) if len(rc) else None,
                  min_logabs_det=float(ld.min()) if len(ld) else None,
                  min_domain_margin=float(mg.min()) if len(mg) else None, evidence=ev)
    if level == 0.0:
        return RoaCertificate(desc, level, RoaVerdict.certified_sampled,
                              reason="level 0: the set is the equilibrium set, where xi = 0 "
                                     "and the decrease condition is vacuous", **common)
    bad = np.flatnonzero(lams >= 0.0)
    if bad.size:
        k = int(bad[0])
        return RoaCertificate(desc, level, RoaVerdict.refuted, counterexample=sample.states[k],
                              reason=f"matrix inequality fails at sample {k} "
                                     f"(lambda_max = {lams[k]:.4e})", **common)
    sing = np.flatnonzero(rc < RCOND_MIN)
    if sing.size:
        k = int(sing[0])
        return RoaCertificate(desc, level, RoaVerdict.refuted, counterexample=sample.states[k],
                              reason=f"dg/dz numerically singular at sample {k}", **common)
    if sample.outside_domain:
        return RoaCertificate(desc, level, RoaVerdict.refuted,
                              counterexample=sample.outside_domain[0],
                              reason="sublevel set reaches outside the domain box", **common)
    if np.isinf(lams).all() and level > 0:
        return RoaCertificate(desc, level, RoaVerdict.inconclusive,
                              reason="walk never left the equilibrium set", **common)
    return RoaCertificate(desc, level, RoaVerdict.certified_sampled, **common)


def _default_pin(system: PowerSystem):
    pis = system.devices_of_kind("ClassicalSgPi")
    if pis:
        return (system.x_names[pis[0][2].start], 0.0)
    return None


# -------------------------------------------------------------- Type II

@dataclass(frozen=True)
class TypeIIV:
    """Hand-built V-function with ``V' <= -gamma(|eta|)``.

    ``vddot_bound`` witnesses uniform continuity of ``V'`` on the sublevel set
    (a bound on ``|V''|``).  ``vddot`` is the analytic second derivative;
    without it ``V''`` is estimated by central differences along the flow.
    """

    value: Callable
    vdot: Callable
    lower_bound: float
    gamma: KappaFn
    vddot_bound: float
    vddot: Callable | None = None
    eta: EtaSelector = EtaSelector.eta_is_f2
    name: str = "type2"
    continuity_witness: str = "bounded_second_derivative"

    def descriptor(self) -> dict:
        return {"type": "type2", "name": self.name, "lower_bound": self.lower_bound,
                "gamma": self.gamma.as_dict(), "vddot_bound": self.vddot_bound,
                "continuity_witness": self.continuity_witness, "eta": self.eta.value}


def _flow_vddot(system, vdot, x, z, eps=1e-6):
    f, h = embedded_rhs(system, x, z)
    vp = vdot(x + eps * f, project_algebraic(system, (x + eps * f)[system.x2_index], z + eps * h))
    vm = vdot(x - eps * f, project_algebraic(system, (x - eps * f)[system.x2_index], z - eps * h))
    return (vp - vm) / (2 * eps)


def certify_type2(system: PowerSystem, V: TypeIIV, level: float, config: SamplerConfig | None = None,
                  reference: SystemState | None = None, domain: DomainBox | None = None,
                  rtol: float = 1e-8) -> RoaCertificate:
    config = config or SamplerConfig()
    domain = domain or DomainBox.default(system)
    if reference is None:
        raise ValueError("certify_type2 needs a reference state inside the sublevel set")
    sample = sample_sublevel(system, V.value, level, reference, config, domain)
    rc, ld, mg = _sample_evidence(system, sample, domain)
    desc = V.descriptor()
    worst_dec, worst_vdd, min_v = -np.inf, 0.0, np.inf
    ce, reason = None, ""
    for k, s in enumerate(sample.states):
        v = V.value(s.x, s.z)
        vd = V.vdot(s.x, s.z)
        g = float(V.gamma(np.linalg.norm(V.eta.evaluate(system, s.x, s.z))))
        vdd = V.vddot(s.x, s.z) if V.vddot is not None else _flow_vddot(system, V.vdot, s.x, s.z)
        min_v = min(min_v, v)
        slack = vd + g
        worst_dec = max(worst_dec, slack)
        worst_vdd = max(worst_vdd, abs(vdd))
        if ce is None:
            if v < V.lower_bound - rtol * max(1.0, abs(V.lower_bound)):
                ce, reason = s, f"V below its lower bound at sample {k}"
            elif slack > rtol * max(1.0, abs(vd), g):
                ce, reason = s, f"V' + gamma(|eta|) = {slack:.4e} > 0 at sample {k}"
            elif abs(vdd) > V.vddot_bound:
                ce, reason = s, f"|V''| = {abs(vdd):.4e} exceeds its bound at sample {k}"
    ev = _walk_summary(sample) | {"seed": config.seed, "max_decrease_slack": float(worst_dec),
                                  "max_abs_vddot": float(worst_vdd), "min_value": float(min_v)}
    common = dict(n_samples=len(sample.states), samples=sample.states, min_rcond=float(rc.min()),
                  min_logabs_det=float(ld.min()), min_domain_margin=float(mg.min()), evidence=ev)
    if ce is not None:
        return RoaCertificate(desc, level, RoaVerdict.refuted, counterexample=ce, reason=reason,
                              **common)
    if (rc < RCOND_MIN).any():
        k = int(np.flatnonzero(rc < RCOND_MIN)[0])
        return RoaCertificate(desc, level, RoaVerdict.refuted, counterexample=sample.states[k],
                              reason="dg/dz numerically singular", **common)
    if sample.outside_domain:
        return RoaCertificate(desc, level, RoaVerdict.refuted,
                              counterexample=sample.outside_domain[0],
                              reason="sublevel set reaches outside the domain box", **common)
    return RoaCertificate(desc, level, RoaVerdict.certified_sampled, **common)


# ------------------------------------------------------------- Type III

@dataclass(frozen=True)
class TypeIIIV:
    """V-function with ``V' <= 0`` on a compact invariant region.

    ``zero_set_vars`` names the states that vanish on ``{V' = 0}`` (for
    ``V' = -D omega^2`` this is ``omega``); the device certificates must turn
    "these states vanish identically" into ``eta = 0``.
    """

    value: Callable
    vdot: Callable
    zero_set_vars: tuple[str, ...] = ()
    name: str = "type3"
    eta: EtaSelector = EtaSelector.eta_is_f2

    def descriptor(self) -> dict:
        return {"type": "type3", "name": self.name, "zero_set_vars": list(self.zero_set_vars),
                "eta": self.eta.value}


@dataclass(frozen=True)
class Region:
    """Compact region: sublevel set of V (``level``), a single ``point``, or both."""

    level: float | None = None
    point: SystemState | None = None


def _zero_set_linked(system: PowerSystem, names) -> tuple[bool, str]:
    """Do the certificates turn ``names == 0`` into ``f2 = 0``?"""
    if not names:
        return False, "no zero-set variables declared"
    idx = {system.state_index(n) for n in names}
    for (bus, dev), sl in zip(system.devices, system.device_slices):
        if not dev.is_dynamic:
            continue
        try:
            cert: DeviceCertificate = certify_device(dev)
        except UnknownDeviceKind:
            return False, f"bus {bus}: no certificate for {dev.kind}"
        if not cert.holds_condition2:
            return False, f"bus {bus}: certificate condition 2 not met"
        if cert.x1_empty:
            continue
        # condition 2 of the speed-based machine certificates is stated on omega = 0
        omega = sl.start + dev.state_names.index("omega")
        if omega not in idx:
            return False, f"bus {bus}: zero set does not force omega = 0"
    return True, "zero set forces omega = 0 at every machine; device certificates give f2 = 0"


def certify_type3(system: PowerSystem, V: TypeIIIV, region: Region, config: SamplerConfig | None = None,
                  reference: SystemState | None = None, domain: DomainBox | None = None,
                  zero_tol: float = 1e-10, tol: float = 1e-10) -> RoaCertificate:
    config = config or SamplerConfig()
    domain = domain or DomainBox.default(system)
    desc = V.descriptor()
    if region.level is None:
        if region.point is None:
            raise ValueError("region needs a level or a point")
        states = (region.point,)
        sample = SublevelSample(states, np.array([V.value(region.point.x, region.point.z)]), 0, 0, (), 0)
        level = float("nan")
    else:
        ref = reference or region.point
        if ref is None:
            raise ValueError("sublevel region needs a reference state")
        level = region.level
        sample = sample_sublevel(system, V.value, level, ref, config, domain)
    rc, ld, mg = _sample_evidence(system, sample, domain)
    worst, zero_hits, ce, reason = -np.inf, 0, None, ""
    zidx = [system.state_index(n) for n in V.zero_set_vars]
    for k, s in enumerate(sample.states):
        vd = V.vdot(s.x, s.z)
        worst = max(worst, vd)
        if vd > tol and ce is None:
            ce, reason = s, f"V' = {vd:.4e} > 0 at sample {k}"
        if abs(vd) <= zero_tol:
            zero_hits += 1
            if zidx and np.max(np.abs(s.x[zidx])) > math.sqrt(max(zero_tol, 1e-300)) * 1e3 and ce is None:
                ce, reason = s, f"V' = 0 at sample {k} but zero-set variables do not vanish"
    # probe the declared zero set directly: put the variables to zero and re-check V'
    probe_max = 0.0
    for s in sample.states[: min(50, len(sample.states))]:
        if not zidx:
            break
        x = np.array(s.x)
        x[zidx] = 0.0
        try:
            z = project_algebraic(system, x[system.x2_index], s.z)
        except (NewtonDivergence, SingularAlgebraicJacobian):
            continue
        probe_max = max(probe_max, abs(V.vdot(x, z)))
    ev = _walk_summary(sample) | {"max_vdot": float(worst), "zero_set_samples": zero_hits,
                                  "zero_set_probe_max_abs_vdot": float(probe_max)}
    common = dict(n_samples=len(sample.states), samples=sample.states, min_rcond=float(rc.min()),
                  min_logabs_det=float(ld.min()), min_domain_margin=float(mg.min()), evidence=ev)
    if ce is not None:
        return RoaCertificate(desc, level, RoaVerdict.refuted, counterexample=ce, reason=reason, **common)
    if sample.outside_domain:
        return RoaCertificate(desc, level, RoaVerdict.refuted, counterexample=sample.outside_domain[0],
                              reason="region reaches outside the domain box", **common)
    if region.level is None:
        return RoaCertificate(desc, level, RoaVerdict.certified_sampled,
                              reason="single-point region", **common)
    if probe_max > max(zero_tol, 1e-8):
        return RoaCertificate(desc, level, RoaVerdict.inconclusive,
                              reason="declared zero-set variables do not characterise V' = 0", **common)
    linked, why = _zero_set_linked(system, V.zero_set_vars)
    if not linked:
        return RoaCertificate(desc, level, RoaVerdict.inconclusive, reason=why, **common)
    return RoaCertificate(desc, level, RoaVerdict.certified_sampled, reason=why, **common)


# ------------------------------------------------ single-machine V-functions

def _smsl_parts(system: PowerSystem):
    gens = system.devices_of_kind("ClassicalSgPi")
    loads = system.devices_of_kind("ConstPqLoad")
    if system.n_bus != 2 or len(gens) != 1 or len(loads) != 1:
        raise ValueError("expected one classical machine and one load on a two-bus network")
    (gbus, gen, gsl), (lbus, load, _) = gens[0], loads[0]
    B12 = float(system.admittance.B[gbus - 1, lbus - 1])
    return gen, gsl.start, gbus, lbus, load, B12


def smsl_energy(system: PowerSystem):
    """``Q`` (kinetic + machine + line potential) and its gradient for the
    single-machine single-load network."""
    gen, i0, gb, lb, load, B12 = _smsl_parts(system)
    E, xd, M = gen.E, gen.x_d_prime, gen.M
    it1, iv1, it2, iv2 = 2 * gb - 2, 2 * gb - 1, 2 * lb - 2, 2 * lb - 1

    def Q(x, z):
        w, d = x[i0 + 1], x[i0 + 2]
        t1, V1, t2, V2 = z[it1], z[iv1], z[it2], z[iv2]
        return (0.5 * M * w * w + E * V1 * (1 - np.cos(d - t1)) / xd
                + B12 * V1 * V2 * (1 - np.cos(t1 - t2)))

    def dQ(x, z):
        w, d = x[i0 + 1], x[i0 + 2]
        t1, V1, t2, V2 = z[it1], z[iv1], z[it2], z[iv2]
        gx = np.zeros(system.n)
        gz = np.zeros(system.m)
        gx[i0 + 1] = M * w
        s1 = E * V1 * np.sin(d - t1) / xd
        s12 = B12 * V1 * V2 * np.sin(t1 - t2)
        gx[i0 + 2] = s1
        gz[it1] = -s1 + s12
        gz[it2] = -s12
        gz[iv1] = E * (1 - np.cos(d - t1)) / xd + B12 * V2 * (1 - np.cos(t1 - t2))
        gz[iv2] = B12 * V1 * (1 - np.cos(t1 - t2))
        return gx, gz

    return Q, dQ


def _vdot_from_gradient(system, grad):
    def vdot(x, z):
        gx, gz = grad(x, z)
        f, h = embedded_rhs(system, x, z)
        return float(gx @ f + gz @ h)
    return vdot


def smsl_type2(system: PowerSystem, level: float | None = None, v_max: float = 1.5) -> TypeIIV:
    """``V = Q + (zeta - P_d + P_g0)^2 / (2 k2)`` with ``V' = -(D + k1) omega^2``.

    ``-P_d`` is the load's active injection; the |V''| bound holds on the
    sublevel set ``{V <= level}`` within the voltage box ``V <= v_max``.
    """
    gen, i0, gb, lb, load, B12 = _smsl_parts(system)
    if gen.k2 <= 0:
        raise ValueError("the Type-II function needs k2 > 0")
    Q, dQ = smsl_energy(system)
    off = gen.P_g0 - load.P_d
    k2 = gen.k2

    def value(x, z):
        return float(Q(x, z) + (x[i0] + off) ** 2 / (2 * k2))

    def grad(x, z):
        gx, gz = dQ(x, z)
        gx[i0] += (x[i0] + off) / k2
        return gx, gz

    c = gen.D + gen.k1

    def vddot(x, z):
        w = x[i0 + 1]
        wdot = system.f(x, z)[i0 + 1]
        return float(-2 * c * w * wdot)

    bound = math.inf
    if level is not None:
        w_max = math.sqrt(2 * level / gen.M)
        s_max = math.sqrt(2 * k2 * level)
        wdot_max = (c * w_max + s_max + abs(load.P_d) + gen.E * v_max / gen.x_d_prime) / gen.M
        bound = 2 * c * w_max * wdot_max
    return TypeIIV(value, _vdot_from_gradient(system, grad), 0.0, KappaFn(c, 2.0), bound, vddot,
                   name="smsl_pi_energy")


def smsl_type3(system: PowerSystem) -> TypeIIIV:
    """Energy ``Q`` of the single-machine single-load network, ``V' = -D omega^2``
    when the line is lossless and the regulator is off with balanced power."""
    gen, i0, *_ = _smsl_parts(system)
    Q, dQ = smsl_energy(system)
    return TypeIIIV(Q, _vdot_from_gradient(system, dQ), (system.x_names[i0 + 1],),
                    name="smsl_energy")


# ------------------------------------------------------- combined claim

@dataclass(frozen=True)
class CombinedClaim:
    property1: bool
    converges_to_equilibria: bool
    statement: str
    caveats: tuple[str, ...]

    def as_dict(self) -> dict:
        return {"property1": self.property1,
                "converges_to_equilibrium_set": self.converges_to_equilibria,
                "statement": self.statement, "caveats": list(self.caveats)}


def theorem4_verdict(system: PowerSystem, cert: RoaCertificate,
                     detect: DetectabilityVerdict) -> CombinedClaim:
    """Combine a certified region with the detectability verdict."""
    if cert.verdict is not RoaVerdict.certified_sampled:
        raise ClaimUnavailable(f"region certificate is {cert.verdict.value}")
    caveats = ["sampling_only: certificate conditions were checked on finitely many samples"]
    eta = cert.v_descriptor.get("eta", EtaSelector.eta_is_f2.value)
    if eta == EtaSelector.eta_is_f2.value:
        caveats.append("eta = f2: z' -> 0 follows on non-degenerate solutions")
    if detect.verdict is DetectabilityStatus.as_detectable_if_nondegenerate:
        caveats.append("convergence to the equilibrium set requires the solution to be "
                       "non-degenerate (check per trajectory)")
        return CombinedClaim(True, True,
                             "solutions from the certified set satisfy Property 1 and converge "
                             "to the equilibrium set (sampled evidence)", tuple(caveats))
    caveats.append("detectability unknown: no equilibrium-set claim")
    return CombinedClaim(True, False,
                         "solutions from the certified set satisfy Property 1 (sampled evidence)",
                         tuple(caveats))
