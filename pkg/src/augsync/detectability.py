"""Non-degeneracy tests, the x2-derivative identity, per-device detectability
certificates and their modular composition."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .devices import ClassicalSgPi, Device, FluxDecaySg, InverterPq
from .errors import RankDeficiency, SingularAlgebraicJacobian, UnknownDeviceKind, NotModular
from .model import PowerSystem, SystemState, factor_dgdz, lu_solve


class NonDegeneracyVerdict(str, Enum):
    non_degenerate = "non_degenerate"
    degenerate_rank = "degenerate_rank"
    degenerate_unbounded = "degenerate_unbounded"
    inconclusive = "inconclusive"


@dataclass(frozen=True)
class NonDegeneracyReport:
    ranks: np.ndarray
    sigma_ratio: np.ndarray    # sigma_min / sigma_max of dg/dx2 per sample
    bounds: np.ndarray         # |pinv(dg/dx2) dg/dz|_2 per sample (inf when rank deficient)
    M_hat: float
    verdict: NonDegeneracyVerdict
    first_bad_sample: int | None = None

    def as_dict(self) -> dict:
        return {
            "verdict": self.verdict.value,
            "M_hat": self.M_hat,
            "min_rank": int(self.ranks.min()) if len(self.ranks) else None,
            "min_sigma_ratio": float(np.min(self.sigma_ratio)) if len(self.sigma_ratio) else None,
            "first_bad_sample": self.first_bad_sample,
            "samples": int(len(self.ranks)),
        }


def _samples(trajectory_or_states):
    if hasattr(trajectory_or_states, "X"):
        return list(zip(trajectory_or_states.X, trajectory_or_states.Z))
    return [(s.x, s.z) for s in trajectory_or_states]


def check_nondegeneracy(system: PowerSystem, trajectory, rank_tol: float = 1e-8,
                        m_cap: float = 1e6) -> NonDegeneracyReport:
    """SVD rank of dg/dx2 and the bound |pinv(dg/dx2) dg/dz| at every sample."""
    pts = _samples(trajectory)
    n2 = system.n2
    ranks = np.zeros(len(pts), dtype=int)
    ratios = np.zeros(len(pts))
    bounds = np.full(len(pts), np.inf)
    verdict = NonDegeneracyVerdict.non_degenerate
    first_bad = None
    for k, (x, z) in enumerate(pts):
        try:
            jac = system.jacobians(x, z)
            U, sv, Vt = np.linalg.svd(jac.dg_dx2, full_matrices=False)
        except (np.linalg.LinAlgError, ValueError):
            if verdict is NonDegeneracyVerdict.non_degenerate:
                verdict, first_bad = NonDegeneracyVerdict.inconclusive, k
            continue
        if n2 == 0:
            ranks[k], ratios[k], bounds[k] = 0, 1.0, 0.0
            continue
        smax = sv[0] if sv.size else 0.0
        r = int(np.sum(sv > rank_tol * smax)) if smax > 0 else 0
        ranks[k] = r
        ratios[k] = sv[-1] / smax if smax > 0 else 0.0
        if r < n2:
            if verdict is not NonDegeneracyVerdict.degenerate_rank:
                verdict, first_bad = NonDegeneracyVerdict.degenerate_rank, k
            continue
        pinv = (Vt.T / sv) @ U.T
        bounds[k] = np.linalg.norm(pinv @ jac.dg_dz, 2)
        if bounds[k] > m_cap and verdict is NonDegeneracyVerdict.non_degenerate:
            verdict, first_bad = NonDegeneracyVerdict.degenerate_unbounded, k
    finite = bounds[np.isfinite(bounds)]
    M_hat = float(finite.max()) if finite.size == len(bounds) and len(bounds) else float("inf")
    return NonDegeneracyReport(ranks, ratios, bounds, M_hat, verdict, first_bad)


def lemma1_residual(system: PowerSystem, x, z, rank_tol: float = 1e-8) -> float:
    """``|f2 + pinv(dg/dx2) dg/dz h|`` at one state."""
    jac = system.jacobians(x, z)
    U, sv, Vt = np.linalg.svd(jac.dg_dx2, full_matrices=False)
    if sv.size and np.sum(sv > rank_tol * sv[0]) < system.n2:
        raise RankDeficiency("dg/dx2 lost full column rank")
    f = system.f(x, z)
    h = -lu_solve(factor_dgdz(jac.dg_dz), jac.dg_dx @ f)
    pinv = (Vt.T / sv) @ U.T
    return float(np.linalg.norm(f[system.x2_index] + pinv @ (jac.dg_dz @ h)))


def verify_lemma1(system: PowerSystem, trajectory) -> float:
    """Max over samples of ``|f2 + pinv(dg/dx2) dg/dz h|``."""
    res = 0.0
    for k, (x, z) in enumerate(_samples(trajectory)):
        try:
            res = max(res, lemma1_residual(system, x, z))
        except RankDeficiency:
            raise RankDeficiency(f"dg/dx2 rank deficient at sample {k}") from None
    return res


# ------------------------------------------------------------ certificates

@dataclass(frozen=True)
class DeviceCertificate:
    kind: str
    x1_empty: bool
    holds_condition1: bool
    condition1: str
    holds_condition2: bool
    condition2: str
    assumptions: tuple[str, ...] = ()

    @property
    def certified(self) -> bool:
        return self.holds_condition1 and self.holds_condition2

    def as_dict(self) -> dict:
        return {
            "kind": self.kind, "x1_empty": self.x1_empty,
            "condition1": {"holds": self.holds_condition1, "justification": self.condition1},
            "condition2": {"holds": self.holds_condition2, "justification": self.condition2},
            "assumptions": list(self.assumptions),
        }


_CERTIFICATES = {
    "InverterPq": DeviceCertificate(
        "InverterPq", True, True, "x1 is empty; nothing to bound",
        True, "x1 is empty; f1 vanishes identically", ("tau1, tau2 > 0",)),
    "FluxDecaySg": DeviceCertificate(
        "FluxDecaySg", False, True,
        "omega = delta' and omega' is a stable first-order filter of bounded inputs "
        "(D > 0), so bounded delta, Eq', z give bounded omega",
        True,
        "on f2 = 0 we have omega = delta' = 0 identically, hence omega' = 0, so f1 = 0",
        ("D > 0", "M > 0", "V > 0")),
    "ClassicalSgPi": DeviceCertificate(
        "ClassicalSgPi", False, True,
        "omega bounded as for the flux-decay machine; zeta(t) = zeta(0) - k2 (delta(t) - "
        "delta(0)) is bounded whenever delta is",
        True,
        "on f2 = omega = 0 identically: omega' = 0 and zeta' = -k2 omega = 0, so f1 = 0",
        ("D + k1 > 0", "M > 0", "V > 0")),
    "ConstPqLoad": DeviceCertificate(
        "ConstPqLoad", True, True, "no dynamic states", True, "no dynamic states"),
    "InfiniteBus": DeviceCertificate(
        "InfiniteBus", True, True, "no dynamic states", True, "no dynamic states"),
}

_BUILTIN = {cls.kind: cls for cls in (InverterPq, FluxDecaySg, ClassicalSgPi)}


def certify_device(kind_or_device) -> DeviceCertificate:
    """Hard-wired certificate for a built-in device kind.

    Subclasses of the built-in devices are treated as user devices: their
    dynamics may differ, so no certificate is issued.
    """
    if isinstance(kind_or_device, Device):
        dev = kind_or_device
        cert = getattr(dev, "certificate", None)
        if isinstance(cert, DeviceCertificate):
            return cert
        cls = _BUILTIN.get(dev.kind)
        if dev.kind in ("ConstPqLoad", "InfiniteBus") and type(dev).__module__ == Device.__module__:
            return _CERTIFICATES[dev.kind]
        if cls is None or type(dev) is not cls:
            raise UnknownDeviceKind(f"no built-in certificate for {type(dev).__name__}")
        kind = dev.kind
    else:
        kind = str(kind_or_device)
    try:
        return _CERTIFICATES[kind]
    except KeyError:
        raise UnknownDeviceKind(f"no built-in certificate for device kind {kind!r}") from None


class DetectabilityStatus(str, Enum):
    as_detectable_if_nondegenerate = "as_detectable_if_nondegenerate"
    unknown = "unknown"


@dataclass(frozen=True)
class DetectabilityVerdict:
    certificates: tuple[tuple[int, str, DeviceCertificate | None], ...]
    verdict: DetectabilityStatus
    theorem: str
    reasons: tuple[str, ...] = field(default=())

    def as_dict(self) -> dict:
        return {
            "verdict": self.verdict.value,
            "theorem": self.theorem,
            "devices": [{"bus": b, "kind": k, "certificate": None if c is None else c.as_dict()}
                        for b, k, c in self.certificates],
            "reasons": list(self.reasons),
        }


def modularity_violations(system: PowerSystem, state: SystemState | None = None,
                          rng: np.random.Generator | None = None) -> list[str]:
    """Cross-device blocks of df/dx and df/dz that are not exactly zero."""
    rng = rng or np.random.default_rng(0)
    if state is None:
        base = system.flat_start()
        x = base.x + 0.05 * rng.standard_normal(system.n)
        z = base.z + 0.02 * rng.standard_normal(system.m)
    else:
        x, z = state.x, state.z
    jac = system.jacobians(x, z)
    bad = []
    owner_bus = {}
    for (bus, dev), sl in zip(system.devices, system.device_slices):
        for i in range(sl.start, sl.stop):
            owner_bus[i] = (bus, sl)
    for i, (bus, sl) in owner_bus.items():
        row = jac.df_dx[i].copy()
        row[sl] = 0.0
        if np.any(row != 0.0):
            bad.append(f"{system.x_names[i]} depends on another device's states")
        zrow = jac.df_dz[i].copy()
        zrow[2 * (bus - 1):2 * bus] = 0.0
        if np.any(zrow != 0.0):
            bad.append(f"{system.x_names[i]} depends on a remote bus voltage")
    return bad


def assess_detectability(system: PowerSystem, check_modularity: bool = True) -> DetectabilityVerdict:
    """Compose per-device certificates (modular decomposition of the system)."""
    if check_modularity:
        bad = modularity_violations(system)
        if bad:
            raise NotModular("; ".join(bad))
    certs, reasons = [], []
    all_ok = True
    dynamic = [(b, d) for b, d in system.devices if d.is_dynamic]
    for bus, dev in system.devices:
        try:
            c = certify_device(dev)
        except UnknownDeviceKind as exc:
            c = None
            if dev.is_dynamic:
                all_ok = False
                reasons.append(f"bus {bus}: {exc}")
        else:
            if dev.is_dynamic and not c.certified:
                all_ok = False
                reasons.append(f"bus {bus}: certificate conditions not met")
        certs.append((bus, dev.kind, c))
    if system.n1 == 0:
        theorem = "Thm 1"
    elif len(dynamic) <= 1:
        theorem = "Thm 2"
    else:
        theorem = "Thm 3"
    status = DetectabilityStatus.as_detectable_if_nondegenerate if all_ok else DetectabilityStatus.unknown
    return DetectabilityVerdict(tuple(certs), status, theorem, tuple(reasons))


# -------------------------------------------------- degeneration diagnostics

@dataclass(frozen=True)
class DegenerationDiagnostics:
    det_value: float
    bracket: float
    pe: float
    qe: float
    is_degenerate: bool
    assumption1_violation: bool
    identity_residual: tuple[float, float] | None  # (|P^e|, |Q^e + V^2/x_q|) when degenerate


def degeneration_diagnostics_sg(device: FluxDecaySg, delta: float, Eq: float, theta: float,
                                V: float, tol: float = 1e-10) -> DegenerationDiagnostics:
    """Closed-form det of d(P,Q)/d(delta, Eq') and the degenerate-output identity."""
    det = device.det_dg_dx2(delta, Eq, theta, V)
    bracket = (device.x_d_prime - device.x_q) / device.x_q * V * np.cos(delta - theta) + Eq
    pe, qe = device.electrical_power(delta, Eq, theta, V)
    degenerate = bool(abs(bracket) <= tol or V == 0.0)
    ident = None
    if degenerate:
        ident = (float(abs(pe)), float(abs(qe + V * V / device.x_q)))
    return DegenerationDiagnostics(float(det), float(bracket), float(pe), float(qe), degenerate,
                                   bool(V == 0.0), ident)
