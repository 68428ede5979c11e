"""Command-line entry point.

Exit codes: 0 success, 1 the analysis refuted or could not establish the
claim, 2 bad input (parse errors, invalid parameters or state names, states
outside the domain, missing pins).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import reports
from .cases import CASE9_DEVICES, P_MATRIX_TABLE, build_system, data_path
from .casefile import format_device_file, parse_case, parse_device_file
from .detectability import assess_detectability, check_nondegeneracy, verify_lemma1
from .equilibrium import (S1_PUBLISHED, S2_PUBLISHED, continuation_values, solve_equilibrium,
                          tangent_plane_field, trace_continuum)
from .errors import (AugsyncError, ClaimUnavailable, Infeasible, ParseError, RankDeficientWithoutPin,
                     StructuralError)
from .model import PowerSystem, SystemState
from .roa import (KrasovskiiV, RoaVerdict, SamplerConfig, certify_type1, fit_P, sample_sublevel,
                  theorem4_verdict)
from .simulate import OutsideDomain, check_property1, check_property2, integrate, project_algebraic

log = logging.getLogger("augsync")

EXIT_OK, EXIT_REFUTED, EXIT_INPUT = 0, 1, 2


class InputError(AugsyncError):
    """Malformed command-line input."""


# ------------------------------------------------------------------ helpers

def _kv(text: str) -> tuple[str, float]:
    name, sep, val = text.partition("=")
    if not sep:
        raise InputError(f"expected name=value, got {text!r}")
    try:
        return name.strip(), float(val)
    except ValueError:
        raise InputError(f"not a number in {text!r}") from None


def _range(text: str) -> tuple[float, float, float]:
    parts = text.split(":")
    if len(parts) != 3:
        raise InputError(f"range must be a:b:step, got {text!r}")
    try:
        a, b, st = map(float, parts)
    except ValueError:
        raise InputError(f"non-numeric range {text!r}") from None
    if b < a or st <= 0:
        raise InputError("range needs a <= b and step > 0")
    return a, b, st


def _emit(args, text: str) -> None:
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def _load(args):
    case = parse_case(args.case) if args.case else parse_case(data_path("case9.m"))
    dev = parse_device_file(args.devices or data_path(CASE9_DEVICES))
    loaded = build_system(case, dev)
    cfg = reports.read_run_config(args.config) if args.config else reports.RunConfig()
    if args.seed is not None:
        cfg.sampler.seed = args.seed
    return loaded, cfg


def _pins(system: PowerSystem, args):
    if args.pin:
        return [_kv(p) for p in args.pin]
    pis = system.devices_of_kind("ClassicalSgPi")
    if pis:
        return [(system.x_names[pis[0][2].start], 0.0)]
    return None


def _reference(system: PowerSystem, args):
    return solve_equilibrium(system, None, _pins(system, args))


def _sampler(cfg, args, **over) -> SamplerConfig:
    s = cfg.sampler
    kw = dict(n_samples=s.n_samples, burn_in=s.burn_in, thin=s.thin, step=s.step, seed=s.seed,
              threads=args.threads)
    if getattr(args, "samples", None):
        kw["n_samples"] = args.samples
    kw.update(over)
    return SamplerConfig(**kw)


def _inputs(args) -> dict:
    return {"case": str(args.case or "bundled:case9.m"),
            "devices": str(args.devices or f"bundled:{CASE9_DEVICES}")}


# ----------------------------------------------------------------- commands

def cmd_equilibrium(args) -> int:
    loaded, cfg = _load(args)
    system = loaded.system
    pins = [_kv(p) for p in args.pin] if args.pin else None
    seed = reports.read_state(args.seed_state, system) if args.seed_state else None
    eq = solve_equilibrium(system, seed, pins, tol=cfg.thresholds.g_tol)
    if args.state_out:
        Path(args.state_out).write_text(reports.format_state(system, eq.state))
    _emit(args, reports.format_report("equilibrium", eq.as_dict(system), inputs=_inputs(args)))
    return EXIT_OK


def cmd_continuum(args) -> int:
    loaded, cfg = _load(args)
    system = loaded.system
    lo, hi, step = _range(args.range)
    start = _reference(system, args)
    trace = trace_continuum(system, start, args.param, continuation_values(lo, hi, step))
    _emit(args, reports.format_continuum(trace, system))
    return EXIT_OK


def cmd_simulate(args) -> int:
    loaded, cfg = _load(args)
    system = loaded.system
    if args.from_:
        init = reports.read_state(args.from_, system)
    else:
        init = _reference(system, args).state
    x = np.array(init.x)
    for p in args.perturb or []:
        name, dv = _kv(p)
        x[system.state_index(name)] += dv
    icfg = cfg.integrator
    if args.t_end is not None:
        from dataclasses import replace
        icfg = replace(icfg, t_end=args.t_end)
    vfunc = None
    if args.p:
        V = KrasovskiiV.for_system(system, reports.read_matrix(args.p))
        vfunc = V.bind(system)
    domain = cfg.domain.box(system)
    traj = integrate(system, SystemState(x, init.z), icfg, domain, vfunc)
    _emit(args, reports.format_trajectory(traj))
    p1 = check_property1(traj, cfg.thresholds.zdot, domain=domain)
    if args.report:
        p2 = check_property2(traj, system, cfg.thresholds.f)
        payload = {"termination": traj.termination.value, "message": traj.message,
                   "samples": len(traj), "property1": {"passed": p1.passed,
                                                      "trailing_max_zdot": p1.trailing_max_zdot,
                                                      "window": p1.window, "reason": p1.reason},
                   "property2": {"passed": p2.passed, "stage_a": p2.stage_a, "stage_b": p2.stage_b,
                                 "trailing_max_f": p2.trailing_max_f, "distance": p2.distance,
                                 "reason": p2.reason}}
        reports.write_report(args.report, "simulate", payload, config=cfg.as_dict() | {
            "integrator": vars(icfg)}, inputs=_inputs(args))
    return EXIT_OK if p1.passed else EXIT_REFUTED


def cmd_detectability(args) -> int:
    loaded, cfg = _load(args)
    system = loaded.system
    verdict = assess_detectability(system)
    payload = {"detectability": verdict.as_dict()}
    code = EXIT_OK if verdict.verdict.value == "as_detectable_if_nondegenerate" else EXIT_REFUTED
    if args.trajectory:
        traj = reports.read_trajectory(args.trajectory)
        if traj.x_names != system.x_names:
            raise ParseError("trajectory columns do not match the system's states", args.trajectory, 1, 1)
        nd = check_nondegeneracy(system, traj, cfg.thresholds.rank_tol)
        payload["non_degeneracy"] = nd.as_dict()
        if nd.verdict.value == "non_degenerate":
            payload["lemma1_max_residual"] = verify_lemma1(system, traj)
        else:
            payload["lemma1_max_residual"] = None
            code = EXIT_REFUTED
    _emit(args, reports.format_report("detectability", payload, inputs=_inputs(args)))
    return code


def _box_samples(system, ref: SystemState, n: int, half_width: float, seed: int):
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        x = ref.x + rng.uniform(-half_width, half_width, system.n)
        try:
            z = project_algebraic(system, x[system.x2_index], ref.z)
        except AugsyncError:
            continue
        out.append(SystemState(x, z))
    return out


def cmd_roa_fit(args) -> int:
    loaded, cfg = _load(args)
    system = loaded.system
    ref = _reference(system, args).state
    n = args.samples or 500
    samples = _box_samples(system, ref, n, args.box, cfg.sampler.seed)
    payload = {"samples": n, "box_half_width": args.box, "epsilon": args.epsilon,
               "delta": args.delta, "p_max": args.p_max, "seed": cfg.sampler.seed}
    try:
        res = fit_P(system, samples, args.epsilon, args.delta, p_max=args.p_max,
                    max_iter=args.max_iter)
    except Infeasible as exc:
        payload |= {"feasible": False, "best_objective": exc.best_objective,
                    "iterations": exc.iterations}
        _emit(args, reports.format_report("roa_fit_p", payload, inputs=_inputs(args)))
        return EXIT_REFUTED
    if args.p_out:
        reports.write_matrix(args.p_out, res.P, "Krasovskii weight fitted on box samples\n"
                             f"order: {' '.join(system.x_names)}")
    payload |= {"feasible": True, "objective": res.objective, "iterations": res.iterations,
                "P": res.P, "min_eig": float(np.linalg.eigvalsh(res.P)[0])}
    _emit(args, reports.format_report("roa_fit_p", payload, inputs=_inputs(args)))
    return EXIT_OK


def _certify(args, system, cfg):
    P = reports.read_matrix(args.p or data_path(P_MATRIX_TABLE))
    if P.shape != (system.n, system.n):
        raise InputError(f"P is {P.shape}, system has {system.n} states")
    V = KrasovskiiV.for_system(system, P, level=args.level)
    ref = _reference(system, args).state
    return certify_type1(system, V, args.level, _sampler(cfg, args), ref, cfg.domain.box(system))


def cmd_roa_certify(args) -> int:
    loaded, cfg = _load(args)
    cert = _certify(args, loaded.system, cfg)
    _emit(args, reports.format_report("roa_certificate", cert.as_dict(loaded.system),
                                      config={"sampler": vars(_sampler(cfg, args))},
                                      inputs=_inputs(args) | {"p": str(args.p or f"bundled:{P_MATRIX_TABLE}")}))
    return EXIT_OK if cert.verdict is RoaVerdict.certified_sampled else EXIT_REFUTED


def cmd_verdict(args) -> int:
    loaded, cfg = _load(args)
    system = loaded.system
    cert = _certify(args, system, cfg)
    detect = assess_detectability(system)
    payload = {"certificate": cert.as_dict(system), "detectability": detect.as_dict()}
    code = EXIT_OK
    try:
        claim = theorem4_verdict(system, cert, detect)
        payload["claim"] = claim.as_dict()
    except ClaimUnavailable as exc:
        payload["claim"] = None
        payload["claim_unavailable"] = str(exc)
        code = EXIT_REFUTED
    runs = []
    if payload["claim"] is not None and args.trajectories:
        domain = cfg.domain.box(system)
        picks = np.linspace(0, len(cert.samples) - 1, args.trajectories).round().astype(int)
        for k in picks:
            traj = integrate(system, cert.samples[k], cfg.integrator, domain)
            nd = check_nondegeneracy(system, traj, cfg.thresholds.rank_tol)
            p1 = check_property1(traj, cfg.thresholds.zdot, domain=domain)
            p2 = check_property2(traj, system, cfg.thresholds.f)
            runs.append({"sample": int(k), "termination": traj.termination.value,
                         "non_degeneracy": nd.verdict.value, "property1": p1.passed,
                         "property2": p2.passed, "trailing_max_f": p2.trailing_max_f})
            if nd.verdict.value == "non_degenerate" and p1.passed and not p2.passed:
                code = EXIT_REFUTED
    payload["trajectories"] = runs
    _emit(args, reports.format_report("verdict", payload, inputs=_inputs(args)))
    return code


def _plane(system: PowerSystem, text: str):
    if text in ("default", "published"):
        return S1_PUBLISHED, S2_PUBLISHED
    names = [t.strip() for t in text.split(",")]
    if len(names) != 2:
        raise InputError("--plane takes 'default' or two state names: s1,s2")
    out = []
    for nm in names:
        e = np.zeros(system.n)
        e[system.state_index(nm)] = 1.0
        out.append(e)
    return out[0], out[1]


def cmd_field(args) -> int:
    loaded, cfg = _load(args)
    system = loaded.system
    s1, s2 = _plane(system, args.plane)
    at = _reference(system, args)
    fld = tangent_plane_field(system, at, s1, s2, grid=args.grid, span=args.span)
    _emit(args, reports.format_field(fld))
    return EXIT_OK


def cmd_init_devices(args) -> int:
    loaded, _ = _load(args)
    text = format_device_file(loaded.devices, "device parameters with power-flow set points resolved")
    _emit(args, text)
    return EXIT_OK


# ------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--case", help="MATPOWER-style case file (default: bundled case9)")
    common.add_argument("--devices", help="device parameter file (default: bundled 9-bus devices)")
    common.add_argument("--config", help="run configuration JSON")
    common.add_argument("--out", "-o", help="output file (default: stdout)")
    common.add_argument("--seed", type=int, help="sampler seed (overrides the run config)")
    common.add_argument("--threads", type=int, default=1, help="sampling threads")
    common.add_argument("--pin", action="append", metavar="NAME=VALUE",
                        help="pin a state when solving equilibria (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="augsync", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    q = sub.add_parser("equilibrium", parents=[common], help="solve for an equilibrium")
    q.add_argument("--seed-state", help="state file used as the Newton seed")
    q.add_argument("--state-out", help="also write the equilibrium as a state file")
    q.set_defaults(func=cmd_equilibrium)

    q = sub.add_parser("continuum", parents=[common], help="trace the equilibria continuum")
    q.add_argument("--param", default="zeta")
    q.add_argument("--range", default="-0.1:0.1:0.01", help="a:b:step")
    q.set_defaults(func=cmd_continuum)

    q = sub.add_parser("simulate", parents=[common], help="integrate the DAE")
    q.add_argument("--from", dest="from_", help="initial state file (default: pinned equilibrium)")
    q.add_argument("--t-end", type=float)
    q.add_argument("--perturb", action="append", metavar="NAME=DELTA")
    q.add_argument("--p", help="P matrix file; records f'Pf as V_value")
    q.add_argument("--report", help="write a Property 1/2 report here")
    q.set_defaults(func=cmd_simulate)

    q = sub.add_parser("detectability", parents=[common], help="detectability verdict")
    q.add_argument("--trajectory", help="trajectory CSV for the non-degeneracy check")
    q.set_defaults(func=cmd_detectability)

    q = sub.add_parser("roa", help="region-of-attraction certificates")
    rsub = q.add_subparsers(dest="roa_command", required=True)
    r = rsub.add_parser("fit-p", parents=[common], help="fit a Krasovskii weight P")
    r.add_argument("--samples", type=int)
    r.add_argument("--box", type=float, default=0.01, help="sample box half-width around the equilibrium")
    r.add_argument("--epsilon", type=float, default=1e-3)
    r.add_argument("--delta", type=float, default=1e-3)
    r.add_argument("--p-max", type=float, default=1.0)
    r.add_argument("--max-iter", type=int, default=20000)
    r.add_argument("--p-out", help="write the fitted matrix here")
    r.set_defaults(func=cmd_roa_fit)
    r = rsub.add_parser("certify", parents=[common], help="sampled Type-I certificate")
    r.add_argument("--p", help="P matrix file (default: bundled published matrix)")
    r.add_argument("--level", type=float, default=4.0)
    r.add_argument("--samples", type=int)
    r.set_defaults(func=cmd_roa_certify)

    q = sub.add_parser("verdict", parents=[common], help="certificate + detectability + claim")
    q.add_argument("--p")
    q.add_argument("--level", type=float, default=4.0)
    q.add_argument("--samples", type=int)
    q.add_argument("--trajectories", type=int, default=1,
                   help="integrate this many sampled points as an empirical check")
    q.set_defaults(func=cmd_verdict)

    q = sub.add_parser("field", parents=[common], help="vector field projected on a plane")
    q.add_argument("--plane", default="default", help="'default' or two state names s1,s2")
    q.add_argument("--grid", type=int, default=11)
    q.add_argument("--span", type=float, default=0.1)
    q.set_defaults(func=cmd_field)

    q = sub.add_parser("init-devices", parents=[common],
                       help="write the device file with auto parameters resolved")
    q.set_defaults(func=cmd_init_devices)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (ParseError, InputError, OutsideDomain, RankDeficientWithoutPin, StructuralError, OSError,
            ValueError) as exc:
        print(f"augsync: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except AugsyncError as exc:
        print(f"augsync: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_REFUTED


if __name__ == "__main__":
    sys.exit(main())
