from __future__ import annotations

import numpy as np
import pytest

from augsync import cases
from augsync.equilibrium import solve_equilibrium
from augsync.errors import AugsyncError
from augsync.model import SystemState
from augsync.simulate import project_algebraic


def random_compatible_states(system, ref: SystemState, n: int, scale: float, rng,
                             z_scale: float = 0.0) -> list[SystemState]:
    """Perturb ``ref`` in x (and optionally in the z seed) and project z back onto g = 0."""
    out = []
    while len(out) < n:
        x = ref.x + rng.uniform(-scale, scale, system.n)
        z0 = ref.z + rng.uniform(-z_scale, z_scale, system.m)
        try:
            z = project_algebraic(system, x[system.x2_index], z0)
        except AugsyncError:
            continue
        out.append(SystemState(x, z))
    return out


@pytest.fixture(scope="session")
def ieee9():
    return cases.ieee9()


@pytest.fixture(scope="session")
def x0(ieee9):
    return solve_equilibrium(ieee9, None, ("zeta", 0.0))


@pytest.fixture(scope="session")
def smsl():
    return cases.smsl()


@pytest.fixture(scope="session")
def smsl_eq(smsl):
    return solve_equilibrium(smsl, None, ("delta", 0.3))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ------------------------------------------------------- acceptance summary

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def acceptance():
    """``record(n, ok, detail)`` stores one criterion result for the summary."""
    def record(n: int, ok: bool, detail: str) -> bool:
        ACCEPTANCE[n] = (bool(ok), detail)
        print(f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}")
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'} - {detail}")
