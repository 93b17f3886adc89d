import math
from dataclasses import dataclass

import numpy as np
import pytest

from parabolic_bundle.coefficient_hull import CoefficientSpec, constant
from parabolic_bundle.discretization import (
    EllipticCoefficients,
    Grid,
    OperatorMatrix,
    PrincipalEigenpair,
    assemble_operator,
    build_grid,
    principal_dirichlet_eigenpair,
)
from parabolic_bundle.evolution import EvolutionConfig
from parabolic_bundle.order_cone import ConeContext


@dataclass
class Setup:
    grid: Grid
    op: OperatorMatrix
    pair: PrincipalEigenpair
    ctx: ConeContext
    cfg: EvolutionConfig
    zero: CoefficientSpec

    @property
    def b0(self):
        return self.zero.origin()


def make_setup(dim=1, extents=((0.0, math.pi),), n=63, bc=None, dt=1 / 64, coeffs=None) -> Setup:
    grid = build_grid(dim, extents, n, bc)
    op = assemble_operator(grid, coeffs or EllipticCoefficients.laplacian(dim))
    pair = principal_dirichlet_eigenpair(grid)
    return Setup(grid, op, pair, ConeContext.from_eigenpair(pair), EvolutionConfig(dt), constant(grid, 0.0))


@pytest.fixture(scope="session")
def heat():
    return make_setup()


@pytest.fixture(scope="session")
def small():
    return make_setup(n=15, dt=1 / 16)


@pytest.fixture(scope="session")
def mixed():
    return make_setup(bc={"x_hi": {"robin": {"c": 0.0}}})


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LOG: dict[int, list[tuple[str, bool, str]]] = {}
ACCEPTANCE_TITLES = {
    1: "model-problem spectrum",
    2: "cocycle identity",
    3: "propagator duality",
    4: "Green kernel duality and series oracle",
    5: "strict-sign audit",
    6: "focusing constant",
    7: "exponential separation",
    8: "projection bound",
    9: "one-dimensionality of globally positive solutions",
    10: "misalignment blowup",
    11: "mixed Dirichlet/Robin geometry",
    12: "report determinism",
}


@pytest.fixture
def criterion():
    """Record one acceptance outcome, then assert it."""

    def record(number: int, label: str, passed: bool, detail: str):
        ACCEPTANCE_LOG.setdefault(number, []).append((label, bool(passed), detail))
        assert passed, f"criterion {number} [{label}]: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LOG:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number, title in ACCEPTANCE_TITLES.items():
        rows = ACCEPTANCE_LOG.get(number)
        if not rows:
            tr.write_line(f"criterion {number:2d} FAIL  {title}: not evaluated")
            continue
        ok = all(p for _, p, _ in rows)
        detail = " | ".join(f"[{label}{'' if p else ' FAILED'}] {d}" for label, p, d in rows)
        tr.write_line(f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
