"""Subcommand orchestration: build the problem from a config, run, emit artifacts."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import io
from .coefficient_hull import CoefficientSpec, HullError, HullPoint, node_values, sample_hull
from .config import ConfigError, RunConfig, make_a0, make_grid, make_operator
from .discretization import (
    AssemblyError,
    EigenError,
    Grid,
    GridError,
    OperatorMatrix,
    PrincipalEigenpair,
    principal_dirichlet_eigenpair,
)
from .evolution import EvolutionConfig, EvolutionError, check_positive, propagator, step_forward
from .global_solutions import (
    GlobalSolutionError,
    build_global,
    cocycle_defect,
    dim_check,
    misalignment_blowup,
)
from .green_kernel import kernel_from_propagator, sign_audit
from .order_cone import (
    ConeContext,
    ConeError,
    boundary_gauge_fit,
    column_gammas,
    cone_position,
    focusing_inequalities,
    INTERIOR_POSITIVE,
)
from .principal_bundle import BundleError, frames_along_orbit, orbit_maps, separation_estimate

log = logging.getLogger(__name__)

SUBCOMMANDS = ("solve", "green", "bundle", "separation", "global", "report")
EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2

INVARIANCE_TOL = 1e-8
DUAL_INVARIANCE_TOL = 1e-10
DIM_TOL = 1e-6
ALIGNMENT_TOL = 1e-6
COCYCLE_TOL = 1e-8
L_SLACK = 1.2


class StructuralFailure(RuntimeError):
    pass


STRUCTURAL_ERRORS = (StructuralFailure, EvolutionError, BundleError, GlobalSolutionError, EigenError, ConeError, AssemblyError)


@dataclass
class Problem:
    config: RunConfig
    grid: Grid
    operator: OperatorMatrix
    eigen: PrincipalEigenpair
    ctx: ConeContext
    spec: CoefficientSpec
    cfg: EvolutionConfig

    @property
    def a0(self) -> HullPoint:
        return self.spec.origin()

    def rng(self, stream: int) -> np.random.Generator:
        return np.random.default_rng([self.config.seed, stream])


def build_problem(config: RunConfig) -> Problem:
    try:
        grid = make_grid(config)
    except GridError as exc:
        raise ConfigError([("grid", str(exc))]) from None
    try:
        spec = make_a0(config, grid)
    except (HullError, ValueError, OSError) as exc:
        raise ConfigError([("a0", str(exc))]) from None
    operator = make_operator(config, grid)
    eigen = principal_dirichlet_eigenpair(grid)
    return Problem(config, grid, operator, eigen, ConeContext.from_eigenpair(eigen), spec, config.cfg)


def _initial_state(problem: Problem) -> np.ndarray:
    src = problem.config.solve.initial
    if isinstance(src, str) and src.endswith(".csv"):
        return io.read_nodal(problem.config.resolve(src), problem.grid.free_points)
    return node_values(problem.grid, src)


def run_solve(problem: Problem, out: Path) -> dict:
    u0 = _initial_state(problem)
    t = problem.config.solve.t
    u = step_forward(problem.operator, problem.a0, u0, t, problem.cfg)
    io.write_nodal(out / "solution.csv", problem.grid.free_points, u)
    summary = {"t": t, "e_norm": float(np.max(np.abs(u) / problem.ctx.e)), "position": cone_position(u, problem.ctx)}
    io.write_json(out / "solve.json", summary)
    return summary


def green_section(problem: Problem, samples: list[HullPoint]) -> tuple[dict, list]:
    audits, gammas, kernels = [], [], []
    for b in samples:
        P = propagator(problem.operator, b, 1.0, problem.cfg)
        check_positive(P)
        kern = kernel_from_propagator(P, problem.grid)
        kernels.append(kern)
        audits.append(sign_audit(kern).as_dict())
        gammas.append(float(column_gammas(kern, problem.ctx).min()))
    gauge = boundary_gauge_fit(kernels[0], problem.ctx)
    return {
        "audits": audits,
        "gamma_per_sample": gammas,
        "gamma_hat": min(gammas),
        "eps1": gauge["eps1"],
        "sign_audit_passed": all(a["passed"] for a in audits),
    }, kernels


def run_green(problem: Problem, out: Path) -> dict:
    section, kernels = green_section(problem, [problem.a0])
    io.write_matrix(out / "green.csv", kernels[0].K)
    io.write_json(out / "green.json", section)
    if not section["sign_audit_passed"] or not section["gamma_hat"] > 0:
        raise StructuralFailure("sign audit or focusing constant failed")
    return section


def _frames(problem: Problem, count: int, start: int = 0):
    b = problem.config.bundle
    return frames_along_orbit(
        problem.operator, problem.a0, count, problem.cfg, problem.ctx, k_burn=b.k_burn, tol=b.tol, start=start
    )


def run_bundle(problem: Problem, out: Path) -> dict:
    frames = _frames(problem, problem.config.bundle.k_fit)
    pts = problem.grid.free_points
    rows = []
    for k, f in enumerate(frames):
        for i in range(problem.grid.n_free):
            rows.append([k, i, *map(float, pts[i]), float(f.w[i]), float(f.w_star[i])])
    header = ["k", "node"] + ["x", "y"][: problem.grid.dim] + ["w", "w_star"]
    io.write_csv(out / "frames.csv", header, rows)
    summary = _frame_summary(problem, frames)
    io.write_json(out / "bundle.json", summary)
    if not summary["frames_positive"]:
        raise StructuralFailure("a frame vector left the positive cone")
    return summary


def _frame_summary(problem: Problem, frames) -> dict:
    w = problem.ctx.weights
    return {
        "kappa": [f.kappa for f in frames],
        "w_star_enorm": [f.w_star_enorm for f in frames],
        "forward_distance": [f.forward_distance for f in frames],
        "adjoint_distance": [f.adjoint_distance for f in frames],
        "frames_positive": all(
            cone_position(f.w, problem.ctx) == INTERIOR_POSITIVE
            and cone_position(f.w_star, problem.ctx) == INTERIOR_POSITIVE
            for f in frames
        ),
        "min_basis_pairing": float(min((f.w_star * w).min() for f in frames)),
    }


def separation_section(problem: Problem, frames=None, maps=None):
    b = problem.config.bundle
    frames = frames if frames is not None else _frames(problem, b.k_fit)
    rep = separation_estimate(
        problem.operator, problem.a0, frames, problem.cfg, problem.ctx,
        panel_size=b.panel_size, rng=problem.rng(1), maps=maps,
    )
    return rep, frames


def run_separation(problem: Problem, out: Path) -> dict:
    rep, _ = separation_section(problem)
    data = rep.as_dict()
    io.write_json(out / "separation.json", data)
    if not rep.lambda_hat < 1:
        raise StructuralFailure(f"lambda_hat = {rep.lambda_hat} is not below 1")
    return data


def global_section(problem: Problem, rep=None) -> tuple[dict, object]:
    g = problem.config.global_
    sol = build_global(
        problem.operator, problem.a0, problem.cfg, problem.ctx, g.T_back, g.T_fwd,
        k_burn=problem.config.bundle.k_burn, tol=problem.config.bundle.tol,
    )
    basis = np.zeros(problem.grid.n_free)
    basis[0] = 1.0
    dim = dim_check(problem.operator, problem.a0, problem.cfg, problem.ctx, [problem.ctx.e, basis],
                    k_burn=problem.config.bundle.k_burn)
    rng = problem.rng(2)
    times = sol.times
    defects = []
    for _ in range(g.cocycle_pairs):
        i, j = sorted(rng.choice(len(times), 2, replace=False))
        defects.append(cocycle_defect(sol, problem.operator, problem.cfg, float(times[i]), float(times[j])))
    cert = {
        "positivity": {io.fmt(float(t)): p for t, p in zip(times, sol.positivity)},
        "globally_positive": sol.globally_positive,
        "alignment": {str(k): v for k, v in sol.alignment.items()},
        "alignment_max": max(sol.alignment.values()),
        "dim_check_distance": dim.distance,
        "cocycle_defect_max": max(defects) if defects else 0.0,
        "frame_scalars": list(sol.frame_scalars),
    }
    if rep is not None and g.T_back > 0:
        back = _frames(problem, g.T_back, start=-g.T_back)[::-1]
        traces = [misalignment_blowup(back, problem.ctx, f, rep.lambda_hat, rep.gamma_hat) for f in g.tail_fractions]
        cert["misalignment"] = [
            {"tail_fraction": t.tail_fraction, "exit_step": t.exit_step, "estimate": t.estimate, "rho": list(t.rho)}
            for t in traces
        ]
    return cert, sol


def run_global(problem: Problem, out: Path) -> dict:
    cert, sol = global_section(problem)
    rows = ([float(t), i, float(v)] for t, vals in zip(sol.times, sol.values) for i, v in enumerate(vals))
    io.write_csv(out / "global.csv", ["t", "node", "value"], rows)
    io.write_json(out / "global.json", cert)
    if not cert["globally_positive"]:
        raise StructuralFailure("global solution left the positive cone")
    return cert


def _focusing_panel(problem: Problem, kernels, gamma_hat: float) -> bool:
    rng = problem.rng(3)
    n = problem.config.bundle.focus_panel
    ok = True
    for kern in kernels:
        panel = rng.uniform(0.0, 1.0, size=(problem.grid.n_free, n))
        panel[:, : min(n, 1)] = 0.0
        panel[rng.integers(problem.grid.n_free), 0] = 1.0
        images = kern.propagator.M @ panel
        ok &= all(focusing_inequalities(images[:, k], problem.ctx, gamma_hat) for k in range(n))
    return bool(ok)


def run_report(problem: Problem, out: Path) -> dict:
    bcfg = problem.config.bundle
    samples = sample_hull(problem.spec, bcfg.hull_samples, horizon=1.0)
    green, kernels = green_section(problem, samples)
    gamma_hat = green["gamma_hat"]
    focus_ok = _focusing_panel(problem, kernels, gamma_hat) if gamma_hat > 0 else False

    frames = _frames(problem, bcfg.k_fit)
    maps = orbit_maps(problem.operator, problem.a0, bcfg.k_fit, problem.cfg)
    rep, frames = separation_section(problem, frames, maps)
    fsum = _frame_summary(problem, frames)
    cert, _ = global_section(problem, rep)

    mis = cert.get("misalignment", [])
    exits = [m["exit_step"] for m in sorted(mis, key=lambda m: m["tail_fraction"])]
    mis_monotone = all(a is not None and b is not None and a >= b for a, b in zip(exits, exits[1:]))
    mis_estimate = all(
        m["exit_step"] is not None and abs(m["exit_step"] - m["estimate"]) <= 2 for m in mis if m["tail_fraction"] == 0.1
    )
    flags = {
        "eigen_residual": problem.eigen.residual <= 1e-8,
        "sign_audit": green["sign_audit_passed"],
        "gamma_positive": gamma_hat > 0,
        "focusing": focus_ok,
        "lambda_below_one": bool(rep.lambda_hat < 1),
        "D_at_least_one": bool(rep.D_hat >= 1),
        "rho_monotone": rep.monotone_after_burn_in,
        "L_consistent": bool(rep.L_hat <= L_SLACK * rep.L_bound and rep.lower_bound_ratio_min >= 1 / L_SLACK),
        "frames_positive": fsum["frames_positive"],
        "no_nonneg_in_tail": fsum["min_basis_pairing"] > 0,
        "invariance": bool(rep.invariance_defect_max <= INVARIANCE_TOL),
        "dual_invariance": bool(rep.dual_invariance_defect_max <= DUAL_INVARIANCE_TOL),
        "dim_check": bool(cert["dim_check_distance"] < DIM_TOL),
        "globally_positive": cert["globally_positive"],
        "alignment": bool(cert["alignment_max"] < ALIGNMENT_TOL),
        "cocycle": bool(cert["cocycle_defect_max"] <= COCYCLE_TOL),
        "misalignment_monotone": mis_monotone,
        "misalignment_estimate": mis_estimate,
    }
    robin = [i for i, node in enumerate(problem.grid.free) if problem.grid.boundary_class.get(int(node)) == "robin"]
    summary = {
        "name": problem.config.name,
        "lambda1": problem.eigen.lambda1,
        "e_robin_min": float(problem.eigen.e[robin].min()) if robin else None,
        "gamma_hat": gamma_hat,
        "eps1": green["eps1"],
        "mu_hat": rep.mu_hat,
        "lambda_hat": rep.lambda_hat,
        "D_hat": rep.D_hat,
        "L_hat": rep.L_hat,
        "L_bound": rep.L_bound,
        "L_bound_mu": rep.L_bound_mu,
        "kappa": fsum["kappa"][0],
        "dim_check_distance": cert["dim_check_distance"],
        "alignment_max": cert["alignment_max"],
        "cocycle_defect_max": cert["cocycle_defect_max"],
        "misalignment": mis,
        "flags": flags,
        "passed": all(flags.values()),
    }
    io.write_json(out / "report.json", summary)
    if not summary["passed"]:
        failed = sorted(k for k, v in flags.items() if not v)
        raise StructuralFailure(f"invariant suites failed: {', '.join(failed)}")
    return summary


HANDLERS: dict[str, Callable[[Problem, Path], dict]] = {
    "solve": run_solve,
    "green": run_green,
    "bundle": run_bundle,
    "separation": run_separation,
    "global": run_global,
    "report": run_report,
}


def run(subcommand: str, config: RunConfig, out_dir: Optional[str] = None) -> int:
    """Run one subcommand; returns the process exit code."""
    if subcommand not in HANDLERS:
        log.error("unknown subcommand %r", subcommand)
        return EXIT_USAGE
    out = Path(out_dir or config.output_dir)
    try:
        problem = build_problem(config)
        HANDLERS[subcommand](problem, out)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_USAGE
    except STRUCTURAL_ERRORS as exc:
        log.error("structural failure: %s", exc)
        return EXIT_FAILURE
    return EXIT_OK
