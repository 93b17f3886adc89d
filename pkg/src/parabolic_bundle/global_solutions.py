"""The globally positive solution through ``a0`` and its uniqueness diagnostics.

Backward continuation happens only inside the one-dimensional principal
subbundle, as a scalar recursion; the full propagator is never inverted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .coefficient_hull import HullPoint, translate
from .discretization import OperatorMatrix
from .evolution import EvolutionConfig, step_forward, time_one
from .order_cone import (
    INTERIOR_POSITIVE,
    ConeContext,
    cone_position,
    e_norm,
    projective_distance,
)
from .principal_bundle import PrincipalFrame, frames_along_orbit

FRAME_DEFECT_LIMIT = 1e-6


class GlobalSolutionError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class GlobalSolution:
    """Samples of ``u(t)`` on the dt-lattice ``t = i * dt``, ``-T_back <= t <= T_fwd``."""

    steps: np.ndarray  # integer step indices i
    values: np.ndarray  # (len(steps), n_free)
    dt: float
    a0: HullPoint
    seed: str
    positivity: tuple[str, ...]
    alignment: dict  # integer time -> projective distance to the frame there
    frame_scalars: tuple[float, ...]  # c_j with psi(a0.(-j)) w_{-j} = c_j w_{-j+1}

    @property
    def times(self) -> np.ndarray:
        return self.steps * self.dt

    def index(self, t: float) -> int:
        i = int(round(t / self.dt))
        if abs(i * self.dt - t) > 1e-9 or not self.steps[0] <= i <= self.steps[-1]:
            raise KeyError(f"time {t!r} is not a stored sample")
        return i - int(self.steps[0])

    def at(self, t: float) -> np.ndarray:
        return self.values[self.index(t)]

    def normalized(self, ctx: ConeContext) -> "GlobalSolution":
        """Rescaled so that ``||u(0)||_e = 1``."""
        s = e_norm(self.at(0.0), ctx)
        return self.scaled(1.0 / s)

    def scaled(self, factor: float) -> "GlobalSolution":
        return GlobalSolution(
            self.steps, self.values * factor, self.dt, self.a0, self.seed,
            self.positivity if factor > 0 else tuple("scaled" for _ in self.positivity),
            self.alignment, self.frame_scalars,
        )

    @property
    def globally_positive(self) -> bool:
        return all(p == INTERIOR_POSITIVE for p in self.positivity)


def cocycle_defect(sol: GlobalSolution, operator: OperatorMatrix, cfg: EvolutionConfig, t1: float, t2: float) -> float:
    """Relative defect of ``u(t2) = psi(t2 - t1, a0.t1) u(t1)``."""
    u1 = sol.at(t1)
    pred = step_forward(operator, translate(sol.a0, t1), u1, t2 - t1, cfg)
    actual = sol.at(t2)
    denom = max(np.linalg.norm(actual), np.finfo(float).tiny)
    return float(np.linalg.norm(pred - actual) / denom) if np.any(actual) or np.any(pred) else 0.0


def _fill_segment(operator, b: HullPoint, u: np.ndarray, cfg: EvolutionConfig) -> np.ndarray:
    """States at ``dt, 2dt, ..., 1 - dt`` after ``u`` under ``psi(., b)``."""
    out = []
    for k in range(1, cfg.steps_per_unit):
        u = step_forward(operator, translate(b, (k - 1) * cfg.dt), u, cfg.dt, cfg)
        out.append(u)
    return np.array(out).reshape(-1, len(u))


def build_global(
    operator: OperatorMatrix,
    a0: HullPoint,
    cfg: EvolutionConfig,
    ctx: ConeContext,
    T_back: int = 10,
    T_fwd: int = 10,
    frames: Optional[Sequence[PrincipalFrame]] = None,
    k_burn: int = 40,
    tol: float = 1e-11,
) -> GlobalSolution:
    """Globally positive solution with ``u(0) = w_{a0}``.

    ``frames`` (if given) are the frames at ``a0.k`` for ``k = -T_back, ..., T_fwd``.
    Backward: ``u(-k) = w_{-k} / (c_1 ... c_k)``.  Forward: propagation of
    ``w_{a0}``.  Non-integer times come from ``psi(t - [t], a0.[t]) u([t])``.
    """
    T_back, T_fwd = int(T_back), int(T_fwd)
    if T_back < 0 or T_fwd < 0:
        raise ValueError("T_back and T_fwd must be nonnegative")
    if frames is None:
        frames = frames_along_orbit(operator, a0, T_back + T_fwd, cfg, ctx, k_burn=k_burn, tol=tol, start=-T_back)
    if len(frames) != T_back + T_fwd + 1:
        raise ValueError(f"expected {T_back + T_fwd + 1} frames, got {len(frames)}")
    w = {k - T_back: f.w for k, f in enumerate(frames)}

    integer_states = {0: w[0].copy()}
    scalars = []
    scale = 1.0
    for j in range(1, T_back + 1):
        image = time_one(operator, translate(a0, -float(j)), w[-j], cfg)
        defect = projective_distance(image, w[-j + 1])
        if defect > FRAME_DEFECT_LIMIT:
            raise GlobalSolutionError(f"frame defect {defect:.3e} at phase a0.({-j}) exceeds {FRAME_DEFECT_LIMIT:g}")
        c = e_norm(image, ctx)
        scalars.append(c)
        scale *= c
        integer_states[-j] = w[-j] / scale
    for k in range(1, T_fwd + 1):
        integer_states[k] = time_one(operator, translate(a0, float(k - 1)), integer_states[k - 1], cfg)

    M = cfg.steps_per_unit
    blocks = []
    for k in range(-T_back, T_fwd):
        blocks.append(integer_states[k][None, :])
        blocks.append(_fill_segment(operator, translate(a0, float(k)), integer_states[k], cfg))
    blocks.append(integer_states[T_fwd][None, :])
    values = np.vstack(blocks)
    steps = np.arange(-T_back * M, T_fwd * M + 1)

    alignment = {k: projective_distance(integer_states[k], w[k]) for k in range(-T_back, T_fwd + 1)}
    positivity = tuple(cone_position(v, ctx) for v in values)
    return GlobalSolution(steps, values, cfg.dt, a0, "w_{a0}", positivity, alignment, tuple(scalars))


@dataclass(frozen=True)
class DimCheck:
    distance: float
    history: tuple[float, ...]
    k_burn: int


def dim_check(
    operator: OperatorMatrix,
    a0: HullPoint,
    cfg: EvolutionConfig,
    ctx: ConeContext,
    seeds: Sequence[np.ndarray],
    k_burn: int = 40,
) -> DimCheck:
    """Evolve two nonnegative seeds from time ``-k_burn`` to ``0`` and compare directions."""
    if len(seeds) != 2:
        raise ValueError("dim_check needs exactly two seeds")
    pair = np.stack([np.asarray(s, dtype=float) for s in seeds], axis=1)
    if np.any(pair < 0) or not np.all(pair.any(axis=0)):
        raise ValueError("seeds must be nonzero and nonnegative")
    history = []
    for j in range(k_burn, 0, -1):
        pair = time_one(operator, translate(a0, -float(j)), pair, cfg)
        pair = pair / (np.abs(pair) / ctx.e[:, None]).max(axis=0)
        history.append(projective_distance(pair[:, 0], pair[:, 1]))
    dist = history[-1] if history else _seed_distance(pair)
    return DimCheck(dist, tuple(history), k_burn)


def _seed_distance(pair: np.ndarray) -> float:
    try:
        return projective_distance(pair[:, 0], pair[:, 1])
    except ValueError:
        return math.inf


@dataclass(frozen=True)
class MisalignmentTrace:
    tail_fraction: float
    exit_step: Optional[int]  # first j >= 0 with u(-j) outside the cone; None if never
    estimate: Optional[int]
    rho: tuple[float, ...]
    min_ratio: tuple[float, ...]  # min_i u_i(-j) / e_i along the scan

    @property
    def exits(self) -> bool:
        return self.exit_step is not None


def tail_direction(frame: PrincipalFrame, ctx: ConeContext) -> np.ndarray:
    """A fixed-shape vector of ``T(b)`` with ``||.||_e = 1``: the tail of ``e`` times a ramp in ``x``."""
    grid = frame.b.spec.grid
    x = grid.free_points[:, 0]
    lo, hi = grid.extents[0]
    u = ctx.e * (x - 0.5 * (lo + hi)) / (hi - lo)
    tail = u - (u @ (frame.w_star * ctx.weights)) * frame.w
    return tail / e_norm(tail, ctx)


def misalignment_blowup(
    frames_back: Sequence[PrincipalFrame],
    ctx: ConeContext,
    tail_fraction: float,
    lambda_hat: float,
    gamma_hat: float,
) -> MisalignmentTrace:
    """Scan ``j = 0, 1, ...`` for the first backward time where ``w + tail`` leaves the cone.

    ``frames_back[j]`` is the frame at ``a0.(-j)``.  A solution with ``u(0) =
    w_{a0} + f tau`` would need tail-to-principal ratio ``f * lambda_hat**(-j)``
    at time ``-j``; the reconstructed ``u(-j)`` is ``w_{-j} + rho_j tau_{-j}``
    up to the positive principal scale.
    """
    if tail_fraction < 0:
        raise ValueError("tail_fraction must be nonnegative")
    if not 0 < lambda_hat < 1:
        raise ValueError("lambda_hat must lie in (0, 1)")
    rho, mins = [], []
    exit_step = None
    for j, frame in enumerate(frames_back):
        r = tail_fraction * lambda_hat ** (-j)
        u = frame.w + r * tail_direction(frame, ctx)
        rho.append(r)
        mins.append(float((u / ctx.e).min()))
        if u.min() < 0:
            exit_step = j
            break
    estimate = None
    if tail_fraction > 0:
        estimate = max(0, math.ceil(math.log(1.0 / (gamma_hat * tail_fraction)) / math.log(1.0 / lambda_hat)))
    return MisalignmentTrace(float(tail_fraction), exit_step, estimate, tuple(rho), tuple(mins))
