"""Principal subbundle ``S(b) = span(w_b)``, dual frame ``w*_b`` and separation constants.

Frames are obtained by power iteration of the time-1 cocycle.  ``w_b`` is the
limit of images pulled back from the past, ``w*_b`` the limit of adjoint
images pushed back from the future.  The pair is normalized so that
``||w_b||_e = 1`` and ``<w_b, w*_b>_W = 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .coefficient_hull import HullPoint, translate
from .discretization import OperatorMatrix, w_inner
from .evolution import EvolutionConfig, PropagatorMatrix, propagator, step_adjoint, time_one
from .green_kernel import kernel_from_propagator
from .order_cone import (
    INTERIOR_POSITIVE,
    ConeContext,
    column_gammas,
    cone_position,
    e_norm,
    e_operator_norm,
    projective_distance,
)


class BundleError(RuntimeError):
    def __init__(self, message: str, distance: float = float("nan")):
        super().__init__(message)
        self.distance = distance


@dataclass(frozen=True, eq=False)
class PrincipalFrame:
    b: HullPoint
    w: np.ndarray
    w_star: np.ndarray
    kappa: float
    w_star_enorm: float
    forward_distance: float
    adjoint_distance: float
    depth: int
    w_prev: Optional[np.ndarray] = field(default=None, repr=False)


def _pair_distance(pair: np.ndarray) -> float:
    return projective_distance(pair[:, 0], pair[:, 1])


def _normalize_columns(pair: np.ndarray, ctx: ConeContext) -> np.ndarray:
    return pair / (np.abs(pair) / ctx.e[:, None]).max(axis=0)


def _adjoint_one(operator, b_to: HullPoint, v: np.ndarray, cfg: EvolutionConfig) -> np.ndarray:
    """``psi(1, b_to . -1)* v``: adjoint time-1 map landing at phase ``b_to . -1``."""
    return step_adjoint(operator, b_to, v, -1.0, cfg)


def _forward_pullback(operator, b, depth, cfg, ctx):
    """Two seeds pulled back from depth ``depth`` and ``depth + 1``; returns pairs at b.-1 and b."""
    start = translate(b, -float(depth))
    seed = ctx.e.copy()
    pair = np.stack([seed, time_one(operator, translate(b, -float(depth + 1)), seed, cfg)], axis=1)
    pair = _normalize_columns(pair, ctx)
    prev = pair
    for j in range(depth):
        prev = pair
        pair = _normalize_columns(time_one(operator, translate(start, float(j)), pair, cfg), ctx)
    return prev, pair


def _adjoint_pushback(operator, b, depth, cfg, ctx):
    seed = ctx.e.copy()
    far = translate(b, float(depth + 1))
    pair = np.stack([seed, _adjoint_one(operator, far, seed, cfg)], axis=1)
    pair = _normalize_columns(pair, ctx)
    for j in range(depth, 0, -1):
        pair = _normalize_columns(_adjoint_one(operator, translate(b, float(j)), pair, cfg), ctx)
    return pair


def _finish_frame(operator, b, w, w_prev, w_star, fwd, adj, depth, cfg, ctx) -> PrincipalFrame:
    if cone_position(w, ctx) != INTERIOR_POSITIVE or cone_position(w_star, ctx) != INTERIOR_POSITIVE:
        raise BundleError("frame vectors left the open positive cone")
    w = w / e_norm(w, ctx)
    w_star = w_star / w_inner(w, w_star, ctx.weights)
    kappa = float("nan")
    if w_prev is not None:
        w_prev = w_prev / e_norm(w_prev, ctx)
        kappa = w_inner(w_prev, _adjoint_one(operator, b, w_star, cfg), ctx.weights)
    return PrincipalFrame(b, w, w_star, kappa, e_norm(w_star, ctx), fwd, adj, depth, w_prev)


def principal_frame(
    operator: OperatorMatrix,
    b: HullPoint,
    cfg: EvolutionConfig,
    ctx: ConeContext,
    k_max: int = 320,
    tol: float = 1e-11,
    k_burn: int = 40,
) -> PrincipalFrame:
    """Frame at ``b`` by pullback power iteration.

    Convergence is declared when the iterates from depths ``k`` and ``k + 1``
    are within projective distance ``tol``; ``k`` starts at ``k_burn`` and
    doubles up to ``k_max``.
    """
    depth = k_burn
    while True:
        prev, pair = _forward_pullback(operator, b, depth, cfg, ctx)
        fwd = _pair_distance(pair)
        adj_pair = _adjoint_pushback(operator, b, depth, cfg, ctx)
        adj = _pair_distance(adj_pair)
        if fwd < tol and adj < tol:
            break
        if 2 * depth > k_max:
            raise BundleError(
                f"power iteration did not converge in {depth} steps (distances {fwd:.3e}, {adj:.3e})",
                max(fwd, adj),
            )
        depth *= 2
    return _finish_frame(operator, b, pair[:, 0], prev[:, 0], adj_pair[:, 0], fwd, adj, depth, cfg, ctx)


def _reuses_phases(b: HullPoint) -> bool:
    return b.spec.kind in ("constant", "separable_periodic")


def frames_along_orbit(
    operator: OperatorMatrix,
    b: HullPoint,
    count: int,
    cfg: EvolutionConfig,
    ctx: ConeContext,
    k_burn: int = 40,
    tol: float = 1e-11,
    start: int = 0,
) -> list[PrincipalFrame]:
    """Frames at ``b.k`` for ``k = start, ..., start + count``.

    Periodic and constant coefficients reuse one frame per distinct phase;
    otherwise a single forward and a single adjoint sweep cover the orbit.
    """
    points = [translate(b, float(k)) for k in range(start, start + count + 1)]
    if _reuses_phases(b):
        keys = [p.key() for p in points]
        if len(set(keys)) <= count // 2 + 1:
            cache: dict = {}
            out = []
            for p, key in zip(points, keys):
                if key not in cache:
                    cache[key] = principal_frame(operator, p, cfg, ctx, tol=tol, k_burn=k_burn)
                out.append(_rebase(cache[key], p))
            return out

    first = points[0]
    prev, pair = _forward_pullback(operator, first, k_burn, cfg, ctx)
    forward = [(prev, pair)]
    for k in range(count):
        nxt = _normalize_columns(time_one(operator, points[k], pair, cfg), ctx)
        forward.append((pair, nxt))
        pair = nxt
    adj_pairs = [None] * (count + 1)
    adj_pairs[count] = _adjoint_pushback(operator, points[count], k_burn, cfg, ctx)
    for k in range(count, 0, -1):
        adj_pairs[k - 1] = _normalize_columns(_adjoint_one(operator, points[k], adj_pairs[k], cfg), ctx)

    frames = []
    for k, p in enumerate(points):
        prev_k, pair_k = forward[k]
        fwd, adj = _pair_distance(pair_k), _pair_distance(adj_pairs[k])
        if fwd >= tol or adj >= tol:
            raise BundleError(
                f"orbit frame {start + k} not converged (distances {fwd:.3e}, {adj:.3e}); increase k_burn",
                max(fwd, adj),
            )
        frames.append(
            _finish_frame(operator, p, pair_k[:, 0], prev_k[:, 0], adj_pairs[k][:, 0], fwd, adj, k_burn, cfg, ctx)
        )
    return frames


def _rebase(frame: PrincipalFrame, b: HullPoint) -> PrincipalFrame:
    return PrincipalFrame(
        b, frame.w, frame.w_star, frame.kappa, frame.w_star_enorm,
        frame.forward_distance, frame.adjoint_distance, frame.depth, frame.w_prev,
    )


def project(frame: PrincipalFrame, u: np.ndarray) -> tuple[float, np.ndarray]:
    """``P(b) u = s w_b`` with ``s = <u, w*_b>_W``; returns ``(s, u - s w_b)``."""
    s = w_inner(u, frame.w_star, frame_weights(frame))
    return s, u - s * frame.w


def frame_weights(frame: PrincipalFrame) -> np.ndarray:
    return frame.b.spec.grid.quad_weights


def projector_matrix(frame: PrincipalFrame) -> np.ndarray:
    w = frame_weights(frame)
    return np.outer(frame.w, frame.w_star * w)


def rho_trace(frames: Sequence[PrincipalFrame], maps: Sequence[np.ndarray], u: np.ndarray, ctx: ConeContext) -> np.ndarray:
    """``rho_k = ||(I - P) psi^k u||_e / |<psi^k u, w*>|`` along the orbit."""
    rho = np.empty(len(frames))
    v = np.array(u, dtype=float)
    for k, frame in enumerate(frames):
        s, tail = project(frame, v)
        rho[k] = e_norm(tail, ctx) / abs(s) if s != 0 else math.inf
        if k < len(maps):
            v = maps[k] @ v
            v = v / e_norm(v, ctx)
    return rho


@dataclass
class SeparationReport:
    lambda_hat: float
    D_hat: float
    gamma_hat: float
    mu_hat: float
    L_hat: float
    L_bound: float
    L_bound_mu: float
    projector_norm_max: float
    lower_bound_ratio_min: float
    k_used: int
    rho_traces: list
    monotone_after_burn_in: bool
    invariance_defect_max: float
    dual_invariance_defect_max: float
    kappas: list
    warnings: list

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def orbit_maps(operator, b: HullPoint, count: int, cfg: EvolutionConfig) -> list[PropagatorMatrix]:
    """Time-1 propagators at ``b.0, ..., b.(count-1)``, shared across repeated phases."""
    cache: dict = {}
    out = []
    for k in range(count):
        p = translate(b, float(k))
        key = p.key() if _reuses_phases(b) else ("orbit", k)
        if key not in cache:
            cache[key] = propagator(operator, p, 1.0, cfg)
        out.append(cache[key])
    return out


def separation_estimate(
    operator: OperatorMatrix,
    b: HullPoint,
    frames: Sequence[PrincipalFrame],
    cfg: EvolutionConfig,
    ctx: ConeContext,
    panel_size: int = 8,
    rng: Optional[np.random.Generator] = None,
    maps: Optional[Sequence[PropagatorMatrix]] = None,
) -> SeparationReport:
    """Fit the exponential-separation constants along ``b, b.1, ..., b.k_fit``.

    ``frames`` holds the ``k_fit + 1`` frames of the orbit.  ``lambda_hat`` is
    the worst panel member's geometric-mean ratio over the second half of the
    window; ``L_hat`` is the exact sup of the one-step ratio over the
    nonnegative cone (attained at basis vectors) at every orbit point.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    k_fit = len(frames) - 1
    if k_fit < 2:
        raise ValueError("need at least 3 frames for a separation fit")
    maps = list(maps) if maps is not None else orbit_maps(operator, b, k_fit, cfg)
    mats = [P.M for P in maps]
    w = ctx.weights
    warnings = []

    panel = rng.standard_normal((panel_size, len(ctx.e)))
    traces = np.array([rho_trace(frames, mats, u, ctx) for u in panel])
    half = k_fit // 2
    good = traces[:, half] > 0
    finite = np.isfinite(traces).all(axis=1)
    usable = good & finite
    lam_members = (traces[usable, k_fit] / traces[usable, half]) ** (1.0 / (k_fit - half))
    lambda_hat = float(lam_members.max()) if lam_members.size else float("nan")
    ks = np.arange(k_fit + 1)
    D_hat = float((traces[usable] / (traces[usable, :1] * lambda_hat**ks)).max()) if lam_members.size else float("nan")
    tail = traces[usable][:, half:]
    monotone = bool(np.all(np.diff(tail, axis=1) < 0))
    if not monotone:
        warnings.append("rho_k not monotone after burn-in")

    gammas = [float(column_gammas(kernel_from_propagator(P, ctx_grid(frames)), ctx).min()) for P in maps]
    gamma_hat = min(gammas)
    mu_hat = min(float((frames[k + 1].w_star / ctx.e).min()) for k in range(k_fit))
    ee = w_inner(ctx.e, ctx.e, w)

    L_hat = 0.0
    proj_norm = 0.0
    L_bound = 0.0
    lower_ratio = math.inf
    inv_defect = 0.0
    dual_defect = 0.0
    for k in range(k_fit):
        nxt = frames[k + 1]
        M = mats[k]
        Q = np.eye(len(ctx.e)) - projector_matrix(nxt)
        qn = e_operator_norm(Q, ctx)
        proj_norm = max(proj_norm, qn)
        s = (M * (nxt.w_star * w)[:, None]).sum(axis=0)  # <M e_j, w*> for every basis vector
        tails = M - np.outer(nxt.w, s)
        ratios = (np.abs(tails) / ctx.e[:, None]).max(axis=0) / s
        L_hat = max(L_hat, float(ratios.max()))
        L_bound = max(L_bound, qn / (gamma_hat * w_inner(ctx.e, nxt.w_star, w)))
        image_norms = (np.abs(M) / ctx.e[:, None]).max(axis=0)
        lower_ratio = min(lower_ratio, float((s / (gamma_hat * mu_hat * ee * image_norms)).min()))

        img = M @ frames[k].w
        inv_defect = max(inv_defect, projective_distance(img, nxt.w))
        _, t_vec = project(frames[k], panel[0])
        dual_defect = max(
            dual_defect, abs(w_inner(M @ t_vec, nxt.w_star, w)) / (e_norm(M @ t_vec, ctx) * e_norm(nxt.w_star, ctx))
        )

    L_bound_mu = proj_norm / (gamma_hat * mu_hat * ee)
    return SeparationReport(
        lambda_hat=lambda_hat,
        D_hat=D_hat,
        gamma_hat=gamma_hat,
        mu_hat=mu_hat,
        L_hat=L_hat,
        L_bound=L_bound,
        L_bound_mu=L_bound_mu,
        projector_norm_max=proj_norm,
        lower_bound_ratio_min=lower_ratio,
        k_used=k_fit,
        rho_traces=traces.tolist(),
        monotone_after_burn_in=monotone,
        invariance_defect_max=inv_defect,
        dual_invariance_defect_max=dual_defect,
        kappas=[f.kappa for f in frames],
        warnings=warnings,
    )


def ctx_grid(frames: Sequence[PrincipalFrame]):
    return frames[0].b.spec.grid
