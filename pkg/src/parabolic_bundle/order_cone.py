"""Order-unit norm, cone tests, focusing constant and Hilbert's projective metric."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .coefficient_hull import HullPoint
from .discretization import PrincipalEigenpair
from .evolution import EvolutionConfig, time_one
from .green_kernel import GreenKernel, green

INTERIOR_POSITIVE = "interior_positive"
BOUNDARY_POSITIVE = "boundary_positive"
INTERIOR_NEGATIVE = "interior_negative"
BOUNDARY_NEGATIVE = "boundary_negative"
NEITHER = "neither"


class ConeError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ConeContext:
    e: np.ndarray
    weights: np.ndarray
    strict_margin: float = 1e-12

    def __post_init__(self):
        if not np.all(self.e > 0):
            raise ConeError("order unit e must be strictly positive")

    @classmethod
    def from_eigenpair(cls, pair: PrincipalEigenpair, strict_margin: float = 1e-12) -> "ConeContext":
        return cls(pair.e, pair.grid.quad_weights, strict_margin)

    def ratios(self, u: np.ndarray) -> np.ndarray:
        return np.asarray(u) / self.e


def e_norm(u: np.ndarray, ctx: ConeContext) -> float:
    """``||u||_e = max_i |u_i| / e_i``."""
    return float(np.max(np.abs(u) / ctx.e))


def cone_position(u: np.ndarray, ctx: ConeContext) -> str:
    r = ctx.ratios(u)
    if r.min() > ctx.strict_margin:
        return INTERIOR_POSITIVE
    if r.max() < -ctx.strict_margin:
        return INTERIOR_NEGATIVE
    if np.all(u >= 0) and np.any(u > 0):
        return BOUNDARY_POSITIVE
    if np.all(u <= 0) and np.any(u < 0):
        return BOUNDARY_NEGATIVE
    return NEITHER


def e_operator_norm(Q: np.ndarray, ctx: ConeContext) -> float:
    """Operator norm of a matrix on (R^n, ||.||_e): ``max_i sum_j |Q_ij| e_j / e_i``."""
    return float(np.max((np.abs(Q) @ ctx.e) / ctx.e))


def m_values(kernel: GreenKernel, ctx: ConeContext) -> np.ndarray:
    """``m(b, xi_j) = min_x K[x, j] / e(x)`` for every column, clamped at 0."""
    return np.maximum((kernel.K / ctx.e[:, None]).min(axis=0), 0.0)


def lower_gauge_m(kernel: GreenKernel, xi_index: int, ctx: ConeContext) -> float:
    return float(max((kernel.K[:, xi_index] / ctx.e).min(), 0.0))


def column_gammas(kernel: GreenKernel, ctx: ConeContext) -> np.ndarray:
    """``m(b, xi) / ||G_b(xi)||_e`` per column."""
    ratio = kernel.K / ctx.e[:, None]
    return np.maximum(ratio.min(axis=0), 0.0) / np.abs(ratio).max(axis=0)


def gamma_from_kernels(kernels: Iterable[GreenKernel], ctx: ConeContext) -> float:
    return float(min(column_gammas(k, ctx).min() for k in kernels))


def boundary_gauge_fit(kernel: GreenKernel, ctx: ConeContext) -> dict:
    """Fit ``m(b, xi) >= eps1 * dist(xi, Dirichlet boundary)`` over all columns."""
    dist = kernel.grid.dirichlet_distance()
    m = m_values(kernel, ctx)
    finite = np.isfinite(dist)
    eps1 = float((m[finite] / dist[finite]).min())
    return {"eps1": eps1, "holds": bool(eps1 > 0)}


@dataclass(frozen=True)
class FocusingReport:
    gamma_hat: float
    per_sample: tuple[float, ...]

    @property
    def positive(self) -> bool:
        return self.gamma_hat > 0


def focusing_gamma(operator, hull_samples: Sequence[HullPoint], cfg: EvolutionConfig, ctx: ConeContext) -> FocusingReport:
    """Minimum of ``m(b, xi)/||G_b(xi)||_e`` over the sampled ``b`` and all ``xi``."""
    if not hull_samples:
        raise ConeError("need at least one hull sample")
    per = tuple(float(column_gammas(green(operator, b, 1.0, cfg), ctx).min()) for b in hull_samples)
    return FocusingReport(min(per), per)


def focusing_inequalities(image: np.ndarray, ctx: ConeContext, gamma_hat: float) -> bool:
    """``gamma ||v||_e e <= v <= ||v||_e e`` entrywise, up to ``strict_margin``."""
    n = e_norm(image, ctx)
    tol = ctx.strict_margin * max(n, 1.0)
    lower = np.all(image - gamma_hat * n * ctx.e >= -tol)
    upper = np.all(n * ctx.e - image >= -tol)
    return bool(lower and upper)


def focusing_check(u: np.ndarray, b: HullPoint, operator, cfg: EvolutionConfig, ctx: ConeContext, gamma_hat: float) -> bool:
    if np.any(u < 0):
        raise ConeError("focusing check needs a nonnegative vector")
    return focusing_inequalities(time_one(operator, b, u, cfg), ctx, gamma_hat)


def projective_distance(u: np.ndarray, v: np.ndarray, ctx: ConeContext | None = None) -> float:
    """Hilbert's projective metric ``log(max(u/v) * max(v/u))`` on the open cone."""
    if ctx is not None:
        for name, x in (("u", u), ("v", v)):
            if cone_position(x, ctx) != INTERIOR_POSITIVE:
                raise ConeError(f"{name} is not in the interior of the positive cone")
    elif np.any(u <= 0) or np.any(v <= 0):
        raise ConeError("projective distance needs strictly positive vectors")
    r = np.asarray(u) / np.asarray(v)
    return float(max(math.log(r.max() / r.min()), 0.0))
