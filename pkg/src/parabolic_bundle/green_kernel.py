"""Green's kernels of the discrete cocycle and their boundary sign audit."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .coefficient_hull import HullPoint
from .discretization import Grid, OperatorMatrix
from .evolution import EvolutionConfig, PropagatorMatrix, propagator


@dataclass(frozen=True, eq=False)
class GreenKernel:
    """``K[i, j] = G(t, b)(x_i, xi_j)`` on free nodes, with normal-derivative traces.

    Boundary traces are indexed by the Dirichlet faces of the grid
    (``grid.dirichlet_faces()`` order).  ``normal_x[f, j]`` is the outward
    derivative in ``x`` at face node ``f``; ``normal_xi[i, f]`` the one in ``xi``;
    ``corner[f, g]`` the nested mixed derivative (``xi`` first, then ``x``).
    """

    grid: Grid
    K: np.ndarray
    t: float
    b: HullPoint
    normal_x: np.ndarray
    normal_xi: np.ndarray
    corner: np.ndarray
    propagator: PropagatorMatrix = field(repr=False)

    @property
    def dual(self) -> np.ndarray:
        """``G*(t, b)(x, xi) = G(t, b)(xi, x)``."""
        return self.K.T

    def apply(self, u: np.ndarray) -> np.ndarray:
        """Quadrature ``sum_j K[:, j] u_j w_j``."""
        return self.K @ (u * self.grid.quad_weights)

    def apply_dual(self, v: np.ndarray) -> np.ndarray:
        return self.dual @ (v * self.grid.quad_weights)


def kernel_from_propagator(P: PropagatorMatrix, grid: Grid) -> GreenKernel:
    w = grid.quad_weights
    K = P.M / w[None, :]
    faces = grid.dirichlet_faces()
    adj = np.array([grid.free_lookup[f.adjacent] for f in faces], dtype=int)
    hs = np.array([grid.h[f.axis] for f in faces])
    if np.any(adj < 0):
        raise ValueError("a Dirichlet face node has no free neighbour")
    # G vanishes on the Dirichlet boundary, so each one-sided quotient is (0 - G(adjacent)) / h
    normal_x = -K[adj, :] / hs[:, None]
    normal_xi = -K[:, adj] / hs[None, :]
    corner = K[np.ix_(adj, adj)] / (hs[:, None] * hs[None, :])
    return GreenKernel(grid, K, P.t, P.b, normal_x, normal_xi, corner, P)


def green(operator: OperatorMatrix, b: HullPoint, t: float, cfg: EvolutionConfig) -> GreenKernel:
    """``K = M W^-1`` for ``M = psi(t, b)``."""
    return kernel_from_propagator(propagator(operator, b, t, cfg), operator.grid)


@dataclass(frozen=True)
class SignCheck:
    name: str
    passed: bool
    extreme: float  # min for positive checks, max for negative ones
    structural: bool = False


@dataclass(frozen=True)
class SignAudit:
    checks: tuple[SignCheck, ...]
    min_abs_entry: float
    t: float

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def as_dict(self) -> dict:
        return {
            "t": self.t,
            "passed": self.passed,
            "min_abs_entry": self.min_abs_entry,
            "checks": {
                c.name: {"passed": c.passed, "extreme": c.extreme, "structural": c.structural} for c in self.checks
            },
        }


def sign_audit(kernel: GreenKernel) -> SignAudit:
    """Strict-sign scan of the kernel and its boundary traces.

    (i) ``K > 0``; (iii) ``normal_x < 0``; (iv) ``normal_xi < 0``; (vi) the mixed
    outward derivative, which is a product of two negative one-sided factors and
    so must be ``> 0``.  (ii) and (v) hold by construction (zero boundary
    values) and are reported as structural.
    """
    K = kernel.K
    has_faces = kernel.normal_x.size > 0

    def extreme(a, fn):
        return float(fn(a)) if a.size else float("nan")

    checks = (
        SignCheck("interior_positive", bool(K.min() > 0), float(K.min())),
        SignCheck("boundary_values_zero", True, 0.0, structural=True),
        SignCheck(
            "normal_x_negative", bool(not has_faces or kernel.normal_x.max() < 0), extreme(kernel.normal_x, np.max)
        ),
        SignCheck(
            "normal_xi_negative", bool(not has_faces or kernel.normal_xi.max() < 0), extreme(kernel.normal_xi, np.max)
        ),
        SignCheck("boundary_normals_zero", True, 0.0, structural=True),
        SignCheck("mixed_normal_positive", bool(not has_faces or kernel.corner.min() > 0), extreme(kernel.corner, np.min)),
    )
    return SignAudit(checks, float(np.abs(K).min()), kernel.t)
