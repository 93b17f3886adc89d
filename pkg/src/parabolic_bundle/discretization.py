"""Finite-difference grids, elliptic operators and the principal Dirichlet eigenpair.

Vectors throughout the package live on the *free* nodes of a grid: the interior
nodes plus any Robin boundary nodes (whose values are unknowns).  Dirichlet
boundary nodes carry the value zero and are eliminated from the systems.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .expressions import compile_expression

FACES = ("x_lo", "x_hi", "y_lo", "y_hi")


class GridError(ValueError):
    pass


class AssemblyError(ValueError):
    pass


class EigenError(RuntimeError):
    pass


@dataclass(frozen=True)
class BoundarySpec:
    """Boundary condition on one face: ``u = 0`` or ``du/dbeta + c u = 0``."""

    kind: str = "dirichlet"
    c: float = 0.0
    beta_angle: float = 0.0

    def __post_init__(self):
        if self.kind not in ("dirichlet", "robin"):
            raise GridError(f"unknown boundary kind {self.kind!r}")
        if self.kind == "robin":
            if self.c < 0:
                raise GridError("robin coefficient c must be nonnegative")
            if self.beta_angle != 0.0:
                raise GridError("only beta along the outward normal (beta_angle = 0) is supported")

    @classmethod
    def coerce(cls, value) -> "BoundarySpec":
        if isinstance(value, BoundarySpec):
            return value
        if isinstance(value, str):
            return cls(kind=value)
        if isinstance(value, Mapping):
            if "robin" in value and len(value) == 1:
                return cls(kind="robin", **dict(value["robin"] or {}))
            return cls(**dict(value))
        raise GridError(f"cannot interpret boundary spec {value!r}")


@dataclass(frozen=True)
class BoundaryFace:
    """A boundary node with a well-defined outward normal (2D corners excluded)."""

    node: int
    adjacent: int  # lattice index of the neighbour one step inward along the normal
    axis: int
    side: int  # +1 on the upper face, -1 on the lower face
    kind: str


@dataclass(frozen=True, eq=False)
class Grid:
    dim: int
    extents: tuple[tuple[float, float], ...]
    n_interior: tuple[int, ...]
    h: tuple[float, ...]
    nodes: np.ndarray
    interior_mask: np.ndarray
    boundary_class: dict[int, str]
    face_bc: dict[str, BoundarySpec]
    free: np.ndarray
    free_lookup: np.ndarray
    quad_weights: np.ndarray
    boundary_faces: tuple[BoundaryFace, ...] = field(repr=False)

    @property
    def lattice_shape(self) -> tuple[int, ...]:
        return tuple(n + 2 for n in self.n_interior)

    @property
    def n_free(self) -> int:
        return len(self.free)

    @property
    def free_points(self) -> np.ndarray:
        return self.nodes[self.free]

    @property
    def domain_measure(self) -> float:
        return float(np.prod([hi - lo for lo, hi in self.extents]))

    @property
    def has_robin(self) -> bool:
        return any(spec.kind == "robin" for spec in self.face_bc.values())

    def multi_index(self, node: int) -> tuple[int, ...]:
        return tuple(int(i) for i in np.unravel_index(node, self.lattice_shape))

    def flat_index(self, idx: Sequence[int]) -> int:
        return int(np.ravel_multi_index(tuple(idx), self.lattice_shape))

    def dirichlet_faces(self) -> list[BoundaryFace]:
        return [f for f in self.boundary_faces if f.kind == "dirichlet"]

    def dirichlet_distance(self) -> np.ndarray:
        """Distance of every free node to the Dirichlet part of the boundary."""
        pts = self.free_points
        dist = np.full(self.n_free, np.inf)
        for k in range(self.dim):
            lo, hi = self.extents[k]
            if self.face_bc[FACES[2 * k]].kind == "dirichlet":
                dist = np.minimum(dist, pts[:, k] - lo)
            if self.face_bc[FACES[2 * k + 1]].kind == "dirichlet":
                dist = np.minimum(dist, hi - pts[:, k])
        return dist


def build_grid(
    dim: int,
    extents: Sequence[Sequence[float]],
    n_interior: Union[int, Sequence[int]],
    bc_spec: Optional[Mapping[str, object]] = None,
) -> Grid:
    """Uniform tensor grid on an interval or rectangle.

    ``bc_spec`` maps face names (``x_lo``, ``x_hi``, ``y_lo``, ``y_hi``) to
    ``"dirichlet"``, ``"robin"`` or ``{"robin": {"c": ...}}``; missing faces are
    Dirichlet.
    """
    if dim not in (1, 2):
        raise GridError(f"dim must be 1 or 2, got {dim}")
    if isinstance(n_interior, (int, np.integer)):
        n_interior = (int(n_interior),) * dim
    n_interior = tuple(int(n) for n in n_interior)
    extents = tuple((float(lo), float(hi)) for lo, hi in extents)
    if len(n_interior) != dim or len(extents) != dim:
        raise GridError("extents and n_interior must have one entry per axis")
    if min(n_interior) < 3:
        raise GridError("need at least 3 interior nodes per axis")
    for lo, hi in extents:
        if not hi > lo:
            raise GridError(f"degenerate extent [{lo}, {hi}]")

    bc_spec = dict(bc_spec or {})
    unknown = set(bc_spec) - set(FACES[: 2 * dim])
    if unknown:
        raise GridError(f"unknown faces {sorted(unknown)} for dim={dim}")
    face_bc = {f: BoundarySpec.coerce(bc_spec.get(f, "dirichlet")) for f in FACES[: 2 * dim]}
    if dim == 2 and any(s.kind == "robin" for s in face_bc.values()):
        raise GridError("robin faces are an appendix variant and are 1D-only")
    if all(s.kind == "robin" for s in face_bc.values()):
        raise GridError("at least one face must be dirichlet")

    h = tuple((hi - lo) / (n + 1) for (lo, hi), n in zip(extents, n_interior))
    shape = tuple(n + 2 for n in n_interior)
    axes = [lo + h_k * np.arange(s) for (lo, _), h_k, s in zip(extents, h, shape)]
    # endpoints set exactly so boundary coordinates carry no rounding
    for ax, (lo, hi) in zip(axes, extents):
        ax[0], ax[-1] = lo, hi
    mesh = np.meshgrid(*axes, indexing="ij")
    nodes = np.stack([m.ravel() for m in mesh], axis=1)

    n_nodes = nodes.shape[0]
    interior_mask = np.zeros(n_nodes, dtype=bool)
    boundary_class: dict[int, str] = {}
    faces: list[BoundaryFace] = []
    for node, idx in enumerate(itertools.product(*(range(s) for s in shape))):
        on = [(k, -1 if idx[k] == 0 else 1) for k in range(dim) if idx[k] in (0, shape[k] - 1)]
        if not on:
            interior_mask[node] = True
            continue
        kinds = [face_bc[FACES[2 * k + (side > 0)]].kind for k, side in on]
        kind = "dirichlet" if "dirichlet" in kinds else "robin"
        boundary_class[node] = kind
        if len(on) == 1:
            k, side = on[0]
            adj = list(idx)
            adj[k] -= side
            faces.append(BoundaryFace(node, int(np.ravel_multi_index(adj, shape)), k, side, kind))

    free_mask = interior_mask.copy()
    for node, kind in boundary_class.items():
        if kind == "robin":
            free_mask[node] = True
    free = np.flatnonzero(free_mask)
    free_lookup = np.full(n_nodes, -1, dtype=int)
    free_lookup[free] = np.arange(len(free))

    weights = np.ones(len(free))
    for j, node in enumerate(free):
        idx = np.unravel_index(node, shape)
        for k in range(dim):
            on_end = idx[k] in (0, shape[k] - 1)
            weights[j] *= h[k] / 2 if on_end else h[k]

    return Grid(
        dim=dim,
        extents=extents,
        n_interior=n_interior,
        h=h,
        nodes=nodes,
        interior_mask=interior_mask,
        boundary_class=boundary_class,
        face_bc=face_bc,
        free=free,
        free_lookup=free_lookup,
        quad_weights=weights,
        boundary_faces=tuple(faces),
    )


@dataclass(frozen=True, eq=False)
class EllipticCoefficients:
    """Principal part ``a_ij(x)`` and drift ``a_i(x)`` of the elliptic operator.

    ``diffusion(points)`` returns an array of shape ``(m, dim, dim)`` and
    ``drift(points)`` one of shape ``(m, dim)``.
    """

    dim: int
    diffusion: Callable[[np.ndarray], np.ndarray]
    drift: Callable[[np.ndarray], np.ndarray]
    divergence_form: bool = False
    description: str = ""

    @classmethod
    def laplacian(cls, dim: int) -> "EllipticCoefficients":
        return cls.constant(np.eye(dim), np.zeros(dim), description="laplacian")

    @classmethod
    def constant(cls, a, drift=None, divergence_form=False, description="constant") -> "EllipticCoefficients":
        a = np.atleast_2d(np.asarray(a, dtype=float))
        dim = a.shape[0]
        b = np.zeros(dim) if drift is None else np.asarray(drift, dtype=float).reshape(dim)
        return cls(
            dim,
            lambda p: np.broadcast_to(a, (len(p), dim, dim)).copy(),
            lambda p: np.broadcast_to(b, (len(p), dim)).copy(),
            divergence_form,
            description,
        )

    @classmethod
    def from_expressions(cls, diffusion, drift=None, divergence_form=False) -> "EllipticCoefficients":
        """Build from expression strings in ``x`` (and ``y`` for 2D)."""
        dim = len(diffusion)
        names = ("x", "y")[:dim]
        a_expr = [[compile_expression(e, allowed=names) for e in row] for row in diffusion]
        if any(len(row) != dim for row in a_expr):
            raise AssemblyError("diffusion matrix must be square")
        b_expr = [compile_expression(e, allowed=names) for e in (drift or [0.0] * dim)]
        if len(b_expr) != dim:
            raise AssemblyError("drift must have one entry per axis")

        def env(p):
            return {n: p[:, k] for k, n in enumerate(names)}

        def a_fn(p):
            return np.stack([np.stack([e(**env(p)) for e in row], axis=-1) for row in a_expr], axis=-2)

        def b_fn(p):
            return np.stack([e(**env(p)) for e in b_expr], axis=-1)

        desc = f"a={[[e.source for e in row] for row in a_expr]}, drift={[e.source for e in b_expr]}"
        return cls(dim, a_fn, b_fn, divergence_form, desc)


@dataclass(frozen=True, eq=False)
class OperatorMatrix:
    """Discrete ``A`` on free-node vectors and its W-adjoint ``W^-1 A^T W``."""

    grid: Grid
    entries: sp.csr_matrix
    adjoint_entries: sp.csr_matrix
    coeffs: Optional[EllipticCoefficients] = None

    @property
    def weights(self) -> np.ndarray:
        return self.grid.quad_weights

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def dense(self) -> np.ndarray:
        return self.entries.toarray()


def w_adjoint(matrix, weights: np.ndarray):
    """``W^-1 M^T W`` for sparse or dense ``M``; the transpose in the W-inner product."""
    if sp.issparse(matrix):
        return (sp.diags(1.0 / weights) @ matrix.T @ sp.diags(weights)).tocsr()
    return (matrix.T * weights[None, :]) / weights[:, None]


def w_inner(u: np.ndarray, v: np.ndarray, weights: np.ndarray) -> float:
    return float(np.sum(u * v * weights))


def _check_ellipticity(grid: Grid, coeffs: EllipticCoefficients) -> None:
    a = coeffs.diffusion(grid.nodes)
    for node in range(len(grid.nodes)):
        m = a[node]
        if not np.allclose(m, m.T, rtol=0, atol=1e-12 * max(1.0, np.abs(m).max())):
            raise AssemblyError(f"diffusion matrix not symmetric at node {node} x={grid.nodes[node].tolist()}")
        if np.linalg.eigvalsh(m).min() <= 0:
            raise AssemblyError(
                f"diffusion matrix not positive definite at node {node} x={grid.nodes[node].tolist()}"
            )


class _RowBuilder:
    """Accumulates stencil coefficients, eliminating Dirichlet and folding Robin ghosts."""

    def __init__(self, grid: Grid):
        self.grid = grid
        self.shape = grid.lattice_shape
        self.rows: list[int] = []
        self.cols: list[int] = []
        self.vals: list[float] = []

    def add(self, row: int, centre: tuple[int, ...], offset: tuple[int, ...], coef: float) -> None:
        grid = self.grid
        idx = [c + o for c, o in zip(centre, offset)]
        outside = [k for k in range(grid.dim) if not 0 <= idx[k] < self.shape[k]]
        if outside:
            # ghost beyond a Robin node: u_ghost = u_mirror - 2 h c u_centre
            (k,) = outside
            side = 1 if idx[k] >= self.shape[k] else -1
            spec = grid.face_bc[FACES[2 * k + (side > 0)]]
            mirror = list(idx)
            mirror[k] = centre[k] - side
            self.add(row, centre, tuple(m - c for m, c in zip(mirror, centre)), coef)
            self._emit(row, grid.flat_index(centre), -2.0 * grid.h[k] * spec.c * coef)
            return
        self._emit(row, grid.flat_index(idx), coef)

    def _emit(self, row: int, node: int, coef: float) -> None:
        col = self.grid.free_lookup[node]
        if col < 0 or coef == 0.0:
            return
        self.rows.append(row)
        self.cols.append(int(col))
        self.vals.append(coef)

    def matrix(self) -> sp.csr_matrix:
        n = self.grid.n_free
        return sp.csr_matrix((self.vals, (self.rows, self.cols)), shape=(n, n))


def _unit(dim: int, k: int, s: int = 1) -> tuple[int, ...]:
    return tuple(s if i == k else 0 for i in range(dim))


def assemble_operator(grid: Grid, coeffs: EllipticCoefficients, check_peclet: bool = True) -> OperatorMatrix:
    """Centered-difference assembly of ``A u = -a_ij D_ij u - a_i D_i u``.

    In divergence form the principal part is ``-D_i(a_ij D_j u)`` with
    diagonal fluxes sampled at half nodes.
    """
    if coeffs.dim != grid.dim:
        raise AssemblyError(f"coefficients are {coeffs.dim}D but grid is {grid.dim}D")
    _check_ellipticity(grid, coeffs)
    dim, h = grid.dim, grid.h
    pts = grid.free_points
    a = coeffs.diffusion(pts)
    b = coeffs.drift(pts)
    if check_peclet:
        min_eig = np.linalg.eigvalsh(a).min(axis=1)
        for k in range(dim):
            pe = np.abs(b[:, k]) * h[k] / (2 * min_eig)
            bad = np.flatnonzero(pe >= 1)
            if bad.size:
                node = grid.free[bad[0]]
                raise AssemblyError(
                    f"mesh Peclet number {pe[bad[0]]:.3g} >= 1 at node {node} x={grid.nodes[node].tolist()}; refine the mesh"
                )

    rb = _RowBuilder(grid)
    robin_ends = {
        (k, side)
        for k in range(dim)
        for side in (-1, 1)
        if grid.face_bc[FACES[2 * k + (side > 0)]].kind == "robin"
    }
    for row, node in enumerate(grid.free):
        c = grid.multi_index(node)
        x = grid.nodes[node]
        for k in range(dim):
            e_k = _unit(dim, k)
            if coeffs.divergence_form:
                half = []
                for s in (1, -1):
                    mid = x.copy()
                    on_robin_end = (k, s) in robin_ends and c[k] == (grid.lattice_shape[k] - 1 if s > 0 else 0)
                    # reflect the flux coefficient across a Robin end
                    mid[k] += (-s if on_robin_end else s) * h[k] / 2
                    half.append(coeffs.diffusion(mid[None, :])[0, k, k])
                ap, am = half
                rb.add(row, c, e_k, -ap / h[k] ** 2)
                rb.add(row, c, _unit(dim, k, -1), -am / h[k] ** 2)
                rb.add(row, c, (0,) * dim, (ap + am) / h[k] ** 2)
            else:
                akk = a[row, k, k]
                rb.add(row, c, e_k, -akk / h[k] ** 2)
                rb.add(row, c, _unit(dim, k, -1), -akk / h[k] ** 2)
                rb.add(row, c, (0,) * dim, 2 * akk / h[k] ** 2)
            rb.add(row, c, e_k, -b[row, k] / (2 * h[k]))
            rb.add(row, c, _unit(dim, k, -1), b[row, k] / (2 * h[k]))
        if dim == 2:
            denom = 4 * h[0] * h[1]
            if coeffs.divergence_form:
                # -D_1(a_12 D_2 u) - D_2(a_21 D_1 u), all differences centered
                for k, j in ((0, 1), (1, 0)):
                    for s in (1, -1):
                        q = x.copy()
                        q[k] += s * h[k]
                        akj = coeffs.diffusion(q[None, :])[0, k, j]
                        for r in (1, -1):
                            off = [0, 0]
                            off[k], off[j] = s, r
                            rb.add(row, c, tuple(off), -s * r * akj / denom)
            else:
                a12 = a[row, 0, 1] + a[row, 1, 0]
                for s, r in itertools.product((1, -1), repeat=2):
                    rb.add(row, c, (s, r), -s * r * a12 / denom)

    entries = rb.matrix()
    return OperatorMatrix(grid, entries, w_adjoint(entries, grid.quad_weights), coeffs)


def assemble_formal_adjoint(grid: Grid, coeffs: EllipticCoefficients) -> sp.csr_matrix:
    """Direct centered discretization of ``-D_ij(a_ij v) + D_i(a_i v)``.

    Non-divergence form with Dirichlet faces only; used to cross-check the
    W-transpose rule.
    """
    if grid.has_robin:
        raise AssemblyError("direct adjoint assembly supports Dirichlet faces only")
    if coeffs.divergence_form:
        raise AssemblyError("direct adjoint assembly supports non-divergence form only")
    dim, h = grid.dim, grid.h
    rb = _RowBuilder(grid)
    for row, node in enumerate(grid.free):
        c = grid.multi_index(node)
        x = grid.nodes[node]

        def coef_at(offset):
            q = x + np.array(offset, dtype=float) * np.array(h)
            return coeffs.diffusion(q[None, :])[0], coeffs.drift(q[None, :])[0]

        a0, _ = coef_at((0,) * dim)
        for k in range(dim):
            e_p, e_m = _unit(dim, k), _unit(dim, k, -1)
            a_p, b_p = coef_at(e_p)
            a_m, b_m = coef_at(e_m)
            rb.add(row, c, e_p, -a_p[k, k] / h[k] ** 2 + b_p[k] / (2 * h[k]))
            rb.add(row, c, e_m, -a_m[k, k] / h[k] ** 2 - b_m[k] / (2 * h[k]))
            rb.add(row, c, (0,) * dim, 2 * a0[k, k] / h[k] ** 2)
        if dim == 2:
            denom = 4 * h[0] * h[1]
            for s, r in itertools.product((1, -1), repeat=2):
                a_sr, _ = coef_at((s, r))
                rb.add(row, c, (s, r), -s * r * (a_sr[0, 1] + a_sr[1, 0]) / denom)
    return rb.matrix()


@dataclass(frozen=True, eq=False)
class PrincipalEigenpair:
    grid: Grid
    e: np.ndarray
    lambda1: float
    normal_slope: dict[int, float]
    residual: float
    iterations: int


def principal_dirichlet_eigenpair(
    grid: Grid, tol: float = 1e-12, max_iter: int = 10_000
) -> PrincipalEigenpair:
    """Smallest eigenpair of the discrete Laplacian by inverse power iteration.

    Boundary conditions are those of ``grid`` (Dirichlet, or mixed with Robin
    ends).  ``e`` is sign-fixed positive and sup-normalized.  Convergence is
    declared when ``||A e - lambda e|| / ||e|| <= tol * ||A||_inf``.
    """
    op = assemble_operator(grid, EllipticCoefficients.laplacian(grid.dim))
    A = op.entries
    w = grid.quad_weights
    scale = float(abs(A).sum(axis=1).max())
    lu = spla.splu(A.tocsc())
    v = np.ones(grid.n_free)
    residual = np.inf
    lam = 0.0
    for it in range(1, max_iter + 1):
        v = lu.solve(v)
        v /= np.abs(v).max()
        Av = A @ v
        lam = w_inner(Av, v, w) / w_inner(v, v, w)
        residual = float(np.linalg.norm(Av - lam * v) / np.linalg.norm(v))
        if residual <= tol * scale:
            break
    else:
        raise EigenError(f"inverse power iteration did not converge; final residual {residual:.3e}")
    if v.sum() < 0:
        v = -v
    e = v / v.max()
    if e.min() <= 0:
        raise EigenError(f"principal eigenvector is not strictly positive (min {e.min():.3e})")

    full = np.zeros(len(grid.nodes))
    full[grid.free] = e
    slopes = {f.node: float((full[f.node] - full[f.adjacent]) / grid.h[f.axis]) for f in grid.boundary_faces}
    return PrincipalEigenpair(grid, e, float(lam), slopes, residual, it)
