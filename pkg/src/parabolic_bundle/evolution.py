"""Crank-Nicolson realization of the solution cocycle and its adjoint.

Forward: ``u' = -A u + b(t, x) u`` for ``t >= 0``.  Adjoint: ``v`` solved
backward from ``0`` to ``t <= 0`` with ``A'`` (the W-adjoint of ``A``) in place
of ``A``.  The zero-order coefficient is sampled at the midpoint of every step.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .coefficient_hull import HullPoint, evaluate, translate
from .discretization import OperatorMatrix, w_adjoint


class EvolutionError(RuntimeError):
    pass


class PositivityError(EvolutionError):
    pass


@dataclass(frozen=True)
class EvolutionConfig:
    dt: float = 1.0 / 64

    def __post_init__(self):
        steps = 1.0 / self.dt
        if abs(steps - round(steps)) > 1e-9 * steps or round(steps) < 4:
            raise EvolutionError(f"dt must be 1/M for an integer M >= 4, got {self.dt!r}")

    @property
    def steps_per_unit(self) -> int:
        return int(round(1.0 / self.dt))

    def n_steps(self, t: float) -> int:
        n = t / self.dt
        k = int(round(n))
        if abs(n - k) > 1e-9 * max(1.0, abs(n)):
            raise EvolutionError(f"duration {t!r} is not a multiple of dt={self.dt!r}")
        return k


class _Stepper:
    """Caches LU factors of ``I + dt/2 (L - diag(c))`` keyed by the coefficient values."""

    def __init__(self, L: sp.csr_matrix, dt: float, cache_size: int):
        self.L = L.tocsc()
        self.dt = dt
        self.I = sp.identity(L.shape[0], format="csc")
        self.cache: OrderedDict[bytes, tuple] = OrderedDict()
        self.cache_size = cache_size
        self.op_ref = None

    def factors(self, c: np.ndarray):
        key = c.tobytes()
        hit = self.cache.get(key)
        if hit is not None:
            self.cache.move_to_end(key)
            return hit
        shifted = self.L - sp.diags(c, format="csc")
        half = 0.5 * self.dt * shifted
        lu = spla.splu((self.I + half).tocsc())
        rhs = (self.I - half).tocsr()
        self.cache[key] = (lu, rhs)
        if len(self.cache) > self.cache_size:
            self.cache.popitem(last=False)
        return lu, rhs

    def step(self, u: np.ndarray, c: np.ndarray, index: int) -> np.ndarray:
        lu, rhs = self.factors(c)
        out = lu.solve(np.asarray(rhs @ u))
        if not np.all(np.isfinite(out)):
            raise EvolutionError(f"linear solve failed at step {index}")
        return out


_STEPPERS: "OrderedDict[tuple, _Stepper]" = OrderedDict()


def _stepper(operator: OperatorMatrix, cfg: EvolutionConfig, adjoint: bool) -> _Stepper:
    key = (id(operator), cfg.dt, adjoint)
    st = _STEPPERS.get(key)
    if st is None or st.op_ref is not operator:
        L = operator.adjoint_entries if adjoint else operator.entries
        st = _Stepper(L, cfg.dt, cache_size=160 if operator.n <= 400 else 8)
        st.op_ref = operator
        _STEPPERS[key] = st
        if len(_STEPPERS) > 16:
            _STEPPERS.popitem(last=False)
    return st


def step_forward(operator: OperatorMatrix, b: HullPoint, u0: np.ndarray, t: float, cfg: EvolutionConfig) -> np.ndarray:
    """``psi(t, b) u0``; ``u0`` may hold several states as columns."""
    if t < 0:
        raise EvolutionError("forward duration must be nonnegative")
    n = cfg.n_steps(t)
    u = np.array(u0, dtype=float, copy=True)
    if n == 0:
        return u
    st = _stepper(operator, cfg, adjoint=False)
    for k in range(n):
        c = evaluate(b, (k + 0.5) * cfg.dt)
        u = st.step(u, c, k)
    return u


def step_adjoint(operator: OperatorMatrix, b: HullPoint, v0: np.ndarray, t: float, cfg: EvolutionConfig) -> np.ndarray:
    """Adjoint solution ``v(t; b, v0)`` for ``t <= 0``, integrated backward from 0."""
    if t > 0:
        raise EvolutionError("adjoint duration must be nonpositive")
    n = cfg.n_steps(-t)
    v = np.array(v0, dtype=float, copy=True)
    if n == 0:
        return v
    st = _stepper(operator, cfg, adjoint=True)
    for k in range(n):
        c = evaluate(b, -(k + 0.5) * cfg.dt)
        v = st.step(v, c, k)
    return v


@dataclass(frozen=True, eq=False)
class PropagatorMatrix:
    M: np.ndarray
    t: float
    b: HullPoint
    weights: np.ndarray

    @property
    def t0(self) -> float:
        return self.b.shift

    def dual(self) -> np.ndarray:
        """``W^-1 M^T W``: the matrix of ``psi(t, b)*`` in the W-inner product."""
        return w_adjoint(self.M, self.weights)

    def apply(self, u: np.ndarray) -> np.ndarray:
        return self.M @ u


def propagator(operator: OperatorMatrix, b: HullPoint, t: float, cfg: EvolutionConfig) -> PropagatorMatrix:
    """Dense ``psi(t, b)``, built by stepping all canonical basis vectors at once."""
    if t <= 0:
        raise EvolutionError("propagator needs t > 0")
    M = step_forward(operator, b, np.eye(operator.n), t, cfg)
    return PropagatorMatrix(M, float(t), b, operator.weights)


def adjoint_propagator(operator: OperatorMatrix, b: HullPoint, t: float, cfg: EvolutionConfig) -> np.ndarray:
    """Independently time-stepped ``psi#(-t, b.t)``, the W-dual of ``psi(t, b)``."""
    return step_adjoint(operator, translate(b, t), np.eye(operator.n), -t, cfg)


def check_positive(P: PropagatorMatrix) -> float:
    """Raise :class:`PositivityError` unless every entry is strictly positive; return the min."""
    lo = float(P.M.min())
    if not lo > 0:
        raise PositivityError(
            f"time-{P.t:g} propagator has a nonpositive entry ({lo:.3e}); decrease dt or refine the mesh"
        )
    return lo


def time_one(operator: OperatorMatrix, b: HullPoint, u: np.ndarray, cfg: EvolutionConfig) -> np.ndarray:
    return step_forward(operator, b, u, 1.0, cfg)


def orbit(b: HullPoint, start: int, stop: int) -> list[HullPoint]:
    """Hull points ``b.k`` for integer ``k`` in ``[start, stop)``."""
    return [translate(b, float(k)) for k in range(start, stop)]


def relative_defect(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.finfo(float).tiny))


def is_dt_aligned(t: float, cfg: EvolutionConfig) -> bool:
    return math.isclose(t / cfg.dt, round(t / cfg.dt), abs_tol=1e-9)
