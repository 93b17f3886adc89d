"""The zero-order coefficient ``a0(t, x)``, its time translates and hull samples.

A :class:`CoefficientSpec` is bound to a grid: spatial amplitudes are stored as
free-node vectors.  A :class:`HullPoint` is a translate ``a0 . tau`` (a shift
modulo the period, or a phase on the torus for quasiperiodic coefficients).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Union

import numpy as np

from .discretization import Grid
from .expressions import Expression, compile_expression

KINDS = ("constant", "separable_periodic", "quasiperiodic", "tabulated")
TWO_PI = 2 * math.pi
_SUP_SAMPLES = 4096


class HullError(ValueError):
    pass


@dataclass(frozen=True)
class Term:
    """One separable term ``amplitude(x) * profile(.)``.

    For quasiperiodic coefficients the profile is a 2*pi-periodic function of
    the angle on torus axis ``axis``; the angle is bound to the variable ``t``.
    """

    amplitude: np.ndarray
    profile: Expression
    axis: int = 0


@dataclass(frozen=True, eq=False)
class CoefficientSpec:
    kind: str
    grid: Grid
    terms: tuple[Term, ...] = ()
    value: Optional[np.ndarray] = None
    period: Optional[float] = None
    frequencies: Optional[tuple[float, ...]] = None
    table: Optional[np.ndarray] = None
    table_dt: Optional[float] = None
    table_t0: float = 0.0
    R: float = field(default=0.0)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise HullError(f"unknown coefficient kind {self.kind!r}")
        object.__setattr__(self, "R", self._empirical_sup())

    @property
    def is_autonomous(self) -> bool:
        return self.kind == "constant"

    @property
    def table_end(self) -> float:
        return self.table_t0 + (len(self.table) - 1) * self.table_dt

    def _empirical_sup(self) -> float:
        if self.kind == "constant":
            return float(np.abs(self.value).max())
        if self.kind == "tabulated":
            return float(np.abs(self.table).max())
        if self.kind == "separable_periodic":
            s = np.linspace(0.0, self.period, _SUP_SAMPLES, endpoint=False)
            vals = sum(np.outer(t.amplitude, t.profile(t=s)) for t in self.terms)
            return float(np.abs(vals).max())
        theta = np.linspace(0.0, TWO_PI, _SUP_SAMPLES, endpoint=False)
        hi = np.zeros(self.grid.n_free)
        lo = np.zeros(self.grid.n_free)
        for axis in range(len(self.frequencies)):
            part = sum(
                (np.outer(t.amplitude, t.profile(t=theta)) for t in self.terms if t.axis == axis),
                np.zeros((self.grid.n_free, len(theta))),
            )
            hi += part.max(axis=1)
            lo += part.min(axis=1)
        return float(max(np.abs(hi).max(), np.abs(lo).max()))

    def scaled(self, factor: float) -> "CoefficientSpec":
        """Same coefficient multiplied by ``factor``."""
        terms = tuple(replace(t, amplitude=t.amplitude * factor) for t in self.terms)
        return replace(
            self,
            terms=terms,
            value=None if self.value is None else self.value * factor,
            table=None if self.table is None else self.table * factor,
        )

    def origin(self) -> "HullPoint":
        """The coefficient ``a0`` itself as a hull point."""
        if self.kind == "quasiperiodic":
            return HullPoint(self, 0.0, (0.0,) * len(self.frequencies))
        if self.kind == "tabulated":
            return HullPoint(self, self.table_t0)
        return HullPoint(self, 0.0)

    def _at(self, shift: float, phase, s: float) -> np.ndarray:
        if self.kind == "constant":
            return self.value.copy()
        if self.kind == "separable_periodic":
            tau = shift + s
            out = np.zeros(self.grid.n_free)
            for t in self.terms:
                out += t.amplitude * float(t.profile(t=tau))
            return out
        if self.kind == "quasiperiodic":
            out = np.zeros(self.grid.n_free)
            for t in self.terms:
                angle = phase[t.axis] + self.frequencies[t.axis] * s
                out += t.amplitude * float(t.profile(t=angle))
            return out
        tau = shift + s
        slack = 1e-9 * self.table_dt
        if not self.table_t0 - slack <= tau <= self.table_end + slack:
            raise HullError(
                f"time {tau:.6g} outside tabulated range [{self.table_t0:.6g}, {self.table_end:.6g}]"
            )
        pos = min(max((tau - self.table_t0) / self.table_dt, 0.0), len(self.table) - 1.0)
        i = min(int(math.floor(pos)), len(self.table) - 2)
        frac = pos - i
        return (1 - frac) * self.table[i] + frac * self.table[i + 1]


@dataclass(frozen=True)
class HullPoint:
    spec: CoefficientSpec = field(repr=False, compare=False)
    shift: float = 0.0
    phase: Optional[tuple[float, ...]] = None

    def __mul__(self, t: float) -> "HullPoint":
        # b * t reads as the translate b.t
        return translate(self, t)

    def key(self) -> tuple:
        """Hashable identity of the translate, rounded to absorb wrap-around noise."""
        if self.spec.kind == "constant":
            return ("constant",)
        if self.phase is not None:
            return tuple(round(_wrap(p, TWO_PI), 10) for p in self.phase)
        if self.spec.kind == "separable_periodic":
            return (round(_wrap(self.shift, self.spec.period), 10),)
        return (round(self.shift, 10),)


def _wrap(x: float, period: float) -> float:
    r = math.fmod(x, period) % period
    return 0.0 if period - r < 1e-12 * period else r


def translate(b: HullPoint, t: float) -> HullPoint:
    """The translate ``(b.t)(s, x) = b(t + s, x)``."""
    spec = b.spec
    if spec.kind == "constant":
        return b
    if spec.kind == "separable_periodic":
        return HullPoint(spec, _wrap(b.shift + t, spec.period))
    if spec.kind == "quasiperiodic":
        phase = tuple(_wrap(p + w * t, TWO_PI) for p, w in zip(b.phase, spec.frequencies))
        return HullPoint(spec, b.shift + t, phase)
    return HullPoint(spec, b.shift + t)


def evaluate(b: HullPoint, s: float, grid: Optional[Grid] = None) -> np.ndarray:
    """Values ``b(s, x)`` at the free nodes."""
    if grid is not None and grid is not b.spec.grid:
        raise HullError("hull point is bound to a different grid")
    return b.spec._at(b.shift, b.phase, s)


def sample_hull(spec: CoefficientSpec, count: int, horizon: float = 0.0) -> list[HullPoint]:
    """Finite sample of the hull.

    Periodic: ``count`` equally spaced shifts in ``[0, T)``.  Quasiperiodic: a
    tensor grid of phases on the torus (``ceil(count**(1/d))`` per axis, first
    ``count`` points).  Tabulated: equally spaced shifts that leave ``horizon``
    time units of table after them.
    """
    if count < 1:
        raise HullError("count must be >= 1")
    if spec.kind == "constant":
        return [spec.origin()]
    if spec.kind == "separable_periodic":
        return [HullPoint(spec, spec.period * k / count) for k in range(count)]
    if spec.kind == "quasiperiodic":
        d = len(spec.frequencies)
        m = math.ceil(round(count ** (1.0 / d), 9))
        pts = []
        for flat in range(m**d):
            idx = np.unravel_index(flat, (m,) * d)
            pts.append(HullPoint(spec, 0.0, tuple(TWO_PI * i / m for i in idx)))
        return pts[:count]
    last = spec.table_end - horizon
    if last < spec.table_t0:
        raise HullError("tabulated window shorter than the requested horizon")
    shifts = np.linspace(spec.table_t0, last, count) if count > 1 else np.array([spec.table_t0])
    return [HullPoint(spec, float(s)) for s in shifts]


def node_values(grid: Grid, source) -> np.ndarray:
    if isinstance(source, np.ndarray):
        arr = np.asarray(source, dtype=float)
        if arr.shape != (grid.n_free,):
            raise HullError(f"amplitude array must have {grid.n_free} entries")
        return arr
    names = ("x", "y")[: grid.dim]
    expr = compile_expression(source, allowed=names)
    pts = grid.free_points
    return expr(**{n: pts[:, k] for k, n in enumerate(names)})


def constant(grid: Grid, value: Union[float, str, np.ndarray]) -> CoefficientSpec:
    """Time-independent ``a0(x)``."""
    return CoefficientSpec("constant", grid, value=node_values(grid, value))


def separable_periodic(grid: Grid, terms: Sequence, period: float) -> CoefficientSpec:
    """``a0(t, x) = sum_k amplitude_k(x) profile_k(t)``, each profile ``period``-periodic."""
    if not period > 0:
        raise HullError("period must be positive")
    built = tuple(
        Term(node_values(grid, amp), compile_expression(prof, allowed=("t",))) for amp, prof in terms
    )
    return CoefficientSpec("separable_periodic", grid, terms=built, period=float(period))


def quasiperiodic(grid: Grid, frequencies: Sequence[float], terms: Sequence) -> CoefficientSpec:
    """``a0(t, x) = sum_k amplitude_k(x) profile_k(theta_axis + omega_axis t)``."""
    freqs = tuple(float(w) for w in frequencies)
    built = []
    for amp, prof, axis in terms:
        if not 0 <= axis < len(freqs):
            raise HullError(f"term axis {axis} out of range for {len(freqs)} frequencies")
        built.append(Term(node_values(grid, amp), compile_expression(prof, allowed=("t",)), int(axis)))
    return CoefficientSpec("quasiperiodic", grid, terms=tuple(built), frequencies=freqs)


def tabulated(grid: Grid, table: np.ndarray, dt: float, t0: float = 0.0) -> CoefficientSpec:
    """Piecewise-linear in time over a ``(n_times, n_free)`` table."""
    table = np.asarray(table, dtype=float)
    if table.ndim != 2 or table.shape[1] != grid.n_free or table.shape[0] < 2:
        raise HullError(f"table must have shape (n_times >= 2, {grid.n_free})")
    if not dt > 0:
        raise HullError("table time step must be positive")
    return CoefficientSpec("tabulated", grid, table=table, table_dt=float(dt), table_t0=float(t0))


def random_periodic(
    grid: Grid, rng: np.random.Generator, R: float = 1.0, n_terms: int = 2, period: float = 1.0
) -> CoefficientSpec:
    """Random smooth separable periodic coefficient rescaled to sup-norm ``R``."""
    pts = grid.free_points
    terms = []
    for _ in range(n_terms):
        amp = np.full(grid.n_free, rng.uniform(-1, 1))
        for k in range(grid.dim):
            lo, hi = grid.extents[k]
            j = int(rng.integers(1, 4))
            amp = amp + rng.uniform(-1, 1) * np.cos(j * math.pi * (pts[:, k] - lo) / (hi - lo))
        m = int(rng.integers(1, 3))
        ca, cb = (float(v) for v in rng.uniform(-1, 1, size=2))
        prof = f"{ca!r}*sin(2*pi*{m}*t/{period!r}) + {cb!r}*cos(2*pi*{m}*t/{period!r})"
        terms.append((amp, prof))
    spec = separable_periodic(grid, terms, period)
    return spec.scaled(R / spec.R)
