"""Run configuration: a JSON document validated with pydantic, plus ``--set`` overrides."""

from __future__ import annotations

import copy
import json
from importlib import resources
from pathlib import Path
from typing import Any, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from . import coefficient_hull as hull
from .discretization import EllipticCoefficients, Grid, OperatorMatrix, assemble_operator, build_grid
from .evolution import EvolutionConfig, EvolutionError
from .expressions import ExpressionError, compile_expression, evaluate_scalar

Scalar = Union[float, str]
BUNDLED = ("heat1d", "mixed1d", "periodic1d", "heat2d")


class ConfigError(ValueError):
    """Validation failure; ``errors`` holds ``(field path, message)`` pairs."""

    def __init__(self, errors: list[tuple[str, str]]):
        self.errors = errors
        super().__init__("; ".join(f"{p}: {m}" for p, m in errors))


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_default=True)


def _scalar(v: Scalar) -> float:
    return evaluate_scalar(v)


class GridConfig(_Strict):
    dim: Literal[1, 2] = 1
    extents: list[tuple[Scalar, Scalar]] = [(0.0, "pi")]
    n: Union[int, list[int]] = 63
    bc: dict[str, Any] = Field(default_factory=dict)

    @field_validator("extents")
    @classmethod
    def _extents(cls, v):
        out = []
        for lo, hi in v:
            lo, hi = _scalar(lo), _scalar(hi)
            if not hi > lo:
                raise ValueError("each extent needs hi > lo")
            out.append((lo, hi))
        return out

    @model_validator(mode="after")
    def _shape(self):
        if len(self.extents) != self.dim:
            raise ValueError(f"extents must list {self.dim} interval(s)")
        return self


class EllipticConfig(_Strict):
    diffusion: Optional[list[list[Scalar]]] = None
    drift: Optional[list[Scalar]] = None
    divergence_form: bool = False

    @field_validator("diffusion", "drift")
    @classmethod
    def _parse(cls, v):
        if v is None:
            return v
        for item in (x for row in v for x in (row if isinstance(row, list) else [row])):
            compile_expression(item, allowed=("x", "y"))
        return v


class TermConfig(_Strict):
    amplitude: Scalar
    profile: Scalar
    axis: int = 0


class A0Config(_Strict):
    kind: Literal["constant", "separable_periodic", "quasiperiodic", "tabulated", "random_periodic"] = "constant"
    value: Scalar = 0.0
    period: float = 1.0
    frequencies: Optional[list[Scalar]] = None
    terms: list[TermConfig] = Field(default_factory=list)
    path: Optional[str] = None
    R: float = 1.0
    n_terms: int = 2
    seed: int = 0

    @model_validator(mode="after")
    def _kind_fields(self):
        if self.kind == "quasiperiodic" and not self.frequencies:
            raise ValueError("quasiperiodic a0 needs frequencies")
        if self.kind == "tabulated" and not self.path:
            raise ValueError("tabulated a0 needs path")
        if self.kind in ("separable_periodic", "quasiperiodic") and not self.terms:
            raise ValueError(f"{self.kind} a0 needs at least one term")
        return self


class EvolutionSection(_Strict):
    dt: float = 1.0 / 64

    @field_validator("dt")
    @classmethod
    def _dt(cls, v):
        try:
            EvolutionConfig(v)
        except EvolutionError as exc:
            raise ValueError(str(exc)) from None
        return v


class BundleConfig(_Strict):
    k_burn: int = Field(40, ge=1)
    k_max: int = Field(320, ge=1)
    tol: float = Field(1e-11, gt=0)
    k_fit: int = Field(8, ge=2)
    panel_size: int = Field(8, ge=1)
    hull_samples: int = Field(8, ge=1)
    focus_panel: int = Field(100, ge=1)


class GlobalConfig(_Strict):
    T_back: int = Field(10, ge=0)
    T_fwd: int = Field(10, ge=0)
    tail_fractions: list[float] = Field(default_factory=lambda: [1e-8, 1e-3, 0.1])
    cocycle_pairs: int = Field(50, ge=0)


class SolveConfig(_Strict):
    t: float = Field(1.0, ge=0)
    initial: Scalar = "sin(x)"


class RunConfig(_Strict):
    name: str = "run"
    seed: int = 0
    grid: GridConfig = Field(default_factory=GridConfig)
    elliptic: EllipticConfig = Field(default_factory=EllipticConfig)
    a0: A0Config = Field(default_factory=A0Config)
    evolution: EvolutionSection = Field(default_factory=EvolutionSection)
    bundle: BundleConfig = Field(default_factory=BundleConfig)
    global_: GlobalConfig = Field(default_factory=GlobalConfig, alias="global")
    solve: SolveConfig = Field(default_factory=SolveConfig)
    output_dir: str = "out"
    base_dir: Optional[str] = Field(None, exclude=True)

    model_config = ConfigDict(extra="forbid", populate_by_name=True, validate_default=True)

    @property
    def cfg(self) -> EvolutionConfig:
        return EvolutionConfig(self.evolution.dt)

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() or self.base_dir is None else Path(self.base_dir) / p


def _path_of(loc) -> str:
    return ".".join(str(p) for p in loc if not str(p).startswith("function-")) or "<root>"


def validate(raw: dict, base_dir: Optional[Path] = None) -> RunConfig:
    try:
        cfg = RunConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError([(_path_of(err["loc"]), err["msg"]) for err in exc.errors()]) from None
    except ExpressionError as exc:
        raise ConfigError([("<expression>", str(exc))]) from None
    if base_dir is not None:
        cfg.base_dir = str(base_dir)
    return cfg


def _coerce_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(raw: dict, overrides: list[str]) -> dict:
    """``key.sub=value`` assignments; values are parsed as JSON when possible."""
    out = copy.deepcopy(raw)
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigError([(item, "override must look like key=value")])
        node = out
        parts = key.split(".")
        for p in parts[:-1]:
            nxt = node.setdefault(p, {})
            if not isinstance(nxt, dict):
                raise ConfigError([(key, f"{p!r} is not a section")])
            node = nxt
        node[parts[-1]] = _coerce_value(value)
    return out


def bundled_path(name: str) -> Path:
    return Path(str(resources.files("parabolic_bundle") / "configs" / f"{name}.json"))


def load_raw(path: Union[str, Path]) -> tuple[dict, Path]:
    p = Path(path)
    if not p.exists() and str(path) in BUNDLED:
        p = bundled_path(str(path))
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError([("config", f"cannot read {path}: {exc.strerror}")]) from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([("config", f"invalid JSON at line {exc.lineno}: {exc.msg}")]) from None
    if not isinstance(raw, dict):
        raise ConfigError([("<root>", "config must be a JSON object")])
    return raw, p.parent


def load_config(path: Union[str, Path], overrides: Optional[list[str]] = None, seed: Optional[int] = None) -> RunConfig:
    raw, base = load_raw(path)
    raw = apply_overrides(raw, overrides or [])
    if seed is not None:
        raw["seed"] = seed
    return validate(raw, base)


def make_grid(cfg: RunConfig) -> Grid:
    g = cfg.grid
    return build_grid(g.dim, g.extents, g.n, g.bc)


def make_operator(cfg: RunConfig, grid: Grid) -> OperatorMatrix:
    e = cfg.elliptic
    if e.diffusion is None and e.drift is None:
        coeffs = EllipticCoefficients.laplacian(grid.dim)
    else:
        diffusion = e.diffusion if e.diffusion is not None else np.eye(grid.dim).tolist()
        coeffs = EllipticCoefficients.from_expressions(diffusion, e.drift, e.divergence_form)
    return assemble_operator(grid, coeffs)


def make_a0(cfg: RunConfig, grid: Grid) -> hull.CoefficientSpec:
    a = cfg.a0
    if a.kind == "constant":
        return hull.constant(grid, a.value)
    if a.kind == "separable_periodic":
        return hull.separable_periodic(grid, [(t.amplitude, t.profile) for t in a.terms], a.period)
    if a.kind == "quasiperiodic":
        freqs = [_scalar(w) for w in a.frequencies]
        return hull.quasiperiodic(grid, freqs, [(t.amplitude, t.profile, t.axis) for t in a.terms])
    if a.kind == "random_periodic":
        return hull.random_periodic(grid, np.random.default_rng(a.seed), a.R, a.n_terms, a.period)
    from .io import read_table

    table, dt, t0 = read_table(cfg.resolve(a.path))
    return hull.tabulated(grid, table, dt, t0)
