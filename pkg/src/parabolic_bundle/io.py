"""Deterministic CSV/JSON emission at 17 significant digits, and the matching readers."""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Any, Iterable, Sequence, Union

import numpy as np

PathLike = Union[str, Path]


def fmt(x: float) -> str:
    return "%.17g" % x


def _json(obj: Any, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if obj is None or isinstance(obj, bool):
        return {None: "null", True: "true", False: "false"}[obj]
    if isinstance(obj, (int, np.integer)) and not isinstance(obj, bool):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return fmt(x) if math.isfinite(x) else "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{_json(str(k), indent, 0)}: {_json(v, indent, level + 1)}" for k, v in sorted(obj.items(), key=lambda kv: str(kv[0]))]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(isinstance(v, (int, float, np.number)) and not isinstance(v, bool) for v in obj):
            return "[" + ", ".join(_json(v, indent, 0) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + _json(v, indent, level + 1) for v in obj) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj: Any, indent: int = 2) -> str:
    """JSON with sorted keys, 17-digit floats and ``null`` for non-finite values."""
    return _json(obj, indent, 0) + "\n"


def write_json(path: PathLike, obj: Any) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with open(p, "w", newline="\n") as fh:
        fh.write(dumps(obj))
    return p


def write_csv(path: PathLike, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with open(p, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) if isinstance(v, (float, np.floating)) else str(v) for v in row) + "\n")
    return p


def write_matrix(path: PathLike, M: np.ndarray) -> Path:
    """``rows=R,cols=C`` header followed by the rows."""
    M = np.atleast_2d(M)
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with open(p, "w", newline="\n") as fh:
        fh.write(f"rows={M.shape[0]},cols={M.shape[1]}\n")
        for row in M:
            fh.write(",".join(fmt(v) for v in row) + "\n")
    return p


def read_matrix(path: PathLike) -> np.ndarray:
    lines = Path(path).read_text().splitlines()
    meta = dict(part.split("=") for part in lines[0].split(","))
    M = np.array([[float(v) for v in line.split(",")] for line in lines[1:] if line], dtype=float)
    M = M.reshape(int(meta["rows"]), int(meta["cols"]))
    return M


def write_nodal(path: PathLike, points: np.ndarray, values: np.ndarray) -> Path:
    """One row per free node: coordinates then ``value``."""
    names = ["x", "y"][: points.shape[1]]
    return write_csv(path, names + ["value"], ([*map(float, p), float(v)] for p, v in zip(points, values)))


def read_nodal(path: PathLike, points: np.ndarray) -> np.ndarray:
    lines = Path(path).read_text().splitlines()
    header = lines[0].split(",")
    if header[-1] != "value":
        raise ValueError(f"{path}: last column must be 'value'")
    rows = np.array([[float(v) for v in line.split(",")] for line in lines[1:] if line], dtype=float)
    if rows.shape[0] != len(points) or not np.allclose(rows[:, :-1], points, atol=1e-9):
        raise ValueError(f"{path}: node coordinates do not match the grid")
    return rows[:, -1]


def read_table(path: PathLike) -> tuple[np.ndarray, float, float]:
    """Tabulated ``a0``: header ``dt=<v>[,t0=<v>]`` then one row per time over free nodes."""
    lines = Path(path).read_text().splitlines()
    meta = dict(part.strip().split("=") for part in lines[0].split(","))
    if "dt" not in meta:
        raise ValueError(f"{path}: header must define dt")
    table = np.array([[float(v) for v in line.split(",")] for line in lines[1:] if line.strip()], dtype=float)
    return table, float(meta["dt"]), float(meta.get("t0", 0.0))


def write_table(path: PathLike, table: np.ndarray, dt: float, t0: float = 0.0) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with open(p, "w", newline="\n") as fh:
        fh.write(f"dt={fmt(dt)},t0={fmt(t0)}\n")
        for row in np.atleast_2d(table):
            fh.write(",".join(fmt(v) for v in row) + "\n")
    return p
