"""Field files, atomic writes and run manifests."""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .discretization import DiscreteField, IntervalGrid, RadialGrid, RectGrid

__all__ = [
    "FieldFileError",
    "atomic_write_text",
    "format_field",
    "write_field",
    "parse_field_text",
    "read_field",
    "RunManifest",
    "fmt",
]

HEADER = "# selpde-field v1"


class FieldFileError(ValueError):
    pass


def fmt(x):
    """17 significant digits: enough to round-trip any double."""
    return f"{float(x):.17g}"


def atomic_write_text(path, text):
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="ascii", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def format_field(f: DiscreteField) -> str:
    g = f.grid
    lines = [HEADER, f"dim={f.dim}"]
    if isinstance(g, RadialGrid):
        lines += ["grid=radial", f"R={fmt(g.R)}", f"nodes={g.size}"]
        coords = np.asarray(g.nodes)[:, None]
    elif isinstance(g, IntervalGrid):
        lines += ["grid=interval", f"bounds={fmt(g.lo)}..{fmt(g.hi)}", f"nodes={g.size}"]
        coords = np.asarray(g.nodes)[:, None]
    elif isinstance(g, RectGrid):
        (x0, x1), (y0, y1) = g.bounds
        lines += ["grid=rect2d", f"bounds={fmt(x0)}..{fmt(x1)} {fmt(y0)}..{fmt(y1)}", f"nodes={g.shape[0]}x{g.shape[1]}"]
        if g.mask_radius is not None:
            lines.append(f"mask={fmt(g.mask_radius)}")
        coords = g.coords
    else:
        raise FieldFileError(f"unsupported grid {g!r}")
    for c, v in zip(coords, f.values):
        lines.append(" ".join(fmt(x) for x in c) + " " + fmt(v))
    return "\n".join(lines) + "\n"


def write_field(path, f: DiscreteField):
    atomic_write_text(path, format_field(f))


def _interval(text):
    lo, hi = text.split("..")
    return float(lo), float(hi)


def _grid(kind, meta, data, source):
    if kind == "radial":
        return RadialGrid(float(meta["R"]), data.shape[0], nodes=data[:, 0])
    if kind == "interval":
        lo, hi = _interval(meta["bounds"])
        return IntervalGrid(lo, hi, data.shape[0], nodes=data[:, 0])
    if kind == "rect2d":
        bx, by = (_interval(p) for p in meta["bounds"].split())
        nx, ny = (int(s) for s in meta["nodes"].split("x"))
        mask = float(meta["mask"]) if "mask" in meta else None
        grid = RectGrid((bx, by), (nx, ny), mask_radius=mask)
        if grid.size != data.shape[0] or not np.array_equal(grid.coords, data[:, :2]):
            raise FieldFileError(f"{source}: node coordinates do not match the declared grid")
        return grid
    raise FieldFileError(f"{source}: unknown grid kind {kind!r}")


def parse_field_text(text: str, source="<field>") -> DiscreteField:
    lines = text.splitlines()
    if not lines or lines[0].strip() != HEADER:
        raise FieldFileError(f"{source}: missing '{HEADER}' header")
    meta = {}
    k = 1
    while k < len(lines) and "=" in lines[k]:
        key, _, val = lines[k].partition("=")
        meta[key.strip()] = val.strip()
        k += 1
    try:
        dim = int(meta["dim"])
        kind = meta["grid"]
        rows = [ln.split() for ln in lines[k:] if ln.strip()]
        data = np.array(rows, dtype=float)
    except (KeyError, ValueError) as exc:
        raise FieldFileError(f"{source}: malformed field file ({exc})") from None
    if data.ndim != 2 or data.size == 0:
        raise FieldFileError(f"{source}: no node data")
    declared = meta.get("nodes")
    try:
        if kind != "rect2d" and declared and int(declared) != data.shape[0]:
            raise FieldFileError(f"{source}: nodes={declared} but {data.shape[0]} rows")
        grid = _grid(kind, meta, data, source)
    except (KeyError, ValueError) as exc:
        if isinstance(exc, FieldFileError):
            raise
        raise FieldFileError(f"{source}: bad grid description ({exc})") from None
    return DiscreteField(grid, data[:, -1], dim)


def read_field(path) -> DiscreteField:
    path = Path(path)
    return parse_field_text(path.read_text(encoding="ascii"), source=str(path))


@dataclass
class RunManifest:
    """One per run. ``duration`` is the only line allowed to differ between reruns."""

    command: str
    problem_path: str | None = None
    problem_hash: str | None = None
    options: dict = field(default_factory=dict)
    verdicts: dict = field(default_factory=dict)
    version: str = "0"
    duration: float = 0.0

    def to_text(self):
        lines = [f"command={self.command}", f"version={self.version}"]
        if self.problem_path is not None:
            lines.append(f"problem={self.problem_path}")
            lines.append(f"problem_sha256={self.problem_hash}")
        lines += [f"option.{k}={v}" for k, v in sorted(self.options.items())]
        lines += [f"verdict.{k}={v}" for k, v in sorted(self.verdicts.items())]
        lines.append(f"duration_seconds={self.duration:.3f}")
        return "\n".join(lines) + "\n"

    def write(self, directory):
        atomic_write_text(Path(directory) / "manifest.txt", self.to_text())
