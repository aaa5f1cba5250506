"""Scenario description and its YAML / manifest loader.

A scenario file is a YAML mapping with the sections ``grid``, ``initial``,
``desired``, ``interaction``, ``time`` and ``output`` plus the scalar keys
``name`` and ``seed``.  Every section is optional except ``grid`` and
``initial``; missing keys take the defaults of the dataclasses below.
Unknown keys are rejected with the line they appear on.  See
``docs/scenario-format.md`` for the full grammar.

The same tree, serialised as JSON, heads every run manifest, so a manifest
can be fed back to :func:`parse_scenario`.
"""

from __future__ import annotations

import dataclasses
import json
from importlib import resources
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .errors import GridError, ParseError, ValidationError
from .grid import DensityField, Grid, make_grid
from .velocity import DesiredVelocitySpec, InteractionSpec, VelocityModel

INITIAL_KINDS = ("uniform", "gaussian", "cosine", "table")
QUADRATURE_K = 8


@dataclass(frozen=True)
class InitialDensitySpec:
    kind: str = "uniform"
    density: float = 1.0
    center: tuple[float, float] = (0.5, 0.5)
    spread: float = 0.1
    radius: float = 0.2
    mass: float = 1.0
    values: tuple[tuple[float, ...], ...] | None = None

    def __post_init__(self):
        if self.kind not in INITIAL_KINDS:
            raise ValidationError(f"initial kind must be one of {INITIAL_KINDS}, got {self.kind!r}")
        if self.kind == "uniform" and not self.density >= 0:
            raise ValidationError(f"positivity: uniform density must be >= 0, got {self.density}")
        if self.kind == "gaussian" and not self.spread > 0:
            raise ValidationError(f"gaussian spread must be > 0, got {self.spread}")
        if self.kind == "cosine" and not self.radius > 0:
            raise ValidationError(f"cosine bump radius must be > 0, got {self.radius}")
        if self.kind in ("gaussian", "cosine") and not self.mass >= 0:
            raise ValidationError(f"positivity: bump mass must be >= 0, got {self.mass}")
        if self.kind == "table":
            if self.values is None:
                raise ValidationError("table density needs 'values' or 'file'")
            arr = np.asarray(self.values, dtype=float)
            if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
                raise ValidationError(f"density table must be square, got shape {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValidationError("density table holds non-finite values")
            if np.any(arr < 0):
                i, j = np.unravel_index(np.argmin(arr), arr.shape)
                raise ValidationError(
                    f"positivity: density table entry ({i + 1}, {j + 1}) is negative ({arr[i, j]})"
                )

    def shape_function(self, points: np.ndarray) -> np.ndarray:
        """Unnormalised bump profile at ``points`` (gaussian and cosine kinds)."""
        c = np.asarray(self.center, dtype=float)
        r2 = ((points - c) ** 2).sum(axis=-1)
        if self.kind == "gaussian":
            return np.exp(-r2 / (2 * self.spread ** 2))
        if self.kind == "cosine":
            r = np.sqrt(r2)
            return np.where(r < self.radius, np.cos(np.pi * r / (2 * self.radius)) ** 2, 0.0)
        raise ValueError(f"no analytic profile for kind {self.kind!r}")

    def subcells(self, grid: Grid, k: int = QUADRATURE_K) -> tuple[np.ndarray, np.ndarray, float]:
        """Subcell centres and masses realising the initial density.

        Returns arrays of shape ``(M, M, k, k, 2)`` and ``(M, M, k, k)`` and
        the factor turning :meth:`shape_function` values into densities
        (1 for uniform and table kinds).  The masses of a cell sum to its
        initial cell measure; obstacle cells carry nothing.
        """
        M, h = grid.M, grid.h
        s = (np.arange(k) + 0.5) / k
        base = np.arange(M)
        px = (base[:, None, None, None] + s[None, None, :, None]) * h
        py = (base[None, :, None, None] + s[None, None, None, :]) * h
        px, py = np.broadcast_arrays(px, py)
        pts = np.stack([px, py], axis=-1)
        walk = grid.walkable[:, :, None, None]
        cell = h * h / (k * k)
        scale = 1.0
        if self.kind == "uniform":
            w = np.full((M, M, k, k), self.density * cell)
        elif self.kind == "table":
            vals = np.asarray(self.values, dtype=float)
            w = np.broadcast_to(vals[:, :, None, None] * cell, (M, M, k, k)).copy()
        else:
            f = np.where(walk, self.shape_function(pts), 0.0)
            total = f.sum() * cell
            if total == 0:
                raise ValidationError(f"{self.kind} bump has no mass on walkable cells")
            scale = self.mass / total
            w = f * (scale * cell)
        return pts, np.where(walk, w, 0.0), scale

    def field(self, grid: Grid, k: int = QUADRATURE_K) -> DensityField:
        if self.kind == "table":
            vals = np.asarray(self.values, dtype=float)
            if vals.shape != grid.shape:
                raise ValidationError(f"density table shape {vals.shape} does not match grid {grid.shape}")
            return DensityField(grid, vals)
        if self.kind == "uniform":
            return DensityField(grid, np.full(grid.shape, float(self.density)))
        _, w, _ = self.subcells(grid, k)
        return DensityField(grid, w.sum(axis=(2, 3)) / grid.h ** 2)


@dataclass(frozen=True)
class Scenario:
    name: str = "scenario"
    M: int = 32
    obstacles: tuple[tuple[float, float, float, float], ...] = ()
    initial: InitialDensitySpec = field(default_factory=InitialDensitySpec)
    desired: DesiredVelocitySpec = field(default_factory=DesiredVelocitySpec)
    interaction: InteractionSpec = field(default_factory=InteractionSpec)
    dt: float = 0.01
    adaptive: bool = False
    steps: int = 100
    stride: int = 1
    seed: int = 0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValidationError(f"dt must be > 0, got {self.dt}")
        if self.steps < 0:
            raise ValidationError(f"steps must be >= 0, got {self.steps}")
        if self.stride < 1:
            raise ValidationError(f"stride must be >= 1, got {self.stride}")
        grid = self.make_grid()
        self.desired.check_against(grid)
        if self.initial.kind == "table" and np.asarray(self.initial.values).shape != grid.shape:
            raise ValidationError(
                f"density table shape {np.asarray(self.initial.values).shape} does not match M={self.M}"
            )

    def make_grid(self) -> Grid:
        try:
            return make_grid(self.M, self.obstacles)
        except GridError as exc:
            raise ValidationError(str(exc)) from exc

    def initial_field(self, grid: Grid | None = None) -> DensityField:
        return self.initial.field(grid or self.make_grid())

    def velocity_model(self, grid: Grid | None = None) -> VelocityModel:
        return VelocityModel(grid or self.make_grid(), self.desired, self.interaction)

    @property
    def is_linear(self) -> bool:
        """True when the velocity does not depend on the density."""
        return self.interaction.kind == "none" or self.interaction.beta == 0

    def replace(self, **changes) -> Scenario:
        return dataclasses.replace(self, **changes)

    def to_tree(self) -> dict[str, Any]:
        """Plain nested dict accepted back by :func:`scenario_from_tree`."""
        ini = self.initial
        initial: dict[str, Any] = {"kind": ini.kind}
        if ini.kind == "uniform":
            initial["density"] = ini.density
        elif ini.kind == "gaussian":
            initial.update(center=list(ini.center), spread=ini.spread, mass=ini.mass)
        elif ini.kind == "cosine":
            initial.update(center=list(ini.center), radius=ini.radius, mass=ini.mass)
        else:
            initial["values"] = [list(r) for r in ini.values]
        d = self.desired
        desired: dict[str, Any] = {"mode": d.mode, "alpha": d.alpha, "target": list(d.target)}
        if d.waypoints:
            desired["waypoints"] = [list(w) for w in d.waypoints]
        if d.target_edge is not None:
            desired["target_edge"] = [list(p) for p in d.target_edge]
        desired["normalize_gradient"] = d.normalize_gradient
        desired["velocity"] = list(d.velocity)
        it = self.interaction
        return {
            "name": self.name,
            "seed": self.seed,
            "grid": {"M": self.M, "obstacles": [list(o) for o in self.obstacles]},
            "initial": initial,
            "desired": desired,
            "interaction": {
                "kind": it.kind, "beta": it.beta, "R": it.R, "norm": it.norm, "omega_scale": it.omega_scale,
            },
            "time": {"dt": self.dt, "adaptive": self.adaptive, "steps": self.steps},
            "output": {"stride": self.stride},
        }


# -- parsing ---------------------------------------------------------------

_SCHEMA: dict[str, Any] = {
    "name": str,
    "seed": int,
    "grid": {"M": int, "obstacles": "rects"},
    "initial": {
        "kind": str, "density": float, "center": "point", "spread": float, "radius": float, "mass": float,
        "values": "table", "file": str,
    },
    "desired": {
        "mode": str, "target": "point", "alpha": float, "waypoints": "points",
        "target_edge": "points", "normalize_gradient": bool, "velocity": "point",
    },
    "interaction": {"kind": str, "beta": float, "R": float, "norm": str, "omega_scale": float},
    "time": {"dt": float, "adaptive": bool, "steps": int},
    "output": {"stride": int},
}


def _to_python(node: yaml.Node, path: str, lines: dict[str, int]) -> Any:
    lines[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        out = {}
        for knode, vnode in node.value:
            key = str(knode.value)
            sub = f"{path}.{key}" if path else key
            if key in out:
                raise ParseError("duplicate key", sub, knode.start_mark.line + 1)
            lines[sub] = knode.start_mark.line + 1
            out[key] = _to_python(vnode, sub, lines)
        return out
    if isinstance(node, yaml.SequenceNode):
        return [_to_python(v, f"{path}[{n}]", lines) for n, v in enumerate(node.value)]
    return _scalar(node)


def _scalar(node: yaml.ScalarNode) -> Any:
    loader = yaml.SafeLoader("")
    try:
        return loader.construct_object(node, deep=True)
    finally:
        loader.dispose()


def _coerce(value: Any, kind: Any, key: str, lines: dict[str, int]) -> Any:
    line = lines.get(key)

    def bad(what: str):
        return ParseError(f"expected {what}, got {value!r}", key, line)

    def num(v):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise bad("a number")
        return float(v)

    if kind is float:
        return num(value)
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise bad("an integer")
        return value
    if kind is bool:
        if not isinstance(value, bool):
            raise bad("true or false")
        return value
    if kind is str:
        if not isinstance(value, str):
            raise bad("a string")
        return value
    if kind == "point":
        if not isinstance(value, list) or len(value) != 2:
            raise bad("a point [x, y]")
        return tuple(num(v) for v in value)
    if kind == "points":
        if not isinstance(value, list):
            raise bad("a list of points")
        return tuple(_coerce(v, "point", f"{key}[{n}]", lines) for n, v in enumerate(value))
    if kind == "rects":
        if not isinstance(value, list):
            raise bad("a list of [xmin, ymin, xmax, ymax]")
        out = []
        for n, r in enumerate(value):
            if not isinstance(r, list) or len(r) != 4:
                raise ParseError(f"expected [xmin, ymin, xmax, ymax], got {r!r}", f"{key}[{n}]", line)
            out.append(tuple(num(v) for v in r))
        return tuple(out)
    if kind == "table":
        if not isinstance(value, list) or not all(isinstance(r, list) for r in value):
            raise bad("a list of rows")
        return tuple(tuple(num(v) for v in r) for r in value)
    raise AssertionError(kind)


def _check_keys(tree: dict, schema: dict, prefix: str, lines: dict[str, int]) -> dict:
    out = {}
    for key, value in tree.items():
        path = f"{prefix}.{key}" if prefix else key
        if key not in schema:
            raise ParseError("unknown key", path, lines.get(path))
        kind = schema[key]
        if isinstance(kind, dict):
            if not isinstance(value, dict):
                raise ParseError("expected a mapping", path, lines.get(path))
            out[key] = _check_keys(value, kind, path, lines)
        else:
            out[key] = _coerce(value, kind, path, lines)
    return out


def _read_table(path: Path) -> tuple[tuple[float, ...], ...]:
    arr = np.loadtxt(path, delimiter=",", ndmin=2)
    return tuple(tuple(float(v) for v in row) for row in arr)


def scenario_from_tree(tree: Any, lines: dict[str, int] | None = None, base: Path | None = None) -> Scenario:
    """Validate a parsed key-value tree and build a :class:`Scenario`."""
    lines = lines or {}
    if not isinstance(tree, dict):
        raise ParseError("scenario must be a mapping at top level", line=1)
    t = _check_keys(tree, _SCHEMA, "", lines)
    for required in ("grid", "initial"):
        if required not in t:
            raise ParseError("missing required section", required)
    if "M" not in t["grid"]:
        raise ParseError("missing required key", "grid.M", lines.get("grid"))

    ini = dict(t["initial"])
    if "file" in ini:
        if "values" in ini:
            raise ParseError("give either 'values' or 'file', not both", "initial.file", lines.get("initial.file"))
        fpath = Path(ini.pop("file"))
        if base is not None and not fpath.is_absolute():
            fpath = base / fpath
        try:
            ini["values"] = _read_table(fpath)
        except OSError as exc:
            raise ParseError(f"cannot read density table: {exc}", "initial.file", lines.get("initial.file")) from exc
    desired = dict(t.get("desired", {}))
    if "target_edge" in desired:
        if len(desired["target_edge"]) != 2:
            raise ParseError("target_edge needs exactly two points", "desired.target_edge",
                             lines.get("desired.target_edge"))
        desired["target_edge"] = tuple(desired["target_edge"])
    time = t.get("time", {})
    return Scenario(
        name=t.get("name", "scenario"),
        seed=t.get("seed", 0),
        M=t["grid"]["M"],
        obstacles=t["grid"].get("obstacles", ()),
        initial=InitialDensitySpec(**ini),
        desired=DesiredVelocitySpec(**desired),
        interaction=InteractionSpec(**t.get("interaction", {})),
        dt=time.get("dt", Scenario.dt),
        adaptive=time.get("adaptive", False),
        steps=time.get("steps", Scenario.steps),
        stride=t.get("output", {}).get("stride", 1),
    )


def parse_scenario(path) -> Scenario:
    """Load a scenario from a YAML file or from a run manifest (``.json``/``.jsonl``).

    Raises
    ------
    ParseError
        Syntax errors, unknown or mistyped keys; the message carries the key
        and line.
    ValidationError
        Values that break a model invariant (e.g. ``R >= 1``).
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read scenario file: {exc}") from exc
    if path.suffix in (".json", ".jsonl"):
        first = next((ln for ln in text.splitlines() if ln.strip()), "")
        try:
            head = json.loads(first)
        except json.JSONDecodeError as exc:
            raise ParseError(f"bad manifest JSON: {exc.msg}", line=1) from exc
        tree = head.get("scenario", head) if isinstance(head, dict) else head
        return scenario_from_tree(tree, base=path.parent)
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.MarkedYAMLError as exc:
        line = exc.problem_mark.line + 1 if exc.problem_mark else None
        raise ParseError(f"YAML syntax error: {exc.problem}", line=line) from exc
    if node is None:
        raise ParseError("empty scenario file", line=1)
    lines: dict[str, int] = {}
    tree = _to_python(node, "", lines)
    return scenario_from_tree(tree, lines, base=path.parent)


def bundled_scenarios() -> dict[str, Path]:
    """Scenario files shipped with the package, by name."""
    root = resources.files("crowdflow") / "scenarios"
    return {Path(p.name).stem: Path(str(p)) for p in root.iterdir() if p.name.endswith(".yaml")}


def load_bundled(name: str) -> Scenario:
    files = bundled_scenarios()
    if name not in files:
        raise KeyError(f"no bundled scenario {name!r}; have {sorted(files)}")
    return parse_scenario(files[name])
