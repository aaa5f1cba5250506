"""Run artefacts on disk: CSV snapshots, manifest and diagnostics streams.

Snapshots are ``M x M`` CSV matrices, row ``i`` holding cells ``(i, 1..M)``,
written with 17 significant digits so they read back bit-exactly.  The
manifest and diagnostics files are JSON lines; the first manifest line
holds the scenario tree and can be passed back to ``parse_scenario``.
"""

from __future__ import annotations

import dataclasses
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .diagnostics import InvariantReport
from .grid import DensityField, Grid
from .pushforward import RunResult
from .scenario import Scenario

INITIAL_NAME = "initial_density.csv"
MANIFEST_NAME = "manifest.jsonl"
DIAGNOSTICS_NAME = "diagnostics.jsonl"


def snapshot_name(step: int) -> str:
    return f"snapshot_{step:06d}.csv"


def format_snapshot(field: DensityField) -> str:
    return "\n".join(",".join(f"{v:.17g}" for v in row) for row in field.rho) + "\n"


def write_snapshot(path, field: DensityField) -> None:
    Path(path).write_text(format_snapshot(field))


def read_snapshot(path, grid: Grid) -> DensityField:
    rho = np.loadtxt(path, delimiter=",", ndmin=2)
    if rho.shape != grid.shape:
        raise ValueError(f"snapshot {path} has shape {rho.shape}, expected {grid.shape}")
    return DensityField(grid, rho)


def _jsonable(v):
    if isinstance(v, float) and not np.isfinite(v):
        return None if np.isnan(v) else ("inf" if v > 0 else "-inf")
    return v


def manifest_lines(scenario: Scenario, result: RunResult, *, stride: int, adaptive: bool) -> list[str]:
    head = {
        "scenario": scenario.replace(stride=stride, adaptive=adaptive).to_tree(),
        "crowdflow_version": __version__,
        "snapshots": [snapshot_name(n) for n, _, _ in result.snapshots[1:]],
        "initial": INITIAL_NAME,
    }
    out = [json.dumps(head)]
    out += [json.dumps({"step": r.step, "t": r.t, "dt": r.dt}) for r in result.records]
    return out


def diagnostics_lines(result: RunResult, report: InvariantReport) -> list[str]:
    out = []
    for r, ratio in zip(result.records, report.linf_ratio):
        rec = {k: _jsonable(v) for k, v in dataclasses.asdict(r).items()}
        rec["linf_ratio"] = _jsonable(float(ratio))
        out.append(json.dumps(rec))
    out.append(json.dumps({"summary": {"checks": report.checks(), "violations": list(report.violations)}}))
    return out


def write_run(out_dir, scenario: Scenario, result: RunResult, report: InvariantReport,
              *, stride: int, adaptive: bool) -> Path:
    """Write every artefact of a finished run into ``out_dir``.

    Files are staged in a temporary sibling directory and moved in at the
    end, so an interrupted write leaves no partial snapshot set behind.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files: dict[str, str] = {INITIAL_NAME: format_snapshot(result.snapshots[0][2])}
    for n, _, f in result.snapshots[1:]:
        files[snapshot_name(n)] = format_snapshot(f)
    files[MANIFEST_NAME] = "\n".join(manifest_lines(scenario, result, stride=stride, adaptive=adaptive)) + "\n"
    files[DIAGNOSTICS_NAME] = "\n".join(diagnostics_lines(result, report)) + "\n"
    with tempfile.TemporaryDirectory(dir=out, prefix=".staging-") as tmp:
        for name, text in files.items():
            Path(tmp, name).write_text(text)
        for name in files:
            os.replace(Path(tmp, name), out / name)
    return out
