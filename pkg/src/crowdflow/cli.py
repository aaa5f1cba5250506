"""Command-line front end: ``crowdflow run | validate | converge``.

Exit codes: 0 success, 1 validation or invariant failure (including
runtime errors such as a CFL violation), 2 usage or parse error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .diagnostics import (
    convergence_study,
    exact_reference,
    invariant_report,
    is_monotone_decreasing,
    localization_error,
    rows_to_csv,
)
from .errors import CrowdflowError, GridError, ParseError, SupportEscape, ValidationError
from .oracles import exact_translation
from .output import write_run
from .pushforward import run
from .scenario import Scenario, bundled_scenarios, parse_scenario

log = logging.getLogger("crowdflow")

VALIDATE_MAX_STEPS = 100

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _load(spec: str) -> Scenario:
    """A path, or the name of a bundled scenario when no such file exists."""
    path = Path(spec)
    if not path.exists():
        bundled = bundled_scenarios()
        if spec in bundled:
            path = bundled[spec]
    return parse_scenario(path)


def _levels(text: str) -> list[int]:
    try:
        levels = [int(v) for v in text.replace(" ", "").split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"levels must be comma-separated integers, got {text!r}")
    if len(set(levels)) < 3:
        raise argparse.ArgumentTypeError(f"need at least 3 distinct grid levels, got {text!r}")
    if any(m < 1 for m in levels):
        raise argparse.ArgumentTypeError("grid levels must be positive")
    return levels


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def cmd_run(args) -> int:
    sc = _load(args.scenario)
    stride = args.stride or sc.stride
    adaptive = args.adaptive_dt or sc.adaptive
    result = run(sc, stride=stride, adaptive=adaptive)
    report = invariant_report(result)
    out = write_run(args.out, sc, result, report, stride=stride, adaptive=adaptive)
    drift = float(report.mass_drift.max()) if len(report.mass_drift) else 0.0
    print(f"{sc.name}: {len(result.records)} steps, t = {result.snapshots[-1][1]:.6g}, "
          f"max mass drift {drift:.2e}, wrote {len(result.snapshots)} files to {out}")
    for v in report.violations:
        print(f"violation: {v}", file=sys.stderr)
    return EXIT_OK if report.ok else EXIT_FAIL


def _oracle_lines(sc: Scenario, result) -> list[str]:
    lines = []
    if not sc.is_linear:
        return ["oracle: nonlinear flux, no closed-form reference (skipped)"]
    final = result.final
    t = result.snapshots[-1][1]
    if sc.desired.mode == "constant" and not sc.obstacles:
        try:
            ref = exact_translation(result.snapshots[0][2], sc.desired.velocity, t)
            err = localization_error(ref, final)
            lines.append(f"oracle: scheme vs exact translation, max cell error {err.max:.3e}, "
                         f"total variation {err.total_variation:.3e}")
        except (SupportEscape, GridError) as exc:
            lines.append(f"oracle: exact translation skipped ({exc})")
    closed = exact_reference(sc, final.grid, len(result.records), sc.dt)
    if closed is not None and not sc.adaptive:
        err = localization_error(closed[0], final)
        lines.append(f"oracle: scheme vs exact push-forward, max cell error {err.max:.3e}")
    return lines or ["oracle: no closed-form reference for this desired mode (skipped)"]


def cmd_validate(args) -> int:
    sc = _load(args.scenario)
    steps = min(sc.steps, VALIDATE_MAX_STEPS)
    sc = sc.replace(steps=steps, adaptive=args.adaptive_dt or sc.adaptive)
    result = run(sc)
    report = invariant_report(result)
    print(f"{sc.name}: validating {steps} steps at M={sc.M}")
    for name, ok in report.checks().items():
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    for line in _oracle_lines(sc, result):
        print(line)
    for v in report.violations:
        print(f"violation: {v}", file=sys.stderr)
    return EXIT_OK if report.ok else EXIT_FAIL


def cmd_converge(args) -> int:
    sc = _load(args.scenario)
    rows = convergence_study(sc, args.levels)
    text = rows_to_csv(rows)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "convergence.csv").write_text(text)
    else:
        sys.stdout.write(text)
    ref = rows[0].reference
    if ref != "exact":
        print(f"reference: finest-grid self-convergence run {ref}; no exact solution exists", file=sys.stderr)
    ok = is_monotone_decreasing(rows)
    print(f"errors {'monotone decreasing' if ok else 'NOT monotone'} in h", file=sys.stderr)
    return EXIT_OK if ok else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="crowdflow", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    pr = sub.add_parser("run", help="simulate a scenario and write snapshots")
    pr.add_argument("scenario", help="scenario file or bundled scenario name")
    pr.add_argument("--out", required=True, help="output directory")
    pr.add_argument("--stride", type=_positive, help="snapshot every N steps (overrides the scenario)")
    pr.add_argument("--adaptive-dt", action="store_true", help="halve dt on CFL violation instead of failing")
    pr.set_defaults(func=cmd_run)

    pv = sub.add_parser("validate", help="check invariants and oracles on a short run")
    pv.add_argument("scenario")
    pv.add_argument("--adaptive-dt", action="store_true")
    pv.set_defaults(func=cmd_validate)

    pc = sub.add_parser("converge", help="grid refinement study at fixed dt/h")
    pc.add_argument("scenario")
    pc.add_argument("--levels", type=_levels, default=[16, 32, 64], help="comma-separated M values (>= 3)")
    pc.add_argument("--out", help="directory for convergence.csv (default: stdout)")
    pc.set_defaults(func=cmd_converge)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValidationError as exc:
        print(f"invalid scenario: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (CrowdflowError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
