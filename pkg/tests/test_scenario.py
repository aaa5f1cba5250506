from __future__ import annotations

import json
import textwrap

import numpy as np
import pytest

from crowdflow import ParseError, Scenario, ValidationError, bundled_scenarios, load_bundled, parse_scenario

MINIMAL = """\
grid:
  M: 16
initial:
  kind: uniform
  density: 1.0
desired:
  mode: direct
  target: [1.0, 0.5]
interaction:
  kind: low_crowding
  beta: 0.0
"""


def _write(tmp_path, text, name="s.yaml"):
    p = tmp_path / name
    p.write_text(textwrap.dedent(text))
    return p


def test_minimal_defaults(tmp_path):
    sc = parse_scenario(_write(tmp_path, MINIMAL))
    assert sc.M == 16 and sc.obstacles == ()
    assert sc.initial.kind == "uniform" and sc.initial.density == 1.0
    assert sc.desired.alpha == 1.0 and sc.interaction.beta == 0.0
    assert sc.dt == Scenario.dt and sc.steps == Scenario.steps and sc.stride == 1
    assert sc.is_linear


def test_radius_out_of_range(tmp_path):
    with pytest.raises(ValidationError, match="R < 1"):
        parse_scenario(_write(tmp_path, MINIMAL + "  R: 1.5\n"))


def test_misspelled_key(tmp_path):
    text = MINIMAL.replace("  density: 1.0", "  densty: 1.0")
    with pytest.raises(ParseError, match=r"initial\.densty.*line 5"):
        parse_scenario(_write(tmp_path, text))


@pytest.mark.parametrize(
    "text, pattern",
    [
        ("grid: {M: 16}\ninitial: {kind: uniform}\ntime: {steps: ten}\n", "time.steps"),
        ("grid: {M: 16}\ninitial: {kind: uniform}\ngrid: {M: 8}\n", "duplicate"),
        ("grid: [16\n", "syntax"),
        ("initial: {kind: uniform}\n", "grid"),
        ("", "empty"),
        ("- 1\n- 2\n", "mapping"),
    ],
)
def test_parse_errors(tmp_path, text, pattern):
    with pytest.raises(ParseError, match=pattern):
        parse_scenario(_write(tmp_path, text))


def test_negative_table_rejected(tmp_path):
    text = """\
    grid: {M: 2}
    initial:
      kind: table
      values: [[1.0, 2.0], [-0.5, 1.0]]
    """
    with pytest.raises(ValidationError, match="positivity"):
        parse_scenario(_write(tmp_path, text))


def test_table_from_csv(tmp_path):
    (tmp_path / "rho.csv").write_text("1,2,3\n4,5,6\n7,8,9\n")
    sc = parse_scenario(_write(tmp_path, "grid: {M: 3}\ninitial: {kind: table, file: rho.csv}\n"))
    np.testing.assert_array_equal(sc.initial_field().rho, np.arange(1.0, 10.0).reshape(3, 3))


def test_table_shape_mismatch(tmp_path):
    with pytest.raises(ValidationError):
        parse_scenario(_write(tmp_path, "grid: {M: 3}\ninitial: {kind: table, values: [[1, 2], [3, 4]]}\n"))


def test_gaussian_mass_normalised():
    sc = load_bundled("corridor")
    f = sc.initial_field()
    assert f.cell_measures().sum() == pytest.approx(1.0, rel=1e-13)
    assert np.all(f.rho[f.grid.mask] == 0)


@pytest.mark.parametrize("name", sorted(bundled_scenarios()))
def test_bundled_round_trip(tmp_path, name):
    sc = load_bundled(name)
    p = tmp_path / "manifest.jsonl"
    p.write_text(json.dumps({"scenario": sc.to_tree()}) + "\n" + json.dumps({"step": 1}) + "\n")
    assert parse_scenario(p) == sc


def test_bundled_set():
    assert {"corridor", "obstacle_waypoint", "potential_exit", "com_repulsion",
            "aligned_translation", "diagonal_translation"} <= set(bundled_scenarios())
