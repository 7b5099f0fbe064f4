import math
from pathlib import Path

import numpy as np
import pytest

from boundarycurv.critical import H_values, global_scan
from boundarycurv.errors import SpecError
from boundarycurv.geometry import mean_curvature
from boundarycurv.specfile import load, parse_text

SPECS = Path(__file__).resolve().parent.parent / "specs"

CIRCLE_FERMI = """\
name = round
mode = fermi
dim = 1
[fermi]
lower = 0
upper = 2*pi
period = 2*pi
g11 = (1 - t)^2
"""


def _error(text):
    with pytest.raises(SpecError) as err:
        parse_text(text).build()
    return err.value


def test_parse_basic():
    spec = parse_text(CIRCLE_FERMI)
    assert spec.name == "round" and spec.mode == "fermi" and spec.dim == 1
    assert spec.section("fermi").get("g11").value == "(1 - t)^2"
    assert spec.spec_hash.startswith("sha256:")
    assert spec.spec_hash == parse_text(CIRCLE_FERMI).spec_hash
    assert spec.spec_hash != parse_text(CIRCLE_FERMI + "# comment\n").spec_hash


def test_fermi_global_layout():
    m = parse_text(CIRCLE_FERMI).build()
    assert len(m.charts) == 4
    centers = [c.center[0] for c in m.charts]
    assert np.allclose(centers, (np.arange(4) + 0.5) * math.pi / 2)
    assert m.charts[0].radius == pytest.approx(0.625 * math.pi / 2)
    assert m.atlas.translation and m.atlas.period == (2 * math.pi,)
    for c in m.charts:
        assert mean_curvature(c, [0.1]) == pytest.approx(1.0, abs=1e-14)
    assert global_scan(m).constant_H_flag


def test_non_periodic_layout():
    text = """\
mode = fermi
dim = 2
[fermi]
lower = 0, 0
upper = 2, 1
charts = 3, 2
g11 = 1 + 0.1*x1*t
g22 = 1
"""
    m = parse_text(text).build()
    assert len(m.charts) == 6
    xs = sorted({c.center[0] for c in m.charts})
    ys = sorted({c.center[1] for c in m.charts})
    R = m.charts[0].radius
    # outer charts touch the faces
    assert xs[0] - R == pytest.approx(0.0) and xs[-1] + R == pytest.approx(2.0)
    assert ys[0] - R == pytest.approx(0.0) and ys[-1] + R == pytest.approx(1.0)
    assert m.atlas.period is None


def test_chart_form():
    m = load(str(SPECS / "two-charts.spec")).build()
    assert [c.name for c in m.charts] == ["a", "b"]
    assert m.charts[0].depth == pytest.approx(0.4)
    # local coordinates: both charts describe 1 + 0.2 cos(theta) at theta = pi
    a = mean_curvature(m.charts[0], [math.pi / 2])
    b = mean_curvature(m.charts[1], [-math.pi / 2])
    assert a == pytest.approx(b, abs=1e-14)
    assert a == pytest.approx(1 + 0.2 * math.cos(math.pi), abs=1e-12)


def test_example_specs_load():
    for path in sorted(SPECS.glob("*.spec")):
        m = load(str(path)).build()
        assert m.charts


def test_ambient_warped_circle():
    m = load(str(SPECS / "warped-circle.spec")).build()
    chart, x = m.chart_for_global([0.0])
    assert mean_curvature(chart, x) == pytest.approx((7 / 6) / math.sqrt(1.2), abs=1e-7)
    chart, x = m.chart_for_global([math.pi / 2])
    assert mean_curvature(chart, x) == pytest.approx(1.0, abs=1e-7)


@pytest.mark.parametrize("orientation", ["auto", "+1"])
def test_ambient_orientation(orientation):
    text = f"""\
mode = ambient
dim = 1
[ambient]
y1 = 2*cos(x1)
y2 = sin(x1)
lower = 0
upper = 2*pi
period = 2*pi
orientation = {orientation}
"""
    m = parse_text(text).build()
    chart, x = m.chart_for_global([0.0])
    assert H_values(chart.metric, np.array([x]))[0] == pytest.approx(2.0, abs=1e-8)
    flipped = parse_text(text.replace(f"orientation = {orientation}", "orientation = -1")).build()
    chart, x = flipped.chart_for_global([0.0])
    assert H_values(chart.metric, np.array([x]))[0] == pytest.approx(-2.0, abs=1e-8)


def test_builtin_forms():
    assert load("builtin:ellipse(2,1)").build().name == "ellipse(2,1)"
    assert load(str(SPECS / "ellipse.spec")).build().name.startswith("ellipse")
    assert len(load("builtin:ellipsoid(1,1.3,1.7)").build().charts) == 6
    with pytest.raises(SpecError):
        load("builtin:sphere").build()


def test_missing_file():
    with pytest.raises(SpecError, match="cannot read"):
        load("/nonexistent/file.spec")


@pytest.mark.parametrize(
    "text, line, column, fragment",
    [
        ("dim = 1\n", 1, 1, "missing 'mode'"),
        ("mode = elliptic\n", 1, 8, "unknown mode"),
        ("mode = fermi\n", 1, 1, "dim"),
        ("mode = fermi\ndim = 1\ncolour = red\n", 3, 1, "unknown top-level key"),
        ("mode = fermi\ndim = 1\n[weird]\n", 3, 2, "unknown section"),
        ("mode = fermi\ndim = 1\n[fermi\n", 3, 1, "malformed section header"),
        ("mode = fermi\nmode = fermi\n", 2, 1, "duplicate key"),
        ("mode = fermi\ndim = 1\njust text\n", 3, 1, "expected 'key = value'"),
        ("mode = fermi\ndim = 1\n[fermi]\nlower = 0\nupper = 1\ng11 = 1 +\n", 6, 10, "end of input"),
        ("mode = fermi\ndim = 1\n[fermi]\nlower = 0\nupper = 1\ng11 = 1 + y\n", 6, 11, "y"),
        ("mode = fermi\ndim = 1\n[fermi]\nlower = 0\nupper = 1\ng11 = x1 - 2\n", 3, 1, "positive definite"),
        ("mode = fermi\ndim = 1\n[fermi]\nlower = 1\nupper = 0\ng11 = 1\n", 5, 1, "upper must exceed"),
        ("mode = fermi\ndim = 1\n[fermi]\nlower = 0\nupper = 1\ncolor = 1\ng11 = 1\n", 6, 1, "unknown key"),
        ("mode = fermi\ndim = 2\n[fermi]\nlower = 0, 0\nupper = 1, 1\ng12 = 0\ng21 = 0\ng11 = 1\n", 7, 1, "twice"),
        ("mode = fermi\ndim = 1\n[fermi]\nlower = 0\nupper = 1, 2\ng11 = 1\n", 5, 9, "comma-separated"),
        ("mode = fermi\ndim = 1\n[fermi]\nlower = 0\nupper = 2*\ng11 = 1\n", 5, 11, "bad number"),
        ("mode = fermi\ndim = 1\n[fermi]\nlower = 0\nupper = 1\nperiod = 2\ng11 = 1\n", 6, 1, "period"),
        ("mode = ambient\ndim = 1\n[ambient]\ny1 = x1\ny2 = 0\nlower = 0\nupper = 1\norientation = up\n", 8, 15, "orientation"),
    ],
)
def test_errors_carry_position(text, line, column, fragment):
    err = _error(text)
    assert (err.line, err.column) == (line, column)
    assert fragment in str(err)
    assert f"line {line}, column {column}" in str(err)


def test_comments_and_blank_lines():
    text = "# header\n\nmode = builtin   # trailing\n[builtin]\n  id = disk\n"
    m = parse_text(text).build()
    assert m.name == "disk"
