import math

import numpy as np
import pytest

from boundarycurv import manifolds
from boundarycurv.errors import DomainError
from boundarycurv.geometry import (
    AmbientBoundarySpec,
    AmbientMetric,
    fermi_pullback,
    gauge_residual,
    mean_curvature,
    principal_curvatures,
    second_fundamental_form,
)
from boundarycurv.tensors import MultiIndex, eval_tensor


def _sigma(x):
    # round metric of the unit sphere in the chart direction (1, x1, x2) / |.|
    x = np.asarray(x, dtype=float)
    r2 = 1.0 + x @ x
    return ((r2 * np.eye(2)) - np.outer(x, x)) / r2**2


def test_flat_line():
    spec = AmbientBoundarySpec.parse(1, ["x1", "0"], orientation=1)
    chart = fermi_pullback(spec, [0.0], 1.0, 0.5)
    for x in (-0.9, 0.0, 0.7):
        for t in (0.0, 0.2, 0.45):
            assert eval_tensor(chart.metric, [x, t], (0, 0))[0, 0] == pytest.approx(1.0, abs=1e-14)
        assert second_fundamental_form(chart, [x])[0, 0] == pytest.approx(0.0, abs=1e-14)
        assert mean_curvature(chart, [x], 0.3) == pytest.approx(0.0, abs=1e-14)


def test_half_space_is_flat():
    m = manifolds.half_space(2)
    for c in m.charts:
        assert np.allclose(second_fundamental_form(c, [0.3, -0.2]), 0.0, atol=1e-14)
        assert mean_curvature(c, [0.1, 0.1], 0.2) == pytest.approx(0.0, abs=1e-14)


def test_disk_closed_form(disk):
    for c in disk.charts:
        for x in np.linspace(-c.radius, c.radius, 7):
            for t in (0.0, 0.1, 0.3):
                g = eval_tensor(c.metric, [x, t], (0, 0))[0, 0]
                assert g == pytest.approx((1 - t) ** 2, abs=1e-8)
            assert eval_tensor(c.metric, [x, 0.0], (0, 1))[0, 0] == pytest.approx(-2.0, abs=1e-8)
            assert second_fundamental_form(c, [x])[0, 0] == pytest.approx(1.0, abs=1e-8)
            assert mean_curvature(c, [x]) == pytest.approx(1.0, abs=1e-8)
            # level set at depth t is the circle of radius 1 - t
            assert mean_curvature(c, [x], 0.2) == pytest.approx(1 / 0.8, abs=1e-8)


def test_ball_closed_form(ball, rng):
    for c in ball.charts:
        for _ in range(10):
            x = rng.uniform(-0.9, 0.9, 2) * c.radius
            t = rng.uniform(0, 0.4)
            g = eval_tensor(c.metric, [*x, t], (0, 0, 0))
            assert np.allclose(g, (1 - t) ** 2 * _sigma(x), atol=1e-8)
            h = second_fundamental_form(c, x)
            assert np.allclose(h, eval_tensor(c.metric, [*x, 0.0], (0, 0, 0)), atol=1e-8)
            assert mean_curvature(c, x) == pytest.approx(2.0, abs=1e-8)
            assert np.allclose(principal_curvatures(c, x), [1.0, 1.0], atol=1e-8)


def test_ball_center_is_normal(ball):
    for c in ball.charts:
        assert np.allclose(eval_tensor(c.metric, [0, 0, 0], (0, 0, 0)), np.eye(2), atol=1e-14)


@pytest.mark.parametrize("c", [0.5, 2.0])
def test_scaling_law(c):
    m = manifolds.ball3(c, depth=0.2)
    for ch in m.charts[:2]:
        for x in ([0.0, 0.0], [0.4, -0.3]):
            assert mean_curvature(ch, x) == pytest.approx(2.0 / c, rel=1e-9)


def test_ellipse_curvature(ellipse):
    a, b = 2.0, 1.0
    for ch in ellipse.charts:
        for x in np.linspace(-ch.radius, ch.radius, 9):
            th = ch.center[0] + x
            kappa = a * b / (a**2 * math.sin(th) ** 2 + b**2 * math.cos(th) ** 2) ** 1.5
            assert mean_curvature(ch, [x]) == pytest.approx(kappa, abs=1e-10)


def test_conformal_circle():
    # unit circle in G = (1 + 0.2 y1^2) delta; H = e^-phi (1 + d_out phi)
    metric = AmbientMetric.parse(2, {"G11": "1 + 0.2*y1^2", "G22": "1 + 0.2*y1^2"})
    spec = AmbientBoundarySpec.parse(1, ["cos(x1)", "sin(x1)"], ambient_metric=metric)
    for center in (0.0, 1.0, math.pi / 2, 2.5):
        ch = fermi_pullback(spec, [center], 0.5, 0.3)
        for x in (-0.4, 0.0, 0.3):
            c2 = math.cos(center + x) ** 2
            w = 1 + 0.2 * c2
            want = (1 + 0.2 * c2 / w) / math.sqrt(w)
            assert mean_curvature(ch, [x]) == pytest.approx(want, abs=1e-7)
        assert ch.gauge_residual <= 1e-8


def test_route_equivalence(rng):
    m = manifolds.ellipsoid(1.0, 1.3, 1.7)
    worst = 0.0
    for _ in range(200):
        ch = m.charts[int(rng.integers(len(m.charts)))]
        x = rng.uniform(-ch.radius, ch.radius, 2)
        t = rng.uniform(0, 0.9 * ch.depth)
        a = mean_curvature(ch, x, t, route="trace")
        b = mean_curvature(ch, x, t, route="contraction")
        worst = max(worst, abs(a - b) / max(1.0, abs(a)))
    assert worst <= 1e-12


def test_gauge_structure():
    m = manifolds.ellipsoid(1.0, 1.3, 1.7)
    for ch in m.charts:
        assert ch.gauge_residual <= 1e-8
        pts = np.array([[0.5, -0.5, 0.1], [-1.0, 1.0, 0.3], [0.0, 0.0, ch.depth]])
        assert gauge_residual(ch, pts) <= 1e-8


def test_rotational_symmetry(disk, ball, rng):
    hs = [mean_curvature(c, [x]) for c in disk.charts for x in rng.uniform(-c.radius, c.radius, 5)]
    assert np.ptp(hs) <= 1e-8
    hs = [mean_curvature(c, rng.uniform(-1, 1, 2)) for c in ball.charts for _ in range(5)]
    assert np.ptp(hs) <= 1e-8


def test_focal_clamp():
    spec = AmbientBoundarySpec.parse(1, ["cos(x1)", "sin(x1)"])
    ch = fermi_pullback(spec, [0.0], 0.5, 2.0)
    assert ch.depth == pytest.approx(0.9)
    assert any("clamped" in note for note in ch.notes)


def test_domain_errors(disk):
    ch = disk.charts[0]
    with pytest.raises(DomainError):
        mean_curvature(ch, [ch.radius + 0.1])
    with pytest.raises(DomainError):
        second_fundamental_form(ch, [0.0], t=ch.depth + 0.1)
    with pytest.raises(ValueError):
        mean_curvature(ch, [0.0], route="other")


def test_not_an_immersion():
    spec = AmbientBoundarySpec.parse(1, ["x1^3", "0"])
    with pytest.raises(DomainError):
        fermi_pullback(spec, [0.0], 0.5, 0.2)


def test_ambient_derivatives_match_fd(ellipse):
    # AD through the pullback against central differences in t and x
    ch = ellipse.charts[1]
    p = np.array([0.2, 0.1])
    h = 1e-4
    for axis in (0, 1):
        e = np.zeros(2)
        e[axis] = h
        fd = (eval_tensor(ch.metric, p + e, (0, 0)) - eval_tensor(ch.metric, p - e, (0, 0))) / (2 * h)
        ad = eval_tensor(ch.metric, p, MultiIndex.of(1, axis))
        assert np.allclose(fd, ad, atol=1e-7)
