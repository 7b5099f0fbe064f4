import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from boundarycurv import manifolds
from boundarycurv.critical import global_scan, grad_H
from boundarycurv.errors import ChartOverflow, SeriesDiverges, SpecError
from boundarycurv.perturbation import (
    Bump,
    CanonicalPerturbationField,
    GenericityReport,
    canonical_perturbation,
    covering_centers,
    cutoff,
    frechet_F_k,
    frechet_inner,
    frechet_reduced,
    perturb_to_generic,
    neumann_ratio,
    perturbed_from_dict,
    random_canonical_field,
    stability_check,
    surjectivity_matrix,
    support_norm,
)
from boundarycurv.tensors import MultiIndex, eval_tensor, euclidean, parse_field, random_polynomial_field, zero_field

# g(0, 0) = I; k vanishes at the origin
G_NORMAL = {
    "g11": "1 + 0.3*x1*x2 + 0.2*t*x1 - 0.4*t + 0.1*t^2",
    "g12": "0.2*x2*t + 0.1*x1",
    "g22": "1 + 0.5*t*x2 - 0.3*t + 0.2*x1^2",
}
K_VANISHING = {"g11": "x1*t + 0.3*x2", "g12": "0.2*x1*t - 0.1*t", "g22": "x2*t + 0.5*x1*x2"}


def test_zero_perturbation():
    g = parse_field(G_NORMAL, 2)
    assert np.array_equal(frechet_F_k(g, [0.1, 0.2], zero_field(2)), np.zeros(2))


def test_flat_canonical_value():
    k = parse_field({"g11": "x1*t"}, 2)
    assert np.allclose(frechet_inner(euclidean(2), [0.0, 0.0], k), [1.0, 0.0], atol=1e-15)
    assert np.allclose(frechet_F_k(euclidean(2), [0.0, 0.0], k), [-0.5, 0.0], atol=1e-15)


def _fd(g, k, x, delta):
    return (grad_H(g + delta * k, x) - grad_H(g - delta * k, x)) / (2 * delta)


def test_matches_directional_fd(rng):
    for _ in range(25):
        g = random_polynomial_field(2, rng)
        k = random_polynomial_field(2, rng, base_identity=False, scale=0.5)
        x = rng.uniform(-0.5, 0.5, 2)
        exact = frechet_F_k(g, x, k)
        fd = _fd(g, k, x, 1e-4)
        assert np.linalg.norm(fd - exact) <= 1e-6 * max(np.linalg.norm(exact), 1e-3)


def test_fd_converges_second_order():
    g = parse_field({"g11": "1 + 0.5*sin(x1)*t - 0.3*t + 0.2*x2^2*t", "g12": "0.1*x1*t^2", "g22": "1 + cos(x2)*t*0.4"}, 2)
    k = parse_field({"g11": "0.3*cos(x2) + exp(x1)*t^2 + x2*t", "g12": "0.2*x1", "g22": "sin(x1 + x2)*t"}, 2)
    x = [0.3, -0.2]
    exact = frechet_F_k(g, x, k)
    errs = [np.linalg.norm(_fd(g, k, x, d) - exact) for d in (0.2, 0.1)]
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.2)


def test_linearity(rng):
    g = random_polynomial_field(2, rng)
    k1 = random_polynomial_field(2, rng, base_identity=False)
    k2 = random_polynomial_field(2, rng, base_identity=False)
    x = [0.2, 0.1]
    a, b = 1.7, -0.6
    lhs = frechet_F_k(g, x, a * k1 + b * k2)
    rhs = a * frechet_F_k(g, x, k1) + b * frechet_F_k(g, x, k2)
    assert np.allclose(lhs, rhs, rtol=0, atol=1e-12 * max(1.0, np.abs(rhs).max()))


def test_reduced_formula_agrees():
    g = parse_field(G_NORMAL, 2)
    k = parse_field(K_VANISHING, 2)
    full = frechet_F_k(g, [0.0, 0.0], k)
    assert np.allclose(frechet_reduced(g, [0.0, 0.0], k), full, rtol=0, atol=1e-12)
    with pytest.raises(ValueError):
        frechet_reduced(g, [0.3, 0.0], k)


@pytest.mark.parametrize("nu", [0, 1])
def test_canonical_vanishing_pattern(nu):
    c = (0.1, -0.2)
    k = canonical_perturbation(nu, c, 0.3, 0.2)
    p = [*c, 0.0]
    assert np.array_equal(eval_tensor(k.base, p, (0, 0, 0)), np.zeros((2, 2)))
    for axis in range(3):
        assert np.allclose(eval_tensor(k.base, p, MultiIndex.of(2, axis)), 0.0, atol=1e-15)
    for s in range(2):
        kts = eval_tensor(k.base, p, MultiIndex.of(2, s, 2))
        want = np.zeros((2, 2))
        want[nu, nu] = float(s == nu)
        assert np.allclose(kts, want, atol=1e-15)


def test_canonical_swap_symmetry(rng):
    k0 = canonical_perturbation(0, (0.1, -0.2), 0.4, 0.3).base
    k1 = canonical_perturbation(1, (-0.2, 0.1), 0.4, 0.3).base
    for _ in range(20):
        x1, x2 = rng.uniform(-0.5, 0.5, 2)
        t = rng.uniform(0, 0.3)
        a = k0.jet([x1, x2, t], 0)[0, 0, 0]
        b = k1.jet([x2, x1, t], 0)[1, 1, 0]
        assert a == b


def test_canonical_norm_homogeneous():
    k = canonical_perturbation(0, (0.0,), 0.5, 0.2)
    n1 = support_norm(k.base, (0.0,), 0.5, 0.2, 3, grid_res=17)
    n2 = support_norm(k.base.scaled(-3.0), (0.0,), 0.5, 0.2, 3, grid_res=17)
    assert n2 == pytest.approx(3.0 * n1, rel=1e-13)


def test_canonical_support():
    k = canonical_perturbation(1, (0.1, 0.3), 0.25, 0.2)
    assert k.vanishes_outside()
    assert k.cm_norm_value > 0


def test_canonical_checks(ellipse):
    chart = ellipse.charts[0]
    with pytest.raises(ChartOverflow):
        canonical_perturbation(0, (0.9,), 0.3, 0.1, chart=chart)
    with pytest.raises(ChartOverflow):
        canonical_perturbation(0, (0.0,), 0.3, chart.depth, chart=chart)
    with pytest.raises(ValueError):
        canonical_perturbation(0, (0.0,), 0.3, 0.1, rho=1e-6)
    with pytest.raises(ValueError):
        canonical_perturbation(2, (0.0, 0.0), 0.3, 0.1)


@settings(max_examples=200)
@given(st.floats(0.0, 3.0))
def test_cutoff_shape(s):
    v = float(cutoff(s))
    assert 0.0 <= v <= 1.0
    if s <= 0.5:
        assert v == 1.0
    if s >= 1.0:
        assert v == 0.0
    assert float(cutoff(s + 1e-3)) <= v


def test_surjectivity_flat():
    m = manifolds.half_space(2)
    chart = m.charts[0]
    rep = surjectivity_matrix(chart.metric, [0.0, 0.0], 0.5, 0.2, chart=chart)
    assert np.abs(np.array(rep.matrix) - np.eye(2)).max() < 1e-10
    assert np.allclose(rep.matrix_scaled, -0.5 * np.eye(2), atol=1e-10)
    assert rep.onto and not rep.recentered


def test_surjectivity_ellipse(ellipse):
    chart = ellipse.charts[0]
    rep = surjectivity_matrix(chart.metric, [0.0], 0.4, 0.2, chart=chart)
    assert rep.onto and abs(rep.matrix[0][0]) > 1e-3
    # oracle: directional FD of grad H along the first basis tensor
    k = canonical_perturbation(0, (0.0,), 0.4, 0.2).base
    fd = _fd(chart.metric, k, [0.0], 1e-5)[0]
    assert rep.matrix_scaled[0][0] == pytest.approx(fd, rel=1e-6)
    half = surjectivity_matrix(chart.metric, [0.0], 0.2, 0.2, chart=chart)
    assert half.onto
    assert np.allclose(half.matrix, rep.matrix, rtol=1e-12)


def test_surjectivity_recenters(ellipse):
    # at theta = pi/2 the parameter speed is 2, so g(0, 0) = 4
    chart = ellipse.charts[1]
    rep = surjectivity_matrix(chart.metric, [0.0], 0.2, 0.2, chart=chart)
    assert rep.recentered and rep.onto
    assert rep.transform[0][0] == pytest.approx(0.5)


def test_stability_zero(ellipse, ellipse_scan):
    rep = stability_check(ellipse, ellipse_scan, [0.0], seed=3)
    row = rep.rows[0]
    assert row.displacements == [0.0] * 4
    assert row.preserved and row.continued == 4 and row.new_points == 0


def test_stability_linear(ellipse, ellipse_scan):
    rep = stability_check(ellipse, ellipse_scan, [1e-3, 5e-4], seed=3)
    assert all(r.preserved for r in rep.rows)
    assert rep.ratios[0] == pytest.approx(2.0, rel=0.3)


def test_stability_needs_nondegenerate(circle):
    with pytest.raises(ValueError):
        stability_check(circle, global_scan(circle), [1e-3])


def test_generic_zero_epsilon(circle):
    rep = perturb_to_generic(circle, 0.0, seed=1)
    assert rep.after is rep.before
    assert not rep.success and rep.rounds == 0


def test_generic_already_generic(ellipse, ellipse_scan):
    rep = perturb_to_generic(ellipse, 1e-2, before=ellipse_scan)
    assert rep.success and rep.rounds == 0 and rep.perturbation is None


def test_circle_becomes_generic(circle):
    rep = perturb_to_generic(circle, 1e-2, seed=7)
    assert rep.success and rep.rounds == 1
    after = rep.after
    assert after.count("maximum") == after.count("minimum") > 0
    assert rep.cm_norm > 0
    # an independent rescan of the rebuilt metric reproduces the records
    again = global_scan(perturbed_from_dict(circle, rep.perturbation))
    assert len(again.records) == len(after.records)
    for r in after.records:
        d = min(circle.param_distance(r.global_x, o.global_x) for o in again.records)
        assert d <= after.r_dedup
    back = GenericityReport.from_dict(rep.to_dict())
    assert back.to_dict() == rep.to_dict()


@pytest.mark.slow
def test_flat_torus_becomes_generic():
    m = manifolds.half_space(2)
    rep = perturb_to_generic(m, 1e-2, seed=1, threads=4)
    assert rep.before.constant_H_flag
    assert rep.success and rep.rounds == 1
    assert rep.after.euler_sum == 0


def test_perturbation_needs_translation_atlas():
    m = manifolds.ball3(depth=0.2)
    k = CanonicalPerturbationField(2, [Bump(0, (0.0, 0.0), 0.3, 0.1)])
    with pytest.raises(SpecError):
        m.perturbed(k)
    with pytest.raises(ValueError):
        perturb_to_generic(m, -1.0)


def test_neumann_ratio_sees_bump_depths(circle, rng):
    centers, r_b = covering_centers(circle)
    small = random_canonical_field(circle, centers, r_b, 1e-2, rng)
    large = random_canonical_field(circle, centers, r_b, 50.0, rng)
    assert 0 < neumann_ratio(circle, small) < 0.1
    assert neumann_ratio(circle, large) > 1.0
    with pytest.raises(SeriesDiverges):
        perturb_to_generic(circle, 50.0, seed=1)


@pytest.mark.parametrize("n, nu, m", [(1, 0, 3), (2, 1, 2), (2, 0, 3)])
def test_single_bump_norm_matches_grid(n, nu, m):
    # the factored norm equals the norm over the full tensor grid
    from boundarycurv.perturbation import Bump, CanonicalPerturbationField, support_norm
    from boundarycurv.tensors import ChartAtlas, ChartDomain, cm_norm

    center = tuple(0.1 * (a + 1) for a in range(n))
    field = CanonicalPerturbationField(n, [Bump(nu, center, 0.4, 0.2, coef=-1.5)], order=3)
    atlas = ChartAtlas([ChartDomain("support", center, 0.4, 0.2)])
    fast = support_norm(field, center, 0.4, 0.2, m, grid_res=17)
    assert fast == pytest.approx(cm_norm(field, atlas, m, 17), rel=1e-12)
