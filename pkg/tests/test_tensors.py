import numpy as np
import pytest
import sympy
from hypothesis import given, settings, strategies as st

from boundarycurv.errors import DomainError, NotSPD, OrderExceeded, ParseError, SeriesDiverges
from boundarycurv.tensors import (
    ChartAtlas,
    FieldDomain,
    MetricField,
    MultiIndex,
    cm_norm,
    euclidean,
    eval_tensor,
    invert_at,
    inverse_derivative,
    neumann_bound,
    neumann_inverse,
    neumann_series,
    parse_field,
    random_polynomial_field,
    zero_field,
)


def _random_spd(rng, n, floor=0.5):
    a = rng.normal(size=(n, n))
    return a @ a.T + floor * np.eye(n)


def test_euclidean_value_and_derivatives():
    g = euclidean(2)
    p = [0.3, -1.2, 0.1]
    assert np.array_equal(eval_tensor(g, p, MultiIndex.zero(2)), np.eye(2))
    for beta in [(1, 0, 0), (0, 0, 1), (1, 1, 1), (0, 2, 1)]:
        assert np.array_equal(eval_tensor(g, p, beta), np.zeros((2, 2)))


def test_t_derivative_of_square():
    g = parse_field("(1 - t)^2", 1)
    assert eval_tensor(g, [0.4, 0.0], (0, 1))[0, 0] == pytest.approx(-2.0, abs=1e-15)
    # symbolic oracle over a few points
    x, t = sympy.symbols("x t")
    dt = sympy.diff((1 - t) ** 2, t)
    for tv in [0.0, 0.25, 0.5]:
        assert eval_tensor(g, [0.0, tv], (0, 1))[0, 0] == pytest.approx(float(dt.subs(t, tv)), abs=1e-14)


def test_order_and_domain_errors():
    g = parse_field("1 + x1^2", 1, order=2)
    with pytest.raises(OrderExceeded):
        eval_tensor(g, [0.0, 0.0], (3, 0))
    boxed = parse_field("1", 1, domain=FieldDomain((-1.0,), (1.0,), 0.5))
    with pytest.raises(DomainError):
        eval_tensor(boxed, [2.0, 0.0], (0, 0))
    with pytest.raises(DomainError):
        eval_tensor(boxed, [0.0, 0.6], (0, 0))


def test_parse_field_errors():
    with pytest.raises(ParseError) as err:
        parse_field("sin(x1) +", 1)
    assert err.value.offset == 9


@settings(max_examples=40)
@given(st.integers(0, 2**32 - 1), st.lists(st.integers(0, 2), min_size=0, max_size=3))
def test_eval_symmetric(seed, axes):
    rng = np.random.default_rng(seed)
    g = random_polynomial_field(2, rng)
    beta = MultiIndex.of(2, *axes)
    m = eval_tensor(g, rng.uniform(-1, 1, 3), beta)
    assert np.array_equal(m, m.T)


def test_polynomial_derivatives_exact():
    # 3 x1^2 t - 2 x1 t^3: closed-form partials
    g = parse_field("3*x1^2*t - 2*x1*t^3", 1)
    x, t = 0.7, 0.3
    cases = {
        (1, 0): 6 * x * t - 2 * t**3,
        (0, 1): 3 * x**2 - 6 * x * t**2,
        (2, 0): 6 * t,
        (1, 1): 6 * x - 6 * t**2,
        (0, 2): -12 * x * t,
        (2, 1): 6.0,
        (1, 2): -12 * t,
        (0, 3): -12 * x,
        (3, 0): 0.0,
    }
    for beta, want in cases.items():
        assert eval_tensor(g, [x, t], beta)[0, 0] == pytest.approx(want, rel=1e-14, abs=1e-14)


def test_invert_at_examples(rng):
    assert np.array_equal(invert_at(np.eye(3)), np.eye(3))
    assert np.allclose(invert_at(np.diag([4.0, 1.0])), np.diag([0.25, 1.0]), rtol=0, atol=1e-16)
    for _ in range(50):
        g = _random_spd(rng, 3)
        assert np.linalg.norm(g @ invert_at(g) - np.eye(3)) < 1e-12


def test_invert_at_rejects():
    with pytest.raises(NotSPD):
        invert_at(np.diag([1.0, -1.0]))
    with pytest.raises(NotSPD):
        invert_at(np.diag([1.0, 1e-11]))
    with pytest.raises(NotSPD):
        invert_at(np.array([[1.0, 0.2], [0.0, 1.0]]))


def test_inverse_derivative_examples():
    assert np.array_equal(inverse_derivative(euclidean(2), [0.1, 0.2, 0.0], 1), np.zeros((2, 2)))
    g = parse_field("1 + x1^2", 1)
    assert inverse_derivative(g, [1.0, 0.0], 0)[0, 0] == pytest.approx(-0.5, abs=1e-15)
    with pytest.raises(ValueError):
        inverse_derivative(g, [1.0, 0.0], 1)


def test_inverse_derivative_fd_order(rng):
    orders = []
    for _ in range(20):
        g = random_polynomial_field(2, rng)
        p = np.array([*rng.uniform(-0.5, 0.5, 2), rng.uniform(0, 0.3)])
        s = int(rng.integers(0, 2))
        exact = inverse_derivative(g, p, s)
        errs = []
        for h in (1e-3, 5e-4):
            e = np.zeros(3)
            e[s] = h
            fd = (invert_at(eval_tensor(g, p + e, (0, 0, 0))) - invert_at(eval_tensor(g, p - e, (0, 0, 0)))) / (2 * h)
            errs.append(np.abs(fd - exact).max())
        if errs[1] > 1e-11:
            orders.append(np.log2(errs[0] / errs[1]))
    assert orders and min(orders) >= 1.9


def test_neumann_examples():
    assert np.array_equal(neumann_series(np.diag([2.0, 4.0]), np.zeros((2, 2)), 3), np.diag([0.5, 0.25]))
    v = neumann_series([[1.0]], [[0.1]], 2)[0, 0]
    assert v == pytest.approx(0.91, abs=1e-15)
    assert abs(v - 1 / 1.1) < 1e-3
    with pytest.raises(SeriesDiverges):
        neumann_series([[1.0]], [[1.0]], 2)
    with pytest.raises(ValueError):
        neumann_series([[1.0]], [[0.1]], 0)


def test_neumann_field_form():
    g = parse_field("2 + x1^2", 1)
    k = parse_field("0.1*cos(x1)", 1)
    got = neumann_inverse(g, k, [0.5, 0.0], 6)[0, 0]
    exact = 1 / (2.25 + 0.1 * np.cos(0.5))
    assert got == pytest.approx(exact, abs=1e-9)


@settings(max_examples=60)
@given(st.integers(0, 2**32 - 1), st.integers(1, 3), st.integers(1, 3))
def test_neumann_within_bound(seed, n, lam):
    rng = np.random.default_rng(seed)
    g = _random_spd(rng, n)
    k = rng.normal(size=(n, n))
    k = k + k.T
    q = np.linalg.norm(np.linalg.solve(g, k), 2)
    k *= rng.uniform(0.05, 0.45) / q
    err = np.linalg.norm(neumann_series(g, k, lam) - np.linalg.inv(g + k), 2)
    assert err <= neumann_bound(g, k, lam) * (1 + 1e-9) + 1e-15


def test_neumann_error_shrinks_by_q(rng):
    for _ in range(50):
        g = _random_spd(rng, 3)
        k = rng.normal(size=(3, 3))
        k = k + k.T
        k *= rng.uniform(0.05, 0.49) / np.linalg.norm(np.linalg.solve(g, k), 2)
        q = np.linalg.norm(np.linalg.solve(g, k), 2)
        direct = np.linalg.inv(g + k)
        errs = [np.linalg.norm(neumann_series(g, k, lam) - direct, 2) for lam in (1, 2, 3, 4)]
        for a, b in zip(errs, errs[1:]):
            assert b <= 1.1 * q * a + 1e-15


def test_metric_field_validation():
    pts = np.array([[x, t] for x in np.linspace(-1, 1, 5) for t in (0.0, 0.5)])
    m = MetricField.validate(parse_field("2 + x1", 1), pts)
    assert m.spd_margin == pytest.approx(1.0)
    with pytest.raises(NotSPD):
        MetricField.validate(parse_field("x1", 1), pts)


def test_cm_norm_examples():
    box = ChartAtlas.box([0.0], [1.0], 1.0)
    assert cm_norm(zero_field(1), box, 2) == 0.0
    assert cm_norm(parse_field("1", 1), box, 3) == pytest.approx(1.0)
    assert cm_norm(parse_field("x1", 1), box, 1) == pytest.approx(2.0)
    # off-diagonal entries count twice
    k = parse_field({"g12": "1"}, 2)
    assert cm_norm(k, ChartAtlas.box([0, 0], [1, 1], 1.0), 1) == pytest.approx(2.0)


def test_cm_norm_homogeneous_and_subadditive(rng):
    box = ChartAtlas.box([0, 0], [1, 1], 0.5)
    for _ in range(5):
        a = random_polynomial_field(2, rng, base_identity=False)
        b = random_polynomial_field(2, rng, base_identity=False)
        na, nb = cm_norm(a, box, 2, grid_res=9), cm_norm(b, box, 2, grid_res=9)
        assert cm_norm(-2.5 * a, box, 2, grid_res=9) == pytest.approx(2.5 * na, rel=1e-12)
        assert cm_norm(a + b, box, 2, grid_res=9) <= na + nb + 1e-12


def test_cm_norm_nested_grids_monotone(rng):
    box = ChartAtlas.box([0], [1], 1.0)
    k = random_polynomial_field(1, rng, base_identity=False)
    values = [cm_norm(k, box, 2, grid_res=r) for r in (3, 5, 9, 17, 33)]
    assert all(b >= a - 1e-15 for a, b in zip(values, values[1:]))


def test_cm_norm_order_checked():
    with pytest.raises(OrderExceeded):
        cm_norm(parse_field("x1", 1, order=2), ChartAtlas.box([0], [1], 1.0), 3)
    with pytest.raises(ValueError):
        cm_norm(parse_field("x1", 1), ChartAtlas.box([0], [1], 1.0), 1, grid_res=1)
