"""Cross-check suites behind ``boundarycurv validate``.

Each suite compares a formula against an independent computation (finite
differences, the embedding, dense inversion, closed forms) and returns a
:class:`~boundarycurv.report.ValidationTable`.
"""

from __future__ import annotations

import math

import numpy as np

from .critical import H_value, grad_H
from .geometry import PullbackField, mean_curvature, second_fundamental_form
from .jets import jet_space
from .manifolds import Manifold
from .perturbation import frechet_F_k
from .report import ValidationTable
from .tensors import (
    ChartAtlas,
    ConstantField,
    ExpressionField,
    cm_norm,
    euclidean,
    inverse_derivative,
    invert_at,
    neumann_bound,
    neumann_series,
    parse_field,
    random_polynomial_field,
    zero_field,
)
from .tolerances import DEFAULTS, Tolerances

SUITES = ("frechet", "escobar", "inverse", "neumann", "norm")


def _chart_points(chart, rng: np.random.Generator, count: int, frac: float = 0.8) -> np.ndarray:
    return rng.uniform(-frac * chart.radius, frac * chart.radius, size=(count, chart.dim))


def _metrics(manifold: Manifold, rng: np.random.Generator, count: int):
    """Alternate between the manifold's chart metrics and random polynomial metrics."""
    out = []
    for i in range(count):
        if i % 2 == 0:
            chart = manifold.charts[(i // 2) % len(manifold.charts)]
            x = _chart_points(chart, rng, 1)[0]
            out.append((f"chart {chart.name}", chart.metric, x))
        else:
            g = random_polynomial_field(manifold.dim, rng, scale=0.1)
            out.append(("random polynomial", g, rng.uniform(-0.3, 0.3, size=manifold.dim)))
    return out


# -- Frechet derivative ----------------------------------------------------------------


def frechet_errors(g, x, k, delta: float) -> tuple[float, float, float]:
    """Relative central-difference errors of ``grad_H`` along ``k`` at ``delta`` and ``delta / 2``.

    The third value estimates the rounding noise of the ``delta / 2``
    quotient, relative to ``|F'[k]|``: the quotient is recomputed at steps
    jittered by a few parts in a million, which leaves the truncation error
    unchanged to that order and reshuffles the rounding.
    """
    F = frechet_F_k(g, x, k)
    scale = max(float(np.linalg.norm(F)), np.finfo(float).tiny)

    def quotient(d):
        return (grad_H(g + k * d, x) - grad_H(g - k * d, x)) / (2 * d)

    half = quotient(0.5 * delta)
    e1 = float(np.linalg.norm(quotient(delta) - F)) / scale
    e2 = float(np.linalg.norm(half - F)) / scale
    noise = max(float(np.linalg.norm(quotient(0.5 * delta * (1 + j * 1e-6)) - half)) for j in (1, 2, 3))
    return e1, e2, noise / scale


def nonzero_direction(g, x, rng: np.random.Generator, scale: float = 0.5, tries: int = 20):
    """A random polynomial ``k`` with ``|F'[k]|`` well away from zero."""
    for _ in range(tries):
        k = random_polynomial_field(g.dim, rng, scale=scale, base_identity=False)
        if np.linalg.norm(frechet_F_k(g, x, k)) > 1e-3:
            return k
    return k


def suite_frechet(manifold: Manifold, seed: int, samples: int = 20, delta: float = 1e-4,
                  tol: Tolerances = DEFAULTS) -> ValidationTable:
    rng = np.random.default_rng(seed)
    table = ValidationTable("frechet")
    rel, dev, worst, skipped = [], [], "", 0
    for label, g, x in _metrics(manifold, rng, samples):
        k = nonzero_direction(g, x, rng)
        e1, e2, noise = frechet_errors(g, x, k, delta)
        rel.append(e1)
        # the second-order ratio is only visible well above the rounding noise
        if e2 > 10 * noise:
            dev.append(abs(e1 / e2 - 4.0) / 4.0)
        else:
            skipped += 1
        if e1 == max(rel):
            worst = label
    table.add("frechet.relative_error", max(rel), 1e-6, f"delta = {delta:g}, {samples} samples, worst on {worst}")
    if dev:
        table.add("frechet.second_order_ratio", max(dev), 0.2,
                  f"max |ratio/4 - 1| over {len(dev)} samples; {skipped} at the rounding noise skipped")
    else:
        table.add("frechet.second_order_ratio", math.nan, 0.2,
                  "not observable: every sample is at the rounding noise", passed=True)
    return table


# -- curvature relation --------------------------------------------------------------------


def embedded_second_fundamental_form(field: PullbackField, x) -> np.ndarray:
    """``<d_i d_j y, N>`` from the parametrization, ``N`` the inward unit normal (Euclidean ambient)."""
    spec = field.spec
    n = spec.dim
    sp = jet_space(n, 2)
    p = np.asarray(field.center, dtype=float) + np.asarray(x, dtype=float)
    pos = spec.position_jet(sp, p)
    T = np.stack([sp.derivative(pos, tuple(int(a == i) for a in range(n))) for i in range(n)])
    if n == 1:
        N = np.array([-T[0, 1], T[0, 0]])
    else:
        # cofactor normal: N_a = det of T with column a deleted, alternating signs
        N = np.array([(-1) ** (a + n) * np.linalg.det(np.delete(T, a, axis=1)) for a in range(n + 1)])
    N = spec.orientation * N / np.linalg.norm(N)
    h = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            beta = [0] * n
            beta[i] += 1
            beta[j] += 1
            h[i, j] = sp.derivative(pos, tuple(beta)) @ N
    return h


def suite_escobar(manifold: Manifold, seed: int, samples: int = 20, tol: Tolerances = DEFAULTS) -> ValidationTable:
    rng = np.random.default_rng(seed)
    table = ValidationTable("escobar")
    route, embed = 0.0, 0.0
    have_embed = False
    for chart in manifold.charts:
        base = getattr(chart.metric, "base", chart.metric)
        for x in _chart_points(chart, rng, max(1, samples // len(manifold.charts))):
            a = mean_curvature(chart, x, route="trace")
            b = mean_curvature(chart, x, route="contraction")
            route = max(route, abs(a - b) / max(1.0, abs(a)))
            if isinstance(base, PullbackField) and base.euclidean:
                have_embed = True
                h = second_fundamental_form(chart, x)
                embed = max(embed, float(np.abs(h - embedded_second_fundamental_form(base, x)).max()))
    table.add("escobar.trace_vs_contraction", route, tol.tau_lin, "H = tr(g^-1 h) against -1/2 g^ij g_ij,t")
    if have_embed:
        table.add("escobar.h_vs_embedding", embed, 1e-8, "-1/2 d_t g_ij against <d_ij y, N>")
    name = manifold.name
    if name in ("disk", "circle"):
        gerr, herr = 0.0, 0.0
        for chart in manifold.charts:
            for x in _chart_points(chart, rng, 8):
                for t in np.linspace(0.0, 0.9 * chart.depth, 5):
                    g = chart.metric.jet(np.append(x, t), 0)[..., 0]
                    gerr = max(gerr, abs(float(g[0, 0]) - (1.0 - t) ** 2))
                herr = max(herr, abs(float(second_fundamental_form(chart, x)[0, 0]) - 1.0))
        table.add("escobar.disk_g", gerr, 1e-8, "g(theta, t) = (1 - t)^2")
        table.add("escobar.disk_h", herr, 1e-8, "h(theta, 0) = 1")
    if name == "ball3":
        err = 0.0
        for chart in manifold.charts:
            for x in _chart_points(chart, rng, max(1, 100 // len(manifold.charts) + 1)):
                err = max(err, abs(H_value(chart.metric, x) - 2.0))
        table.add("escobar.ball_H", err, 1e-6, "H = 2 on the unit sphere")
    return table


# -- inverse derivative -------------------------------------------------------------------


def inverse_fd_errors(g, point, s: int, h: float) -> tuple[float, float]:
    """Max errors of central differences of ``g^-1`` in direction ``s`` at steps ``h`` and ``h / 2``."""
    exact = inverse_derivative(g, point, s)
    e = np.zeros(len(point))
    e[s] = 1.0
    errs = []
    for step in (h, 0.5 * h):
        plus = np.linalg.inv(g.jet(point + step * e, 0)[..., 0])
        minus = np.linalg.inv(g.jet(point - step * e, 0)[..., 0])
        errs.append(float(np.abs((plus - minus) / (2 * step) - exact).max()))
    return errs[0], errs[1]


def suite_inverse(manifold: Manifold, seed: int, samples: int = 20, h: float = 1e-3,
                  tol: Tolerances = DEFAULTS) -> ValidationTable:
    rng = np.random.default_rng(seed)
    table = ValidationTable("inverse")
    worst_err, worst_order = 0.0, math.inf
    n = manifold.dim
    for _, g, x in _metrics(manifold, rng, samples):
        p = np.append(x, 0.25 * rng.uniform())
        for s in range(n):
            e1, e2 = inverse_fd_errors(g, p, s, h)
            worst_err = max(worst_err, e1)
            if e2 > 1e-12:
                worst_order = min(worst_order, math.log2(e1 / e2))
    table.add("inverse.fd_error", worst_err, 1e-4, f"h = {h:g}")
    if math.isfinite(worst_order):
        table.add("inverse.convergence_order", worst_order, 1.9, f"observed order over h, h/2 (needs >= 1.9)",
                  passed=worst_order >= 1.9)
    return table


# -- Neumann series -------------------------------------------------------------------------


def random_spd(rng: np.random.Generator, n: int) -> np.ndarray:
    A = rng.normal(size=(n, n))
    return A @ A.T + 0.5 * np.eye(n)


def random_small_k(rng: np.random.Generator, g: np.ndarray, q_max: float = 0.5) -> np.ndarray:
    """Symmetric ``k`` with ``||g^-1 k||_op`` uniform in ``(0, q_max)``."""
    B = rng.normal(size=g.shape)
    k = 0.5 * (B + B.T)
    q = float(np.linalg.norm(np.linalg.solve(g, k), 2))
    return k * (rng.uniform(0.05, 0.999) * q_max / q)


def suite_neumann(manifold: Manifold, seed: int, samples: int = 50, tol: Tolerances = DEFAULTS) -> ValidationTable:
    rng = np.random.default_rng(seed)
    table = ValidationTable("neumann")
    n = manifold.dim
    worst = {lam: 0.0 for lam in (1, 2, 3)}
    for i in range(samples):
        if i % 2 == 0:
            chart = manifold.charts[(i // 2) % len(manifold.charts)]
            x = _chart_points(chart, rng, 1)[0]
            g = chart.metric.jet(np.append(x, 0.0), 0)[..., 0]
        else:
            g = random_spd(rng, n)
        k = random_small_k(rng, g)
        exact = np.linalg.inv(g + k)
        for lam in worst:
            err = float(np.linalg.norm(neumann_series(g, k, lam) - exact, 2))
            worst[lam] = max(worst[lam], err / neumann_bound(g, k, lam))
    for lam, ratio in worst.items():
        table.add(f"neumann.bound_lambda_{lam}", ratio, 1.0 + 1e-9,
                  "max truncation error / bound over samples with ||g^-1 k|| < 0.5")
    g = manifold.charts[0].metric.jet(np.zeros(n + 1), 0)[..., 0]
    err = float(np.abs(neumann_series(g, np.zeros((n, n)), 3) - invert_at(g)).max())
    table.add("neumann.k_zero", err, 0.0, "k = 0 returns g^-1 exactly")
    return table


# -- C^m norm ---------------------------------------------------------------------------------


def suite_norm(manifold: Manifold, seed: int, tol: Tolerances = DEFAULTS, m: int = 3) -> ValidationTable:
    rng = np.random.default_rng(seed)
    table = ValidationTable("norm")
    atlas = manifold.atlas
    n = manifold.dim
    per_chart = lambda f: {c.name: f for c in atlas.charts}  # noqa: E731
    table.add("norm.zero", cm_norm(per_chart(zero_field(n)), atlas, m, tol.grid_res), 0.0, "||0|| = 0")
    const = cm_norm(per_chart(euclidean(n)), atlas, m, tol.grid_res)
    table.add("norm.identity", abs(const - n * len(atlas.charts)), 1e-12, "||I|| = n per chart")
    # k_11 = x1 t: sup|k| = R T, sup|d_x k| = T, sup|d_t k| = R, d_x d_t k = 1
    comps = {(0, 0): "x1*t"}
    expected = sum(c.radius * c.depth + c.radius + c.depth + 1.0 for c in atlas.charts)
    got = cm_norm(per_chart(parse_field(comps, n)), atlas, m, tol.grid_res)
    table.add("norm.closed_form", abs(got - expected) / expected, 1e-12, "k_11 = x1 t")
    # nested grids on the first chart; a polynomial field keeps this cheap
    first = ChartAtlas([atlas.charts[0]], translation=False)
    k = {atlas.charts[0].name: random_polynomial_field(n, rng, scale=0.3, base_identity=False)}
    coarse = cm_norm(k, first, m, tol.grid_res)
    fine = cm_norm(k, first, m, 2 * tol.grid_res - 1)
    table.add("norm.nested_refinement", max(0.0, coarse - fine), 1e-12 * max(1.0, fine),
              f"grid {tol.grid_res} -> {2 * tol.grid_res - 1} never decreases the bound")
    return table


def run_suite(name: str, manifold: Manifold, seed: int = 0, tol: Tolerances = DEFAULTS) -> ValidationTable:
    if name == "frechet":
        return suite_frechet(manifold, seed, tol=tol)
    if name == "escobar":
        return suite_escobar(manifold, seed, tol=tol)
    if name == "inverse":
        return suite_inverse(manifold, seed, tol=tol)
    if name == "neumann":
        return suite_neumann(manifold, seed, tol=tol)
    if name == "norm":
        return suite_norm(manifold, seed, tol=tol)
    raise ValueError(f"unknown suite {name!r}; choose from {', '.join(SUITES)}")


__all__ = [
    "SUITES",
    "embedded_second_fundamental_form",
    "frechet_errors",
    "inverse_fd_errors",
    "random_small_k",
    "random_spd",
    "run_suite",
    "suite_escobar",
    "suite_frechet",
    "suite_inverse",
    "suite_neumann",
    "suite_norm",
]
