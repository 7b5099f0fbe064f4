"""Fermi charts, the pullback of an ambient geometry, and boundary curvature.

A Fermi chart places a boundary point at ``x`` and walks a unit-speed
geodesic a distance ``t`` along the inward normal. In these coordinates the
metric is ``dt^2 + g_ij(x, t) dx^i dx^j``, the second fundamental form of the
level set ``{t = const}`` is ``h_ij = -1/2 d_t g_ij``, and the mean curvature
is its trace ``H = g^ij h_ij``. With the inward normal the unit ball has
``H = n > 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field, replace
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

from . import expr
from .errors import DomainError, FocalPoint, IntegratorDiverged, NotSPD
from .jets import Jet, JetSpace, jet_space
from .tensors import (
    DEFAULT_ORDER,
    FieldDomain,
    MultiIndex,
    SymTensorField,
    invert_at,
)
from .tolerances import SPD_FLOOR, TAU_GAUSS


# -- ambient description -----------------------------------------------------


class AmbientMetric:
    """Riemannian metric on the ambient space, given as expressions in ``y1..y_{n+1}``."""

    def __init__(self, dim: int, components: dict[tuple[int, int], expr.Node]):
        self.dim = dim
        self.names = tuple(f"y{a + 1}" for a in range(dim))
        comps = {}
        for (a, b), node in components.items():
            comps[(min(a, b), max(a, b))] = node
        self.components = comps
        self.partials = {
            c: {key: node.diff(self.names[c]) for key, node in comps.items()} for c in range(dim)
        }

    @classmethod
    def parse(cls, dim: int, texts: dict) -> "AmbientMetric":
        names = tuple(f"y{a + 1}" for a in range(dim))
        comps = {}
        for key, text in texts.items():
            if isinstance(key, str):
                a, b = int(key[-2]) - 1, int(key[-1]) - 1
            else:
                a, b = key
            comps[(a, b)] = expr.parse(text, names)
        return cls(dim, comps)

    @staticmethod
    def _assemble(space: JetSpace, nodes: dict, env: dict, batch, dim: int) -> np.ndarray:
        out = np.zeros(batch + (dim, dim, space.size))
        for (a, b), node in nodes.items():
            v = node.evaluate(env)
            c = v.c if isinstance(v, Jet) else space.constant(v, batch)
            out[..., a, b, :] = c
            out[..., b, a, :] = c
        return out

    def at(self, space: JetSpace, position: np.ndarray) -> np.ndarray:
        """``G_ab`` composed with a position jet of shape ``(..., D, N)``."""
        env = {nm: Jet(space, position[..., a, :]) for a, nm in enumerate(self.names)}
        return self._assemble(space, self.components, env, position.shape[:-2], self.dim)

    def partials_at(self, space: JetSpace, position: np.ndarray) -> np.ndarray:
        """``d_c G_ab`` composed with a position jet; shape ``(..., D(c), D(a), D(b), N)``."""
        env = {nm: Jet(space, position[..., a, :]) for a, nm in enumerate(self.names)}
        batch = position.shape[:-2]
        return np.stack(
            [self._assemble(space, self.partials[c], env, batch, self.dim) for c in range(self.dim)],
            axis=-4,
        )


@dataclass
class AmbientBoundarySpec:
    """Boundary given by a parametrization into ``R^{n+1}``.

    ``parametrization`` holds ``n + 1`` expressions in the parameters
    ``x1..xn``. ``orientation`` multiplies the cofactor normal (the left
    normal of a plane curve, ``d1 x d2`` for a surface) so that it points into
    the manifold. ``ambient_metric`` of ``None`` means Euclidean.
    """

    dim: int
    parametrization: tuple[expr.Node, ...]
    orientation: int = 1
    ambient_metric: AmbientMetric | None = None
    lower: tuple[float, ...] | None = None
    upper: tuple[float, ...] | None = None
    period: tuple[float | None, ...] | None = None

    def __post_init__(self):
        if len(self.parametrization) != self.dim + 1:
            raise ValueError("parametrization needs n + 1 components")
        if self.orientation not in (1, -1):
            raise ValueError("orientation must be +1 or -1")

    @classmethod
    def parse(cls, dim: int, texts: Sequence[str], **kwargs) -> "AmbientBoundarySpec":
        names = tuple(f"x{i + 1}" for i in range(dim))
        return cls(dim, tuple(expr.parse(t, names) for t in texts), **kwargs)

    def position_jet(self, space: JetSpace, params: np.ndarray) -> np.ndarray:
        """Jets of the embedding at ``params`` (shape ``(..., n)``); result ``(..., n+1, N)``."""
        batch = params.shape[:-1]
        env = {f"x{i + 1}": Jet.variable(space, params[..., i], i) for i in range(self.dim)}
        out = np.zeros(batch + (self.dim + 1, space.size))
        for a, node in enumerate(self.parametrization):
            v = node.evaluate(env)
            out[..., a, :] = v.c if isinstance(v, Jet) else space.constant(v, batch)
        return out

    def point(self, params) -> np.ndarray:
        env = {f"x{i + 1}": float(p) for i, p in enumerate(np.atleast_1d(params))}
        return np.array([float(node.evaluate(env)) for node in self.parametrization])

    def check_immersion(self, params: np.ndarray) -> float:
        """Smallest singular value of the parametrization Jacobian over ``params``."""
        sp = jet_space(self.dim + 1, 1)
        pos = self.position_jet(sp, np.atleast_2d(params))
        jac = pos[..., 1 : 1 + self.dim]
        return float(np.linalg.svd(jac, compute_uv=False).min())


# -- jet helpers -----------------------------------------------------------------


def _det(space: JetSpace, m: list[list[np.ndarray]]) -> np.ndarray:
    k = len(m)
    if k == 1:
        return m[0][0]
    if k == 2:
        return space.mul(m[0][0], m[1][1]) - space.mul(m[0][1], m[1][0])
    total = 0.0
    for j in range(k):
        minor = [row[:j] + row[j + 1 :] for row in m[1:]]
        term = space.mul(m[0][j], _det(space, minor))
        total = total + (term if j % 2 == 0 else -term)
    return total


def cofactor_normal(space: JetSpace, tangents: np.ndarray) -> np.ndarray:
    """Generalized cross product of ``n`` tangent jets ``(..., n, n+1, N)``; result ``(..., n+1, N)``.

    For a plane curve this is the left normal ``(-T_2, T_1)``; for a surface
    in space it is ``T_1 x T_2``.
    """
    n = tangents.shape[-3]
    comps = []
    for a in range(n + 1):
        rows = [b for b in range(n + 1) if b != a]
        minor = [[tangents[..., i, b, :] for i in range(n)] for b in rows]
        sign = -1.0 if (a + n) % 2 else 1.0
        comps.append(sign * _det(space, minor))
    return np.stack(comps, axis=-2)


def _dot(space: JetSpace, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    return space.mul(u, v).sum(axis=-2)


# -- pulled-back metric ----------------------------------------------------------


class PullbackField(SymTensorField):
    """Tangential Fermi block ``g_ij(x, t)`` of an ambient boundary spec.

    Chart coordinates are ``x = params - center``. With a Euclidean ambient
    space the normal geodesics are straight lines and the jets are exact.
    Otherwise the geodesic system is integrated with fixed-step RK4 carried
    out in jet arithmetic, so x-derivatives come out of the integrator
    exactly; t-derivatives at the end point come from Picard iteration of the
    geodesic equations on jets.
    """

    def __init__(
        self,
        spec: AmbientBoundarySpec,
        center,
        order: int = DEFAULT_ORDER,
        h_geo: float = 1e-2,
        domain: FieldDomain | None = None,
    ):
        self.spec = spec
        self.dim = spec.dim
        self.order = order
        self.center = np.asarray(center, dtype=float)
        self.h_geo = h_geo
        self.domain = domain
        self.euclidean = spec.ambient_metric is None
        self.provenance = "fermi-pullback/exact-ad" if self.euclidean else "fermi-pullback/rk4-ad"

    def _jet(self, pts, order):
        g, _, _ = self.frame(pts, order)
        return g

    def frame(self, pts, order: int):
        """Jets of ``(g_ij, g_it, g_tt)`` at chart points ``pts``."""
        pts = np.asarray(pts, dtype=float)
        if self.euclidean:
            out = self._euclidean_frame(pts, order)
        else:
            out = self._riemannian_frame(pts, order)
        g = out[0]
        if not np.all(np.isfinite(g)):
            raise IntegratorDiverged("non-finite values in the pulled-back metric")
        det = np.linalg.det(g[..., 0]) if self.dim > 0 else None
        if np.any(det <= SPD_FLOOR):
            raise FocalPoint("normal map degenerates (focal point) inside the requested depth")
        return out

    def _euclidean_frame(self, pts, order):
        # the boundary data do not depend on t: work in n-variable jets, lift at the end
        n, d = self.dim, self.dim + 1
        hi = jet_space(n, order + 2)
        mid = jet_space(n, order + 1)
        low = jet_space(n, order)
        sp = jet_space(d, order)
        params = pts[..., :n] + self.center
        gamma = self.spec.position_jet(hi, params)
        tangents = np.stack([hi.diff(gamma, i) for i in range(n)], axis=-3)
        nu = cofactor_normal(mid, tangents) * self.spec.orientation
        inv_len = mid.powf(_dot(mid, nu, nu), -0.5)
        normal = mid.mul(nu, inv_len[..., None, :])
        dN = np.stack([mid.diff(normal, i) for i in range(n)], axis=-3)
        tang = low.lift(mid.truncate(tangents, order), sp)
        dN = low.lift(dN, sp)
        nrm = low.lift(mid.truncate(normal, order), sp)
        tvar = sp.variable(pts[..., n], n)
        dP = tang + sp.mul(tvar[..., None, None, :], dN)
        g = sp.mul(dP[..., :, None, :, :], dP[..., None, :, :, :]).sum(axis=-2)
        g_it = sp.mul(dP, nrm[..., None, :, :]).sum(axis=-2)
        g_tt = _dot(sp, nrm, nrm)
        return g, g_it, g_tt

    def _acceleration(self, sp: JetSpace, pos: np.ndarray, vel: np.ndarray) -> np.ndarray:
        metric = self.spec.ambient_metric
        G = metric.at(sp, pos)
        dG = metric.partials_at(sp, pos)  # (..., c, a, b, N)
        vv = sp.mul(vel[..., :, None, :], vel[..., None, :, :])  # (..., b, c, N)
        # w_d = sum_bc (d_b G_dc - 1/2 d_d G_bc) v^b v^c
        t1 = sp.mul(dG, vv[..., :, None, :, :]).sum(axis=(-4, -2))
        t2 = sp.mul(dG, vv[..., None, :, :, :]).sum(axis=(-3, -2))
        w = t1 - 0.5 * t2
        Ginv = sp.matinv(G)
        return -sp.matmul(Ginv, w[..., :, None, :])[..., 0, :]

    def _riemannian_frame(self, pts, order):
        n, d = self.dim, self.dim + 1
        metric = self.spec.ambient_metric
        hi = jet_space(d, order + 2)
        sp1 = jet_space(d, order + 1)
        sp = jet_space(d, order)
        params = pts[..., :n] + self.center
        t0 = pts[..., n]
        gamma = self.spec.position_jet(hi, params)
        tangents = np.stack([hi.diff(gamma, i) for i in range(n)], axis=-3)
        pos = hi.truncate(gamma, order + 1)
        nu = cofactor_normal(sp1, tangents) * self.spec.orientation
        Ginv = sp1.matinv(metric.at(sp1, pos))
        up = sp1.matmul(Ginv, nu[..., :, None, :])[..., 0, :]
        inv_len = sp1.powf(_dot(sp1, nu, up), -0.5)
        vel = sp1.mul(up, inv_len[..., None, :])

        tmax = float(np.max(t0)) if t0.size else 0.0
        steps = int(math.ceil(tmax / self.h_geo - 1e-12)) if tmax > 0 else 0
        if steps:
            h = (t0 / steps)[..., None, None]
            f = lambda p, v: (v, self._acceleration(sp1, p, v))
            for _ in range(steps):
                k1p, k1v = f(pos, vel)
                k2p, k2v = f(pos + 0.5 * h * k1p, vel + 0.5 * h * k1v)
                k3p, k3v = f(pos + 0.5 * h * k2p, vel + 0.5 * h * k2v)
                k4p, k4v = f(pos + h * k3p, vel + h * k3v)
                pos = pos + h / 6.0 * (k1p + 2 * k2p + 2 * k3p + k4p)
                vel = vel + h / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
                if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(vel))):
                    raise IntegratorDiverged("geodesic integration produced non-finite state")

        # Picard iteration supplies the t-expansion around the end point.
        p0, v0 = pos, vel
        for _ in range(order + 2):
            acc = self._acceleration(sp1, pos, vel)
            pos, vel = p0 + sp1.integrate(vel, n), v0 + sp1.integrate(acc, n)

        dP = np.stack([sp1.diff(pos, i) for i in range(n)], axis=-3)
        pos_lo = sp1.truncate(pos, order)
        vel_lo = sp1.truncate(vel, order)
        G = metric.at(sp, pos_lo)
        Gd = sp.matmul(G[..., None, :, :, :], dP[..., :, :, None, :])[..., 0, :]  # (..., i, a, N)
        g = sp.mul(Gd[..., :, None, :, :], dP[..., None, :, :, :]).sum(axis=-2)
        g_it = sp.mul(Gd, vel_lo[..., None, :, :]).sum(axis=-2)
        Gv = sp.matmul(G, vel_lo[..., :, None, :])[..., 0, :]
        g_tt = _dot(sp, Gv, vel_lo)
        return g, g_it, g_tt

    def embedding(self, x) -> np.ndarray:
        return self.spec.point(self.center + np.asarray(x, dtype=float))


# -- charts --------------------------------------------------------------------------


@dataclass
class FermiChart:
    """A boundary chart ``|x|_inf <= radius``, ``0 <= t <= depth`` with its metric block."""

    name: str
    center: tuple[float, ...]
    radius: float
    depth: float
    metric: SymTensorField
    embed: Callable | None = None
    provenance: str = ""
    gauge_residual: float | None = None
    notes: list[str] = dc_field(default_factory=list)

    @property
    def dim(self) -> int:
        return len(self.center)

    @property
    def local_domain(self) -> FieldDomain:
        n = self.dim
        return FieldDomain((-self.radius,) * n, (self.radius,) * n, self.depth)

    def contains(self, x, t: float = 0.0, slack: float = 1e-12) -> bool:
        return self.local_domain.contains(np.append(np.asarray(x, dtype=float), t), slack)

    def to_global(self, x) -> np.ndarray:
        return np.asarray(self.center, dtype=float) + np.asarray(x, dtype=float)

    def embedding(self, x) -> np.ndarray | None:
        return None if self.embed is None else np.asarray(self.embed(np.asarray(x, dtype=float)))

    def with_metric(self, metric: SymTensorField, provenance: str | None = None) -> "FermiChart":
        return replace(self, metric=metric.with_domain(self.local_domain), provenance=provenance or self.provenance)


def _point(chart: FermiChart, x, t: float) -> np.ndarray:
    p = np.append(np.asarray(x, dtype=float).reshape(-1), float(t))
    if p.shape != (chart.dim + 1,):
        raise ValueError("wrong point dimension")
    if not chart.local_domain.contains(p):
        raise DomainError(f"point {p.tolist()} outside chart {chart.name!r}")
    return p


def principal_curvatures(chart: FermiChart, x, t: float = 0.0) -> np.ndarray:
    """Eigenvalues of ``h`` relative to ``g`` (sorted ascending)."""
    p = _point(chart, x, t)
    sp = chart.metric.space(1)
    j = chart.metric.jet(p, 1)
    g = j[..., 0]
    h = -0.5 * sp.derivative(j, MultiIndex.of(chart.dim, chart.dim).exponents)
    invert_at(g)
    return scipy.linalg.eigh(h, g, eigvals_only=True)


def gauge_residual(chart: FermiChart, points) -> float:
    """max(|g_it|, |g_tt - 1|) over points for pulled-back charts; 0 for Fermi-form fields."""
    metric = chart.metric
    base = getattr(metric, "base", metric)
    if not isinstance(base, PullbackField):
        return 0.0
    _, g_it, g_tt = base.frame(np.asarray(points, dtype=float), 0)
    return float(max(np.abs(g_it[..., 0]).max(), np.abs(g_tt[..., 0] - 1.0).max()))


def fermi_pullback(
    spec: AmbientBoundarySpec,
    center,
    R: float,
    T: float,
    h_geo: float | None = None,
    name: str = "chart",
    order: int = DEFAULT_ORDER,
    clamp_samples: int = 5,
    tau_gauss: float = TAU_GAUSS,
) -> FermiChart:
    """Build the Fermi chart of radius ``R`` and depth ``T`` around parameters ``center``.

    ``T`` is clamped to ``0.9 / max |kappa|`` over a sample grid to stay clear
    of focal points, and the gauge structure ``g_tt = 1``, ``g_it = 0`` is
    verified at sample points.
    """
    center = np.asarray(center, dtype=float).reshape(-1)
    n = spec.dim
    if len(center) != n:
        raise ValueError("center must have n coordinates")
    if R <= 0 or T <= 0:
        raise ValueError("R and T must be positive")
    h = T / 200.0 if h_geo is None else h_geo
    axes = [np.linspace(-R, R, clamp_samples)] * n
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    if spec.check_immersion(grid + center) <= 1e-12:
        raise DomainError("parametrization is not an immersion on the chart")
    field = PullbackField(spec, center, order=order, h_geo=h)
    notes = []
    probe = FermiChart(name, tuple(center), R, T, field)
    kmax = max(np.abs(principal_curvatures(probe, x)).max() for x in grid)
    if kmax > 0 and T > 0.9 / kmax:
        notes.append(f"depth clamped from {T:.6g} to {0.9 / kmax:.6g} (focal-point guard)")
        T = 0.9 / kmax
    field.h_geo = T / 200.0 if h_geo is None else h_geo
    domain = FieldDomain((-R,) * n, (R,) * n, T)
    field.domain = domain
    chart = FermiChart(
        name,
        tuple(float(c) for c in center),
        float(R),
        float(T),
        field,
        embed=field.embedding,
        provenance=field.provenance,
        notes=notes,
    )
    samples = np.concatenate(
        [np.concatenate([grid, np.full((len(grid), 1), tt)], axis=1) for tt in (0.0, 0.5 * T)]
    )
    chart.gauge_residual = gauge_residual(chart, samples)
    if chart.gauge_residual > tau_gauss:
        notes.append(f"gauge residual {chart.gauge_residual:.3e} exceeds {tau_gauss:.1e}")
    return chart


def second_fundamental_form(chart: FermiChart, x, t: float = 0.0) -> np.ndarray:
    """``h_ij(x, t) = -1/2 d_t g_ij(x, t)``."""
    p = _point(chart, x, t)
    sp = chart.metric.space(1)
    return -0.5 * sp.derivative(chart.metric.jet(p, 1), MultiIndex.of(chart.dim, chart.dim).exponents)


def mean_curvature(chart: FermiChart, x, t: float = 0.0, route: str = "trace") -> float:
    """Mean curvature of the level set ``{t}`` at ``x``.

    ``route="trace"`` solves ``g X = h`` and takes ``tr X``; ``route="contraction"``
    forms ``-1/2 g^ij d_t g_ij`` with the explicit inverse.
    """
    p = _point(chart, x, t)
    sp = chart.metric.space(1)
    j = chart.metric.jet(p, 1)
    g = j[..., 0]
    gt = sp.derivative(j, MultiIndex.of(chart.dim, chart.dim).exponents)
    if route == "trace":
        invert_at(g)
        return float(np.trace(np.linalg.solve(g, -0.5 * gt)))
    if route == "contraction":
        return float(-0.5 * np.sum(invert_at(g) * gt))
    raise ValueError(f"unknown route {route!r}")
