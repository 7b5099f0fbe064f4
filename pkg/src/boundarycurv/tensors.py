"""Symmetric 2-tensor fields on Fermi charts and the linear algebra around them.

Fields live on coordinates ``(x_1, ..., x_n, t)`` and only carry the
tangential ``n x n`` block; the Fermi normal block (``g_tt = 1``,
``g_it = 0``) is implicit. Every field produces jets (see :mod:`.jets`) so
partial derivatives of any order up to the field's smoothness are exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Mapping, Sequence

import numpy as np

from . import expr
from .errors import DomainError, NotSPD, OrderExceeded, SeriesDiverges
from .jets import Jet, JetSpace, jet_space
from .tolerances import SPD_FLOOR, TAU_LIN

DEFAULT_ORDER = 3


@dataclass(frozen=True)
class MultiIndex:
    """Exponents over ``(x_1, ..., x_n, t)``."""

    exponents: tuple[int, ...]

    def __post_init__(self):
        if any(e < 0 for e in self.exponents):
            raise ValueError("multi-index exponents must be nonnegative")

    @property
    def order(self) -> int:
        return sum(self.exponents)

    @classmethod
    def zero(cls, n: int) -> "MultiIndex":
        return cls((0,) * (n + 1))

    @classmethod
    def of(cls, n: int, *axes: int) -> "MultiIndex":
        """Multi-index for the mixed partial along ``axes`` (axis ``n`` is t)."""
        e = [0] * (n + 1)
        for a in axes:
            e[a] += 1
        return cls(tuple(e))


@dataclass(frozen=True)
class FieldDomain:
    """Coordinate box ``lower <= x <= upper`` with ``0 <= t <= depth``."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    depth: float

    def contains(self, point, slack: float = 1e-12) -> bool:
        p = np.asarray(point, dtype=float)
        x, t = p[..., :-1], p[..., -1]
        ok = np.all(x >= np.asarray(self.lower) - slack, axis=-1) & np.all(
            x <= np.asarray(self.upper) + slack, axis=-1
        )
        ok &= (t >= -slack) & (t <= self.depth + slack)
        return bool(np.all(ok))


class SymTensorField:
    """Base class. Subclasses implement :meth:`_jet`."""

    dim: int
    order: int
    provenance: str = "builtin"
    domain: FieldDomain | None = None

    def jet(self, points, order: int | None = None) -> np.ndarray:
        """Taylor jets of all components at ``points`` (shape ``(..., n+1)``).

        Returns an array of shape ``(..., n, n, N)`` over ``jet_space(n+1, order)``.
        """
        order = self.order if order is None else order
        if order > self.order:
            raise OrderExceeded(f"requested order {order} exceeds field order {self.order}")
        pts = np.asarray(points, dtype=float)
        if pts.shape[-1] != self.dim + 1:
            raise ValueError(f"points must have {self.dim + 1} coordinates, got {pts.shape[-1]}")
        return self._jet(pts, order)

    def space(self, order: int | None = None) -> JetSpace:
        return jet_space(self.dim + 1, self.order if order is None else order)

    def _jet(self, pts: np.ndarray, order: int) -> np.ndarray:
        raise NotImplementedError

    def __add__(self, other: "SymTensorField") -> "SymTensorField":
        return SumField(self, other)

    def __mul__(self, c: float) -> "SymTensorField":
        return ScaledField(self, float(c))

    __rmul__ = __mul__

    def __neg__(self):
        return ScaledField(self, -1.0)

    def __sub__(self, other):
        return SumField(self, ScaledField(other, -1.0))

    def with_domain(self, domain: FieldDomain | None) -> "SymTensorField":
        return DomainField(self, domain)


class ConstantField(SymTensorField):
    def __init__(self, matrix, order: int = DEFAULT_ORDER, domain: FieldDomain | None = None):
        m = np.atleast_2d(np.asarray(matrix, dtype=float))
        if m.shape[0] != m.shape[1] or not np.array_equal(m, m.T):
            raise ValueError("constant field needs a symmetric square matrix")
        self.matrix = m
        self.dim = m.shape[0]
        self.order = order
        self.domain = domain
        self.provenance = "builtin"

    def _jet(self, pts, order):
        sp = jet_space(self.dim + 1, order)
        out = np.zeros(pts.shape[:-1] + (self.dim, self.dim, sp.size))
        out[..., 0] = self.matrix
        return out


def euclidean(n: int, order: int = DEFAULT_ORDER) -> ConstantField:
    return ConstantField(np.eye(n), order)


def zero_field(n: int, order: int = DEFAULT_ORDER) -> ConstantField:
    return ConstantField(np.zeros((n, n)), order)


class ExpressionField(SymTensorField):
    """Components given as expression trees in ``x1..xn, t``."""

    def __init__(
        self,
        dim: int,
        components: Mapping[tuple[int, int], expr.Node],
        order: int = DEFAULT_ORDER,
        domain: FieldDomain | None = None,
        texts: Mapping[tuple[int, int], str] | None = None,
    ):
        self.dim = dim
        self.order = order
        self.domain = domain
        self.provenance = "expression-text"
        comps = {}
        for (i, j), node in components.items():
            key = (min(i, j), max(i, j))
            if key in comps and comps[key] != node:
                raise ValueError(f"conflicting expressions for component {key}")
            comps[key] = node
        self.components = comps
        self.texts = dict(texts or {})
        self._names = expr.field_variables(dim)

    def _jet(self, pts, order):
        sp = jet_space(self.dim + 1, order)
        batch = pts.shape[:-1]
        env = {name: Jet.variable(sp, pts[..., v], v) for v, name in enumerate(self._names)}
        out = np.zeros(batch + (self.dim, self.dim, sp.size))
        for (i, j), node in self.components.items():
            val = node.evaluate(env)
            c = val.c if isinstance(val, Jet) else sp.constant(val, batch)
            out[..., i, j, :] = c
            out[..., j, i, :] = c
        return out


def parse_field(text, dim: int, order: int = DEFAULT_ORDER, domain: FieldDomain | None = None) -> ExpressionField:
    """Build an expression field.

    ``text`` is either one expression used for every diagonal entry, or a
    mapping from component keys (``"g11"``, ``"g12"``, ... or 0-based pairs)
    to expressions; unspecified components are zero.
    """
    names = expr.field_variables(dim)
    if isinstance(text, str):
        items = {(i, i): text for i in range(dim)}
    else:
        items = {}
        for key, value in text.items():
            items[_component_key(key, dim)] = value
    nodes = {k: expr.parse(v, names) for k, v in items.items()}
    return ExpressionField(dim, nodes, order=order, domain=domain, texts=items)


def _component_key(key, dim: int) -> tuple[int, int]:
    if isinstance(key, str):
        digits = key[1:] if key[:1] in ("g", "k") else key
        if len(digits) != 2 or not digits.isdigit():
            raise ValueError(f"bad component key {key!r}")
        i, j = int(digits[0]) - 1, int(digits[1]) - 1
    else:
        i, j = key
    if not (0 <= i < dim and 0 <= j < dim):
        raise ValueError(f"component {key!r} out of range for dimension {dim}")
    return (i, j)


class SumField(SymTensorField):
    def __init__(self, a: SymTensorField, b: SymTensorField):
        if a.dim != b.dim:
            raise ValueError("dimension mismatch")
        self.a, self.b = a, b
        self.dim = a.dim
        self.order = min(a.order, b.order)
        self.domain = a.domain or b.domain
        self.provenance = a.provenance

    def _jet(self, pts, order):
        return self.a._jet(pts, order) + self.b._jet(pts, order)


class ScaledField(SymTensorField):
    def __init__(self, base: SymTensorField, c: float):
        self.base, self.c = base, c
        self.dim = base.dim
        self.order = base.order
        self.domain = base.domain
        self.provenance = base.provenance

    def _jet(self, pts, order):
        return self.c * self.base._jet(pts, order)


class DomainField(SymTensorField):
    def __init__(self, base: SymTensorField, domain: FieldDomain | None):
        self.base = base
        self.dim, self.order, self.provenance = base.dim, base.order, base.provenance
        self.domain = domain

    def _jet(self, pts, order):
        return self.base._jet(pts, order)


class ShiftedField(SymTensorField):
    """``f(x, t) = base(x + offset, t)``: a global field seen from a translated chart."""

    def __init__(self, base: SymTensorField, offset, domain: FieldDomain | None = None):
        self.base = base
        self.offset = np.append(np.asarray(offset, dtype=float), 0.0)
        self.dim, self.order, self.provenance = base.dim, base.order, base.provenance
        self.domain = domain

    def _jet(self, pts, order):
        return self.base._jet(pts + self.offset, order)


class AffineField(SymTensorField):
    """Pullback under ``x = center + A y``: ``g'(y, t) = A^T g(center + A y, t) A``."""

    def __init__(self, base: SymTensorField, center, A):
        self.base = base
        self.center = np.asarray(center, dtype=float)
        self.A = np.asarray(A, dtype=float)
        self.dim, self.order = base.dim, base.order
        self.provenance = base.provenance
        self.domain = None
        lin = np.eye(self.dim + 1)
        lin[: self.dim, : self.dim] = self.A
        self._lin = lin

    def to_base(self, y) -> np.ndarray:
        return self.center + self.A @ np.asarray(y, dtype=float)

    def _jet(self, pts, order):
        sp = jet_space(self.dim + 1, order)
        y, t = pts[..., :-1], pts[..., -1:]
        x = self.center + np.einsum("ij,...j->...i", self.A, y)
        raw = self.base._jet(np.concatenate([x, t], axis=-1), order)
        sub = sp.linear_substitute(raw, self._lin)
        return np.einsum("ai,...abp,bj->...ijp", self.A, sub, self.A)


class MetricField(SymTensorField):
    """A field validated to be positive definite at a set of sample points."""

    def __init__(self, base: SymTensorField, spd_margin: float):
        self.base = base
        self.spd_margin = spd_margin
        self.dim, self.order, self.provenance = base.dim, base.order, base.provenance
        self.domain = base.domain

    @classmethod
    def validate(cls, base: SymTensorField, points, spd_floor: float = SPD_FLOOR) -> "MetricField":
        pts = np.asarray(points, dtype=float).reshape(-1, base.dim + 1)
        values = base.jet(pts, 0)[..., 0]
        eig = np.linalg.eigvalsh(values)
        margin = float(eig.min())
        if not np.isfinite(margin) or margin <= spd_floor:
            bad = int(np.argmin(eig.min(axis=-1)))
            raise NotSPD(f"metric not positive definite at {pts[bad].tolist()} (min eigenvalue {margin:.3e})")
        return cls(base, margin)

    def _jet(self, pts, order):
        return self.base._jet(pts, order)


# -- point evaluation ---------------------------------------------------------


def _check_point(field: SymTensorField, point) -> np.ndarray:
    p = np.asarray(point, dtype=float)
    if p.shape != (field.dim + 1,):
        raise ValueError(f"point must have {field.dim + 1} coordinates")
    if field.domain is not None and not field.domain.contains(p):
        raise DomainError(f"point {p.tolist()} outside the field domain")
    return p


def eval_tensor(field: SymTensorField, point, beta) -> np.ndarray:
    """The matrix ``d^beta g_ij`` at ``point``."""
    beta = beta if isinstance(beta, MultiIndex) else MultiIndex(tuple(beta))
    if len(beta.exponents) != field.dim + 1:
        raise ValueError("multi-index length must be n + 1")
    if beta.order > field.order:
        raise OrderExceeded(f"|beta| = {beta.order} exceeds field order {field.order}")
    p = _check_point(field, point)
    sp = field.space(beta.order)
    return sp.derivative(field.jet(p, beta.order), beta.exponents)


def invert_at(g_matrix, spd_floor: float = SPD_FLOOR) -> np.ndarray:
    """Inverse of a symmetric positive-definite matrix."""
    g = np.atleast_2d(np.asarray(g_matrix, dtype=float))
    scale = max(1.0, float(np.abs(g).max()))
    if not np.allclose(g, g.T, rtol=0.0, atol=1e-12 * scale):
        raise NotSPD("matrix is not symmetric")
    g = 0.5 * (g + g.T)
    eig = np.linalg.eigvalsh(g)
    if not np.all(np.isfinite(eig)) or eig[0] <= spd_floor:
        raise NotSPD(f"smallest eigenvalue {eig[0]:.3e} <= {spd_floor:.1e}")
    inv = np.linalg.inv(g)
    # one step of iterative refinement toward the tau_lin residual
    inv = inv + inv @ (np.eye(len(g)) - g @ inv)
    return 0.5 * (inv + inv.T)


def inverse_derivative(g: SymTensorField, point, s: int) -> np.ndarray:
    """``d_s g^{ij} = -g^{im} g_{ml,s} g^{lj}`` for the tangential index ``s`` (0-based)."""
    if not 0 <= s < g.dim:
        raise ValueError(f"tangential index {s} out of range")
    p = _check_point(g, point)
    sp = g.space(1)
    j = g.jet(p, 1)
    ginv = invert_at(j[..., 0])
    gs = sp.derivative(j, MultiIndex.of(g.dim, s).exponents)
    return -ginv @ gs @ ginv


def neumann_series(g_matrix, k_matrix, lambda_max: int) -> np.ndarray:
    """Truncated ``sum_{l=0}^{lambda_max} (-1)^l (g^-1 k)^l g^-1``."""
    if lambda_max < 1:
        raise ValueError("lambda_max must be >= 1")
    ginv = invert_at(g_matrix)
    k = np.atleast_2d(np.asarray(k_matrix, dtype=float))
    x = ginv @ k
    q = float(np.linalg.norm(x, 2))
    if q >= 1.0:
        raise SeriesDiverges(f"||g^-1 k||_op = {q:.4g} >= 1")
    term = ginv
    acc = ginv.copy()
    for _ in range(lambda_max):
        term = -x @ term
        acc = acc + term
    return 0.5 * (acc + acc.T)


def neumann_bound(g_matrix, k_matrix, lambda_max: int) -> float:
    """Upper bound ``||g^-1|| q^(lambda_max+1) / (1 - q)`` on the truncation error (2-norm)."""
    ginv = invert_at(g_matrix)
    q = float(np.linalg.norm(ginv @ np.atleast_2d(k_matrix), 2))
    if q >= 1.0:
        raise SeriesDiverges(f"||g^-1 k||_op = {q:.4g} >= 1")
    return float(np.linalg.norm(ginv, 2)) * q ** (lambda_max + 1) / (1.0 - q)


def neumann_inverse(g_tilde: SymTensorField, k: SymTensorField, point, lambda_max: int) -> np.ndarray:
    """Neumann approximation of ``(g_tilde + k)^-1`` at a point."""
    p = _check_point(g_tilde, point)
    return neumann_series(g_tilde.jet(p, 0)[..., 0], k.jet(p, 0)[..., 0], lambda_max)


# -- atlases and the C^m norm ---------------------------------------------------


@dataclass(frozen=True)
class ChartDomain:
    """Minimal chart geometry: ``global = center + x`` with ``|x|_inf <= radius``, ``0 <= t <= depth``."""

    name: str
    center: tuple[float, ...]
    radius: float
    depth: float

    @property
    def local_domain(self) -> FieldDomain:
        n = len(self.center)
        return FieldDomain((-self.radius,) * n, (self.radius,) * n, self.depth)


@dataclass
class ChartAtlas:
    """A finite family of charts.

    ``translation`` marks atlases whose transition maps are translations of a
    shared global parameter (``global = chart.center + x``), so a tensor given
    in global coordinates has the same components in every chart.
    ``period`` gives per-axis periods of the global parameter (``None`` for
    non-periodic axes).
    """

    charts: list
    translation: bool = True
    period: tuple | None = None
    overlaps: list[tuple[int, int]] = dc_field(default_factory=list)

    def __post_init__(self):
        if not self.overlaps and self.translation:
            self.overlaps = _translation_overlaps(self.charts, self.period)

    @property
    def dim(self) -> int:
        return len(self.charts[0].center)

    def chart(self, name: str):
        for c in self.charts:
            if c.name == name:
                return c
        raise KeyError(name)

    def global_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        n = self.dim
        lo = np.full(n, np.inf)
        hi = np.full(n, -np.inf)
        for c in self.charts:
            lo = np.minimum(lo, np.asarray(c.center) - c.radius)
            hi = np.maximum(hi, np.asarray(c.center) + c.radius)
        if self.period is not None:
            for a, p in enumerate(self.period):
                if p is not None:
                    lo[a], hi[a] = 0.0, p
        return lo, hi

    @classmethod
    def box(cls, lower, upper, depth: float) -> "ChartAtlas":
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        if not np.allclose(upper - lower, upper[0] - lower[0]):
            raise ValueError("box atlas needs a cube")
        center = tuple((lower + upper) / 2)
        return cls([ChartDomain("box", center, float(upper[0] - lower[0]) / 2, depth)])


def _translation_overlaps(charts, period) -> list[tuple[int, int]]:
    out = []
    for i in range(len(charts)):
        for j in range(i + 1, len(charts)):
            d = np.asarray(charts[i].center, dtype=float) - np.asarray(charts[j].center, dtype=float)
            if period is not None:
                for a, p in enumerate(period):
                    if p is not None:
                        d[a] -= p * np.round(d[a] / p)
            if np.all(np.abs(d) < charts[i].radius + charts[j].radius):
                out.append((i, j))
    return out


def cm_norm(
    k,
    atlas: ChartAtlas,
    m: int,
    grid_res: int = 33,
    chunk: int = 4096,
) -> float:
    """Grid lower bound of ``sum_alpha sum_{|beta|<=m} sum_{i,j} sup |d^beta k_ij|``.

    ``k`` is either a field in global coordinates (for translation atlases)
    or a mapping from chart name to the field's expression in that chart.
    The sum over ``(i, j)`` runs over ordered pairs. Each supremum is a max
    over a tensor grid with ``grid_res`` points per axis spanning the chart
    box and ``0 <= t <= depth``; refining through nested grids can only
    increase the result.
    """
    if grid_res < 2:
        raise ValueError("grid_res must be >= 2")
    total = 0.0
    for chart in atlas.charts:
        if isinstance(k, Mapping):
            local = k[chart.name]
            offset = np.zeros(len(chart.center))
        else:
            if not atlas.translation and len(atlas.charts) > 1:
                raise ValueError("a single global field needs a translation atlas")
            local = k
            offset = np.asarray(chart.center, dtype=float)
        if m > local.order:
            raise OrderExceeded(f"norm order {m} exceeds field order {local.order}")
        n = len(chart.center)
        axes = [np.linspace(-chart.radius, chart.radius, grid_res) + offset[a] for a in range(n)]
        axes.append(np.linspace(0.0, chart.depth, grid_res))
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n + 1)
        sp = jet_space(n + 1, m)
        sup = np.zeros((n, n, sp.size))
        for start in range(0, len(grid), chunk):
            block = np.abs(local.jet(grid[start : start + chunk], m))
            sup = np.maximum(sup, block.max(axis=0))
        total += float(np.sum(sup * sp.factorial))
    return total


def sample_points(field_domain: FieldDomain, count: int, rng: np.random.Generator, t: float | None = None) -> np.ndarray:
    lo, hi = np.asarray(field_domain.lower), np.asarray(field_domain.upper)
    x = rng.uniform(lo, hi, size=(count, len(lo)))
    tt = np.full((count, 1), t) if t is not None else rng.uniform(0, field_domain.depth, size=(count, 1))
    return np.concatenate([x, tt], axis=1)


def random_polynomial_field(
    dim: int,
    rng: np.random.Generator,
    degree: int = 3,
    scale: float = 0.2,
    base_identity: bool = True,
    order: int = DEFAULT_ORDER,
) -> ExpressionField:
    """Random polynomial expression field (``I + scale * P`` when ``base_identity``).

    Used by tests and validation suites; every coefficient is drawn from ``rng``.
    """
    names = expr.field_variables(dim)
    texts = {}
    for i in range(dim):
        for j in range(i, dim):
            terms = ["1" if (base_identity and i == j) else "0"]
            for _ in range(4):
                c = rng.uniform(-1, 1) * scale
                deg = int(rng.integers(0, degree + 1))
                factors = [names[int(rng.integers(0, dim + 1))] for _ in range(deg)]
                mono = "*".join(factors) if factors else "1"
                terms.append(f"({c!r})*{mono}")
            if rng.uniform() < 0.3:
                a = rng.uniform(-1, 1) * scale
                terms.append(f"({a!r})*sin({names[int(rng.integers(0, dim + 1))]})")
            texts[(i, j)] = " + ".join(terms)
    return parse_field(texts, dim, order=order)


__all__ = [
    "MultiIndex",
    "FieldDomain",
    "SymTensorField",
    "ConstantField",
    "ExpressionField",
    "SumField",
    "ScaledField",
    "ShiftedField",
    "AffineField",
    "MetricField",
    "ChartDomain",
    "ChartAtlas",
    "euclidean",
    "zero_field",
    "parse_field",
    "eval_tensor",
    "invert_at",
    "inverse_derivative",
    "neumann_series",
    "neumann_bound",
    "neumann_inverse",
    "cm_norm",
    "random_polynomial_field",
    "sample_points",
]
