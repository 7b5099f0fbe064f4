"""Metric perturbations and the linearization of ``grad H`` in the metric.

``F(g, x) = grad_x H(x, 0)`` with ``H = -1/2 g^ij g_ij,t``. Its derivative in
the direction of a symmetric tensor ``k`` is

    F'_k[k]_s = -1/2 * d/dk [ -tr(G g_s G g_t) + tr(G g_ts) ]

with ``G = g^-1`` and ``d G = -G k G``. :func:`frechet_inner` returns the
bracket (the "inner" normalization, where the canonical perturbations map
to the unit vectors); :func:`frechet_F_k` returns the ``-1/2``-scaled value
that matches :func:`~boundarycurv.critical.grad_H`.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .critical import CriticalPointRecord, ScanReport, global_scan, newton_find
from .errors import ChartOverflow, NoConvergence, NotSPD, SeriesDiverges
from .jets import JetSpace, jet_space
from .manifolds import Manifold
from .tensors import (
    AffineField,
    ChartAtlas,
    ChartDomain,
    DEFAULT_ORDER,
    MultiIndex,
    SymTensorField,
    cm_norm,
    invert_at,
)
from .tolerances import DEFAULTS, Tolerances

NORMALIZATION_NOTE = (
    "matrix: inner normalization d_s(g^ij g_ij,t), canonical basis maps to unit vectors; "
    "matrix_scaled: multiplied by -1/2 to match grad H"
)


def _field(k) -> SymTensorField:
    return k.base if isinstance(k, PerturbationTensor) else k


def _partials(g: SymTensorField, p: np.ndarray):
    """Value, ``d_s``, ``d_t`` and ``d_s d_t`` matrices at ``p`` (lists indexed by s)."""
    n = g.dim
    sp = g.space(2)
    j = g.jet(p, 2)
    d = lambda *axes: sp.derivative(j, MultiIndex.of(n, *axes).exponents)  # noqa: E731
    return j[..., 0], [d(s) for s in range(n)], d(n), [d(s, n) for s in range(n)]


def _point(g: SymTensorField, x) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape != (g.dim,):
        raise ValueError(f"x must have {g.dim} coordinates")
    return np.append(x, 0.0)


def frechet_inner(g_tilde: SymTensorField, x, k) -> np.ndarray:
    """Directional derivative of ``x -> d_s (g^ij g_ij,t)`` at ``(x, 0)`` along ``k``."""
    k = _field(k)
    if k.dim != g_tilde.dim:
        raise ValueError("dimension mismatch between metric and perturbation")
    p = _point(g_tilde, x)
    g0, gs, gt, gts = _partials(g_tilde, p)
    k0, ks, kt, kts = _partials(k, p)
    G = invert_at(g0)
    Kh = G @ k0 @ G
    out = np.empty(g_tilde.dim)
    for s in range(g_tilde.dim):
        out[s] = (
            np.trace(Kh @ gs[s] @ G @ gt)
            - np.trace(G @ ks[s] @ G @ gt)
            + np.trace(G @ gs[s] @ Kh @ gt)
            - np.trace(G @ gs[s] @ G @ kt)
            - np.trace(Kh @ gts[s])
            + np.trace(G @ kts[s])
        )
    return out


def frechet_F_k(g_tilde: SymTensorField, x, k) -> np.ndarray:
    """``F'_k(g_tilde, x)[k]``, scaled like ``grad H`` (so ``-1/2`` times :func:`frechet_inner`).

    Linear in ``k``; raises :class:`~boundarycurv.errors.NotSPD` when
    ``g_tilde(x, 0)`` is not positive definite.
    """
    return -0.5 * frechet_inner(g_tilde, x, k)


def frechet_reduced(g_tilde: SymTensorField, x, k, tol: float = DEFAULTS.tau_gauss) -> np.ndarray:
    """Normal-coordinate shortcut, valid when ``g_tilde(x, 0) = I`` and ``k(x, 0) = 0``.

    Then the six terms collapse to ``-k_ij,s g_ij,t - g_ij,s k_ij,t + k_ii,ts``.
    Returned with the same ``-1/2`` scaling as :func:`frechet_F_k`.
    """
    k = _field(k)
    p = _point(g_tilde, x)
    g0, gs, gt, _ = _partials(g_tilde, p)
    k0, ks, kt, kts = _partials(k, p)
    if np.max(np.abs(g0 - np.eye(g_tilde.dim))) > tol:
        raise ValueError("reduced formula needs g_tilde(x, 0) = I")
    if np.max(np.abs(k0)) > tol:
        raise ValueError("reduced formula needs k(x, 0) = 0")
    inner = [-np.sum(ks[s] * gt) - np.sum(gs[s] * kt) + np.trace(kts[s]) for s in range(g_tilde.dim)]
    return -0.5 * np.array(inner)


# -- smooth cutoff ---------------------------------------------------------------------


def _step_taylor(u0: np.ndarray, order: int) -> np.ndarray:
    """Taylor coefficients of ``phi(u) = psi(u) / (psi(u) + psi(1 - u))``, ``psi(u) = exp(-1/u)``.

    ``phi`` is 0 for ``u <= 0``, 1 for ``u >= 1`` and smooth everywhere.
    Returns shape ``u0.shape + (order + 1,)``.
    """
    u0 = np.asarray(u0, dtype=float)
    out = np.zeros(u0.shape + (order + 1,))
    out[..., 0] = (u0 >= 1.0).astype(float)
    inner = (u0 > 0.0) & (u0 < 1.0)
    if np.any(inner):
        sp = jet_space(1, order)
        u = sp.variable(u0[inner], 0)
        v = -u
        v[..., 0] += 1.0
        # phi = logistic(z) with z = 1/(1 - u) - 1/u; the branch on sign(z)
        # keeps exp from overflowing and saturates to exactly 0 or 1
        z = sp.reciprocal(v) - sp.reciprocal(u)
        pos = z[..., 0] >= 0
        e = sp.exp(np.where(pos[..., None], -z, z))
        one = sp.constant(1.0, e.shape[:-1])
        r = sp.reciprocal(one + e)
        out[inner] = np.where(pos[..., None], r, sp.mul(e, r))
    return out


def cutoff_jet(sp: JetSpace, q: np.ndarray) -> np.ndarray:
    """Jet of ``chi`` as a function of ``q = s^2``: 1 for ``s <= 1/2``, 0 for ``s >= 1``.

    Working in ``q`` keeps the cutoff smooth at the origin, where ``s = |x|``
    is not differentiable.
    """
    u = (1.0 - q) / 0.75
    u0 = u[..., 0]
    if np.all((u0 >= 1.0) | (u0 <= 0.0)):
        return sp.constant((u0 >= 1.0).astype(float), u0.shape)
    taylor = _step_taylor(u0, sp.order)
    # d/dq = -4/3 d/du
    scale = (-1.0 / 0.75) ** np.arange(sp.order + 1)
    taylor = taylor * scale
    return sp.compose(q, [taylor[..., i] for i in range(sp.order + 1)])


def cutoff(s) -> np.ndarray:
    """Point values of the radial cutoff ``chi(s)``."""
    s = np.asarray(s, dtype=float)
    return _step_taylor((1.0 - s * s) / 0.75, 0)[..., 0]


# -- canonical perturbations -----------------------------------------------------------


@dataclass(frozen=True)
class Bump:
    """One canonical direction ``k_nn = coef (x_n - c_n) t chi(|x-c|/r_b) chi(t/t_b)`` (0-based ``nu``)."""

    nu: int
    center: tuple[float, ...]
    r_b: float
    t_b: float
    coef: float = 1.0


class CanonicalPerturbationField(SymTensorField):
    """A finite sum of :class:`Bump` terms; diagonal, compactly supported.

    With ``period`` set, displacements are taken to the nearest periodic image,
    which is well defined as long as every ``r_b`` is below half a period.
    """

    def __init__(self, dim: int, bumps, order: int = DEFAULT_ORDER, period=None):
        self.dim = dim
        self.order = order
        self.domain = None
        self.provenance = "canonical-perturbation"
        self.bumps = tuple(bumps)
        self.period = None if period is None else tuple(period)
        if self.period is not None:
            for b in self.bumps:
                for p in self.period:
                    if p is not None and b.r_b >= 0.5 * p:
                        raise ValueError("bump radius must stay below half a period")
        for b in self.bumps:
            if not 0 <= b.nu < dim or len(b.center) != dim:
                raise ValueError("bump does not match the field dimension")
            if b.r_b <= 0 or b.t_b <= 0:
                raise ValueError("bump radii must be positive")
        self._centers = np.array([b.center for b in self.bumps], dtype=float).reshape(-1, dim)
        self._rb = np.array([b.r_b for b in self.bumps], dtype=float)
        self._tb = np.array([b.t_b for b in self.bumps], dtype=float)
        self._coef = np.array([b.coef for b in self.bumps], dtype=float)
        self._nu = np.array([b.nu for b in self.bumps], dtype=int)

    def _jet(self, pts, order):
        n = self.dim
        sp = jet_space(n + 1, order)
        batch = pts.shape[:-1]
        flat = pts.reshape(-1, n + 1)
        out = np.zeros((len(flat), n, n, sp.size))
        if not self.bumps:
            return out.reshape(batch + out.shape[1:])
        d0 = flat[:, None, :n] - self._centers
        if self.period is not None:
            for a, p in enumerate(self.period):
                if p is not None:
                    d0[..., a] -= p * np.round(d0[..., a] / p)
        # only (point, bump) pairs inside the open support contribute
        active = (np.sum(d0 * d0, axis=-1) < self._rb**2) & (np.abs(flat[:, None, n]) < self._tb)
        active &= self._coef != 0.0
        pi, bi = np.nonzero(active)
        if len(pi) == 0:
            return out.reshape(batch + out.shape[1:])
        d = np.zeros((len(pi), n, sp.size))
        d[..., 0] = d0[pi, bi]
        if order > 0:
            for a in range(n):
                d[:, a, 1 + a] = 1.0
        t = sp.variable(flat[pi, n], n)
        q = sp.mul(d, d).sum(axis=-2) / (self._rb[bi] ** 2)[:, None]
        qt = sp.mul(t, t) / (self._tb[bi] ** 2)[:, None]
        weight = sp.mul(cutoff_jet(sp, q), cutoff_jet(sp, qt))
        nu = self._nu[bi]
        dnu = d[np.arange(len(pi)), nu]
        terms = self._coef[bi, None] * sp.mul(sp.mul(dnu, t), weight)
        np.add.at(out, (pi, nu, nu), terms)
        return out.reshape(batch + out.shape[1:])

    def scaled(self, c: float) -> "CanonicalPerturbationField":
        bumps = [Bump(b.nu, b.center, b.r_b, b.t_b, b.coef * c) for b in self.bumps]
        return CanonicalPerturbationField(self.dim, bumps, self.order, self.period)

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "period": None if self.period is None else list(self.period),
            "bumps": [
                {"nu": b.nu, "center": list(b.center), "r_b": b.r_b, "t_b": b.t_b, "coef": b.coef}
                for b in self.bumps
            ],
        }


@dataclass
class PerturbationTensor:
    """A compactly supported tensor ``k`` with its grid ``C^m`` norm.

    ``rho`` is the declared radius of the ball the tensor is meant to live
    in; ``None`` declares no ball and skips the membership check.
    """

    base: SymTensorField
    support: dict
    cm_norm_value: float
    m: int
    rho: float | None = None

    def __post_init__(self):
        if self.rho is not None and not self.cm_norm_value < self.rho:
            raise ValueError(f"||k||_{self.m} = {self.cm_norm_value:.6g} is not below rho = {self.rho:.6g}")

    @property
    def dim(self) -> int:
        return self.base.dim

    def jet(self, points, order=None):
        return self.base.jet(points, order)

    def vanishes_outside(self, samples: int = 64) -> bool:
        """Check exact vanishing of all jet coefficients on and just beyond the support sphere."""
        c = np.asarray(self.support["center"], dtype=float)
        r = float(self.support["r_b"])
        n = len(c)
        rng = np.random.default_rng(0)
        dirs = rng.normal(size=(samples, n))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        pts = []
        for scale in (1.0, 1.05, 1.5):
            x = c + scale * r * dirs
            for t in (0.0, 0.5 * float(self.support["t_b"])):
                pts.append(np.concatenate([x, np.full((samples, 1), t)], axis=1))
        return bool(np.all(self.base.jet(np.concatenate(pts)) == 0.0))

    def to_dict(self) -> dict:
        d = {"support": self.support, "cm_norm": self.cm_norm_value, "m": self.m, "rho": self.rho}
        if isinstance(self.base, CanonicalPerturbationField):
            d["field"] = self.base.to_dict()
        return d


def support_norm(field: SymTensorField, center, r_b: float, t_b: float, m: int, grid_res: int = DEFAULTS.grid_res) -> float:
    """Grid ``C^m`` norm over the box enclosing one support ball."""
    if isinstance(field, CanonicalPerturbationField) and len(field.bumps) == 1 and m <= field.order:
        return _single_bump_norm(field.bumps[0], m, grid_res)
    atlas = ChartAtlas([ChartDomain("support", tuple(np.asarray(center, dtype=float)), r_b, t_b)])
    return cm_norm(field, atlas, m, grid_res)


def _single_bump_norm(bump: Bump, m: int, grid_res: int) -> float:
    """Same value as :func:`cm_norm` on the support box, from the factors in ``x`` and ``t``.

    One bump is ``X(x) T(t)``, and on a tensor grid the max of
    ``|d^a X d^b T|`` is the product of the separate maxima, so the grid in
    ``n + 1`` variables is never formed. The value depends on neither the
    center nor (the grid being symmetric) the direction ``nu``.
    """
    return _factored_norm(len(bump.center), bump.r_b, bump.t_b, abs(bump.coef), m, grid_res)


@functools.lru_cache(maxsize=64)
def _factored_norm(n: int, r_b: float, t_b: float, coef: float, m: int, grid_res: int) -> float:
    spx, spt = jet_space(n, m), jet_space(1, m)
    axes = [np.linspace(-r_b, r_b, grid_res)] * n
    d0 = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    # q = |x - c|^2 / r_b^2 is a quadratic, so its jet is written down directly
    q = np.zeros((len(d0), spx.size))
    q[:, 0] = np.sum(d0 * d0, axis=1)
    if m > 0:
        q[:, 1 : 1 + n] = 2 * d0
    if m > 1:
        for a in range(n):
            q[:, spx.index[tuple(2 * (b == a) for b in range(n))]] = 1.0
    q /= r_b**2
    x0 = spx.variable(d0[:, 0], 0)
    X = coef * spx.mul(x0, cutoff_jet(spx, q))
    t = spt.variable(np.linspace(0.0, t_b, grid_res), 0)
    T = spt.mul(t, cutoff_jet(spt, spt.mul(t, t) / t_b**2))
    supx, supt = np.abs(X).max(axis=0), np.abs(T).max(axis=0)
    sp = jet_space(n + 1, m)
    return float(
        sum(f * supx[spx.index[e[:n]]] * supt[spt.index[e[n:]]] for e, f in zip(sp.monomials, sp.factorial))
    )


def canonical_perturbation(
    nu: int,
    center,
    r_b: float,
    t_b: float,
    chart=None,
    m: int = 3,
    rho: float | None = None,
    order: int = DEFAULT_ORDER,
    grid_res: int = DEFAULTS.grid_res,
) -> PerturbationTensor:
    """The tensor with single component ``k_nu,nu = (x_nu - c_nu) t chi chi`` (``nu`` 0-based).

    At ``(center, 0)`` the tensor and all its first derivatives vanish and
    ``d_s d_t k_nu,nu = delta_s,nu``. ``center`` is in the coordinates of
    ``chart`` when one is given; the support ball must then fit in the chart
    (``|c|_inf + r_b <= R`` and ``t_b < T``), else :class:`ChartOverflow`.
    """
    c = tuple(float(v) for v in np.asarray(center, dtype=float).reshape(-1))
    n = len(c)
    if not 0 <= nu < n:
        raise ValueError(f"direction {nu} out of range for dimension {n}")
    name = None
    if chart is not None:
        name = chart.name
        if np.max(np.abs(c)) + r_b > chart.radius * (1 + 1e-12):
            raise ChartOverflow(f"support ball of radius {r_b:g} leaves chart {chart.name!r}")
        if not t_b < chart.depth:
            raise ChartOverflow(f"depth radius {t_b:g} not below chart depth {chart.depth:g}")
    field = CanonicalPerturbationField(n, [Bump(nu, c, r_b, t_b)], order=order)
    norm = support_norm(field, c, r_b, t_b, min(m, order), grid_res)
    support = {"chart": name, "center": list(c), "r_b": r_b, "t_b": t_b, "nu": nu}
    return PerturbationTensor(field, support, norm, min(m, order), rho)


# -- surjectivity ----------------------------------------------------------------------


@dataclass
class SurjectivityReport:
    point: list[float]
    basis: list[dict]
    matrix: list[list[float]]
    matrix_scaled: list[list[float]]
    singular_values: list[float]
    min_singular_value: float
    tau_onto: float
    onto: bool
    recentered: bool
    transform: list[list[float]]
    normalization: str = NORMALIZATION_NOTE

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d: dict) -> "SurjectivityReport":
        return cls(**d)


def surjectivity_matrix(
    g_tilde: SymTensorField,
    x_tilde,
    r_b: float,
    t_b: float,
    chart=None,
    tol: Tolerances = DEFAULTS,
) -> SurjectivityReport:
    """Columns ``F'_k[k^(nu)]`` for the canonical basis centered at ``x_tilde``.

    When ``g_tilde(x_tilde, 0)`` is not the identity the tangential
    coordinates are first changed affinely, ``x = x_tilde + A y`` with
    ``A = g0^(-1/2)``, so the basis is built where the metric is Euclidean
    at the point. Surjectivity does not depend on that choice.
    """
    n = g_tilde.dim
    xt = np.asarray(x_tilde, dtype=float).reshape(-1)
    g0 = g_tilde.jet(np.append(xt, 0.0), 0)[..., 0]
    invert_at(g0, tol.spd_floor)
    if np.max(np.abs(g0 - np.eye(n))) <= tol.tau_gauss:
        g, at, A, recentered = g_tilde, xt, np.eye(n), False
    else:
        w, V = np.linalg.eigh(g0)
        A = V @ np.diag(w**-0.5) @ V.T
        g, at, recentered = AffineField(g_tilde, xt, A), np.zeros(n), True
    use_chart = chart if not recentered else None
    basis = [canonical_perturbation(nu, at, r_b, t_b, chart=use_chart, order=g_tilde.order) for nu in range(n)]
    M = np.column_stack([frechet_inner(g, at, k) for k in basis])
    sv = np.linalg.svd(M, compute_uv=False)
    tau = tol.tau_onto * max(float(sv.max()), np.finfo(float).tiny)
    smin = float(sv.min())
    return SurjectivityReport(
        point=xt.tolist(),
        basis=[k.to_dict() for k in basis],
        matrix=M.tolist(),
        matrix_scaled=(-0.5 * M).tolist(),
        singular_values=sv.tolist(),
        min_singular_value=smin,
        tau_onto=tau,
        onto=bool(smin > tau),
        recentered=recentered,
        transform=A.tolist(),
    )


# -- random perturbations on a manifold -----------------------------------------------


def covering_centers(manifold: Manifold, per_axis: int | None = None) -> tuple[np.ndarray, float]:
    """Coarse grid of bump centers over the global parameter box, and a bump radius.

    The radius is three quarters of the grid spacing, so neighbouring
    supports overlap and every point sees at least one bump.
    """
    n = manifold.dim
    if per_axis is None:
        per_axis = 8 if n == 1 else 4
    lo, hi = manifold.atlas.global_bounds()
    step = (hi - lo) / per_axis
    axes = [lo[a] + (np.arange(per_axis) + 0.5) * step[a] for a in range(n)]
    centers = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    return centers, 0.75 * float(step.min())


def _depth_radius(manifold: Manifold) -> float:
    return 0.5 * min(c.depth for c in manifold.charts)


def _require_translation(manifold: Manifold) -> None:
    if not manifold.atlas.translation and len(manifold.charts) > 1:
        from .errors import SpecError

        raise SpecError(
            f"{manifold.name!r} has no translation atlas; global perturbations need one shared parameter"
        )


def random_canonical_field(
    manifold: Manifold,
    centers: np.ndarray,
    r_b: float,
    amplitude: float,
    rng: np.random.Generator,
) -> CanonicalPerturbationField:
    """Canonical directions at every center with coefficients uniform on ``[-amplitude, amplitude]``."""
    n = manifold.dim
    coef = rng.uniform(-amplitude, amplitude, size=(len(centers), n))
    t_b = _depth_radius(manifold)
    bumps = [
        Bump(nu, tuple(float(v) for v in c), r_b, t_b, float(coef[i, nu]))
        for i, c in enumerate(centers)
        for nu in range(n)
    ]
    order = min(c.metric.order for c in manifold.charts)
    return CanonicalPerturbationField(n, bumps, order=order, period=manifold.atlas.period)


def neumann_ratio(manifold: Manifold, k: SymTensorField, per_axis: int = 5) -> float:
    """Largest ``||g^-1 k||_2`` over a sample grid in every chart (``< 1`` keeps the series valid)."""
    worst = 0.0
    for c in manifold.charts:
        R = c.radius
        ax = np.linspace(-R, R, per_axis)
        xs = np.array(np.meshgrid(*[ax] * c.dim, indexing="ij")).reshape(c.dim, -1).T
        # bump supports end at half the chart depth, so sample t densely
        for t in np.linspace(0.0, c.depth, 2 * per_axis + 1):
            pts = np.concatenate([xs, np.full((len(xs), 1), t)], axis=1)
            g = c.metric.jet(pts, 0)[..., 0]
            kk = k.jet(pts + np.append(c.center, 0.0), 0)[..., 0]
            q = np.linalg.norm(np.linalg.solve(g, kk), 2, axis=(-2, -1))
            worst = max(worst, float(q.max()))
    return worst


# -- openness experiment ---------------------------------------------------------------


@dataclass
class StabilityRow:
    epsilon: float
    cm_norm: float
    continued: int
    count_before: int
    count_after: int
    new_points: int
    max_displacement: float
    displacements: list[float]
    preserved: bool
    failures: list[str] = dc_field(default_factory=list)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class StabilityReport:
    rows: list[StabilityRow]
    ratios: list[float | None]
    seed: int
    direction: dict

    def to_dict(self) -> dict:
        return {
            "rows": [r.to_dict() for r in self.rows],
            "ratios": self.ratios,
            "seed": self.seed,
            "direction": self.direction,
        }


def stability_check(
    manifold: Manifold,
    scan: ScanReport,
    epsilons,
    seed: int = 0,
    tol: Tolerances = DEFAULTS,
    threads: int = 1,
) -> StabilityReport:
    """Continue every critical point along ``g + eps k`` for one random direction ``k``.

    ``k`` is a random combination of canonical perturbations covering the
    boundary, normalized to unit grid ``C^m`` norm, so row ``eps`` uses a
    perturbation of norm ``eps``. Each row records the displacement of the
    continued points, whether the count survived, and how many points a
    fresh coarse scan finds away from the continued ones.
    """
    _require_translation(manifold)
    if not scan.all_nondegenerate:
        raise ValueError("stability_check needs a scan with only nondegenerate records")
    rng = np.random.default_rng(seed)
    centers, r_b = covering_centers(manifold)
    direction = random_canonical_field(manifold, centers, r_b, 1.0, rng)
    m = direction.order
    unit = cm_norm(direction, manifold.atlas, m, tol.grid_res)
    direction = direction.scaled(1.0 / unit)
    rows = []
    for eps in epsilons:
        eps = float(eps)
        k = direction.scaled(eps)
        pert = manifold.perturbed(k)
        moved, disp, fails = [], [], []
        for rec in scan.records:
            chart = pert.atlas.chart(rec.chart)
            try:
                new = newton_find(chart, rec.x, tol.tau_crit, tol.max_iter, tol.eps_nd)
            except (NoConvergence, NotSPD) as exc:
                fails.append(f"{rec.chart}@{rec.x}: {exc}")
                continue
            new.global_x = pert.wrap(new.global_x).tolist()
            moved.append(new)
            disp.append(pert.param_distance(new.global_x, rec.global_x))
        distinct = []
        for r in moved:
            if all(pert.param_distance(r.global_x, o.global_x) >= scan.r_dedup for o in distinct):
                distinct.append(r)
        coarse = global_scan(pert, tol=tol, threads=threads)
        new_points = sum(
            1
            for r in coarse.records
            if all(pert.param_distance(r.global_x, o.global_x) >= coarse.r_dedup for o in distinct)
        )
        count = len(distinct)
        preserved = count == len(scan.records) and new_points == 0 and all(
            r.classification == "nondegenerate" for r in distinct
        )
        rows.append(
            StabilityRow(
                epsilon=eps,
                cm_norm=eps,
                continued=count,
                count_before=len(scan.records),
                count_after=len(coarse.records),
                new_points=new_points,
                max_displacement=max(disp) if disp else 0.0,
                displacements=disp,
                preserved=preserved,
                failures=fails,
            )
        )
    ratios = []
    for a, b in zip(rows, rows[1:]):
        ratios.append(a.max_displacement / b.max_displacement if b.max_displacement > 0 else None)
    return StabilityReport(rows, ratios, seed, direction.to_dict())


# -- genericity ------------------------------------------------------------------------


@dataclass
class GenericityReport:
    before: ScanReport
    after: ScanReport
    epsilon: float
    seed: int
    rounds: int
    max_rounds: int
    success: bool
    exhausted: bool
    perturbation: dict | None
    cm_norm: float | None
    min_abs_hessian_det: float | None
    min_abs_eigenvalue: float | None

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["before"] = self.before.to_dict()
        d["after"] = self.after.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GenericityReport":
        d = dict(d)
        d["before"] = ScanReport.from_dict(d["before"])
        d["after"] = ScanReport.from_dict(d["after"])
        return cls(**d)


def _is_generic(scan: ScanReport) -> bool:
    return scan.all_nondegenerate


def _min_abs_eig(scan: ScanReport) -> float | None:
    vals = [min(abs(e) for e in r.eigenvalues) for r in scan.records]
    return min(vals) if vals else None


def perturb_to_generic(
    manifold: Manifold,
    epsilon: float,
    seed: int = 0,
    max_rounds: int = 5,
    seeds_per_axis: int | None = None,
    tol: Tolerances = DEFAULTS,
    threads: int = 1,
    before: ScanReport | None = None,
) -> GenericityReport:
    """Randomly perturb until every critical point of ``H`` is nondegenerate.

    Each round draws ``k`` afresh from the original metric: canonical
    directions with coefficients uniform on ``[-epsilon, epsilon]``, centered
    on a coarse covering grid when ``H`` is constant and on a small grid
    around each degenerate point otherwise. Running out of rounds is
    reported, not raised.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    if before is None:
        before = global_scan(manifold, tol=tol, threads=threads)
    common = dict(epsilon=float(epsilon), seed=int(seed), max_rounds=int(max_rounds))
    if _is_generic(before) or epsilon == 0:
        ok = _is_generic(before)
        return GenericityReport(
            before=before, after=before, rounds=0, success=ok, exhausted=False, perturbation=None,
            cm_norm=None, min_abs_hessian_det=before.min_abs_hessian_det if ok else None,
            min_abs_eigenvalue=_min_abs_eig(before), **common,
        )
    _require_translation(manifold)
    if before.constant_H_flag:
        centers, r_b = covering_centers(manifold)
    else:
        pts = [r.global_x for r in before.records if r.classification != "nondegenerate"]
        r_b = 0.5 * min(c.radius for c in manifold.charts)
        offsets = np.array(np.meshgrid(*[[-0.5 * r_b, 0.0, 0.5 * r_b]] * manifold.dim, indexing="ij"))
        offsets = offsets.reshape(manifold.dim, -1).T
        centers = np.concatenate([np.asarray(p) + offsets for p in pts])
    rng = np.random.default_rng(seed)
    after, k, rounds = before, None, 0
    for rounds in range(1, max_rounds + 1):
        k = random_canonical_field(manifold, centers, r_b, epsilon, rng)
        if neumann_ratio(manifold, k) >= 1.0:
            raise SeriesDiverges(f"epsilon = {epsilon:g} is too large: ||g^-1 k|| >= 1 on the charts")
        after = global_scan(manifold.perturbed(k), seeds_per_axis, tol=tol, threads=threads)
        if _is_generic(after):
            break
    ok = _is_generic(after)
    norm = cm_norm(k, manifold.atlas, k.order, tol.grid_res)
    return GenericityReport(
        before=before, after=after, rounds=rounds, success=ok, exhausted=not ok, perturbation=k.to_dict(),
        cm_norm=norm, min_abs_hessian_det=after.min_abs_hessian_det, min_abs_eigenvalue=_min_abs_eig(after),
        **common,
    )


def perturbed_from_dict(manifold: Manifold, d: dict) -> Manifold:
    """Rebuild ``g + k`` from the ``perturbation`` entry of a :class:`GenericityReport`."""
    bumps = [Bump(b["nu"], tuple(b["center"]), b["r_b"], b["t_b"], b["coef"]) for b in d["bumps"]]
    order = min(c.metric.order for c in manifold.charts)
    period = None if d.get("period") is None else tuple(d["period"])
    return manifold.perturbed(CanonicalPerturbationField(d["dim"], bumps, order=order, period=period))


__all__ = [
    "Bump",
    "CanonicalPerturbationField",
    "GenericityReport",
    "PerturbationTensor",
    "StabilityReport",
    "StabilityRow",
    "SurjectivityReport",
    "canonical_perturbation",
    "covering_centers",
    "cutoff",
    "cutoff_jet",
    "frechet_F_k",
    "frechet_inner",
    "frechet_reduced",
    "neumann_ratio",
    "perturb_to_generic",
    "perturbed_from_dict",
    "random_canonical_field",
    "stability_check",
    "surjectivity_matrix",
    "support_norm",
]
