"""Critical points of the boundary mean curvature.

``grad_H`` is the map ``x -> d_x H(x, 0)`` with ``H = -1/2 g^ij d_t g_ij``.
Critical points are located by damped Newton iterations started from a
uniform seed grid in every chart, then merged across overlapping charts.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field as dc_field

import numpy as np

from .errors import NoConvergence, NotSPD, OrderExceeded
from .geometry import FermiChart
from .jets import jet_space
from .manifolds import Manifold
from .tensors import MultiIndex, SymTensorField, invert_at
from .tolerances import DEFAULTS, Tolerances


def _base_point(g: SymTensorField, x) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape != (g.dim,):
        raise ValueError(f"x must have {g.dim} coordinates")
    return np.append(x, 0.0)


def _inverse_derivative(ginv: np.ndarray, gs: np.ndarray) -> np.ndarray:
    return -ginv @ gs @ ginv


def grad_H(g: SymTensorField, x) -> np.ndarray:
    """``-1/2 d_s (g^ij g_ij,t)`` at ``(x, 0)``, expanded with ``d_s g^ij = -g^im g_ml,s g^lj``."""
    n = g.dim
    if g.order < 2:
        raise OrderExceeded("grad_H needs metric derivatives of order 2")
    p = _base_point(g, x)
    sp = g.space(2)
    j = g.jet(p, 2)
    ginv = invert_at(j[..., 0])
    gt = sp.derivative(j, MultiIndex.of(n, n).exponents)
    out = np.empty(n)
    for s in range(n):
        gs = sp.derivative(j, MultiIndex.of(n, s).exponents)
        gts = sp.derivative(j, MultiIndex.of(n, s, n).exponents)
        out[s] = -0.5 * (np.sum(_inverse_derivative(ginv, gs) * gt) + np.sum(ginv * gts))
    return out


def H_jet(g: SymTensorField, x) -> tuple[float, np.ndarray, np.ndarray]:
    """Value, gradient and Hessian of ``H(., 0)`` at ``x`` from one order-3 jet."""
    n = g.dim
    if g.order < 3:
        raise OrderExceeded(f"the Hessian of H needs metric order 3, field has {g.order}")
    p = _base_point(g, x)
    sp3 = g.space(3)
    j = g.jet(p, 3)
    invert_at(j[..., 0])
    sp2 = jet_space(n + 1, 2)
    gt = sp3.diff(j, n)
    g2 = sp3.truncate(j, 2)
    ginv = sp2.matinv(g2)
    q = sp2.mul(ginv, gt).sum(axis=(0, 1))
    H = -0.5 * q
    grad = np.array([sp2.derivative(H, MultiIndex.of(n, s).exponents) for s in range(n)])
    hess = np.empty((n, n))
    for r in range(n):
        for s in range(r, n):
            hess[r, s] = hess[s, r] = sp2.derivative(H, MultiIndex.of(n, r, s).exponents)
    return float(H[0]), grad, hess


def hessian_H(g: SymTensorField, x) -> np.ndarray:
    """Matrix ``d_r d_s H(x, 0)``; requires metric order >= 3."""
    return H_jet(g, x)[2]


def H_value(g: SymTensorField, x) -> float:
    p = _base_point(g, x)
    sp = g.space(1)
    j = g.jet(p, 1)
    gt = sp.derivative(j, MultiIndex.of(g.dim, g.dim).exponents)
    return float(-0.5 * np.sum(invert_at(j[..., 0]) * gt))


def grad_values(g: SymTensorField, xs) -> np.ndarray:
    """``grad_H`` at many points ``xs`` (shape ``(m, n)``); non-SPD points give NaN rows."""
    n = g.dim
    xs = np.asarray(xs, dtype=float).reshape(-1, n)
    pts = np.concatenate([xs, np.zeros((len(xs), 1))], axis=1)
    sp = g.space(2)
    j = g.jet(pts, 2)
    g0 = j[..., 0]
    ok = np.linalg.eigvalsh(g0).min(axis=-1) > DEFAULTS.spd_floor
    G = np.linalg.inv(np.where(ok[:, None, None], g0, np.eye(n)))
    gt = sp.derivative(j, MultiIndex.of(n, n).exponents)
    out = np.empty((len(xs), n))
    for s in range(n):
        gs = sp.derivative(j, MultiIndex.of(n, s).exponents)
        gts = sp.derivative(j, MultiIndex.of(n, s, n).exponents)
        out[:, s] = -0.5 * (
            -np.einsum("mij,mjk,mkl,mli->m", G, gs, G, gt) + np.einsum("mij,mji->m", G, gts)
        )
    out[~ok] = np.nan
    return out


def H_values(g: SymTensorField, xs) -> np.ndarray:
    """``H(x, 0)`` at many points ``xs`` (shape ``(m, n)``) in one batched evaluation."""
    xs = np.asarray(xs, dtype=float).reshape(-1, g.dim)
    pts = np.concatenate([xs, np.zeros((len(xs), 1))], axis=1)
    sp = g.space(1)
    j = g.jet(pts, 1)
    gt = sp.derivative(j, MultiIndex.of(g.dim, g.dim).exponents)
    g0 = j[..., 0]
    if np.linalg.eigvalsh(g0).min() <= DEFAULTS.spd_floor:
        raise NotSPD("metric not positive definite at a sample point")
    return -0.5 * np.einsum("mij,mij->m", np.linalg.inv(g0), gt)


# -- records ---------------------------------------------------------------------------


@dataclass
class CriticalPointRecord:
    chart: str
    x: list[float]
    global_x: list[float]
    point: list[float] | None
    grad_norm: float
    hessian: list[list[float]]
    eigenvalues: list[float]
    classification: str
    morse_index: int | None
    H_value: float
    eps_nd: float
    iterations: int = 0

    @property
    def kind(self) -> str:
        if self.classification != "nondegenerate":
            return self.classification
        n = len(self.x)
        if self.morse_index == 0:
            return "minimum"
        if self.morse_index == n:
            return "maximum"
        return "saddle"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CriticalPointRecord":
        return cls(**d)


def classify(hess: np.ndarray, eps_nd: float = DEFAULTS.eps_nd) -> tuple[str, int | None, np.ndarray, float]:
    """Nondegenerate iff ``min |eig| > eps_nd * max(1, ||hess||)``; index counts negative eigenvalues."""
    eig = np.linalg.eigvalsh(0.5 * (hess + hess.T))
    thresh = eps_nd * max(1.0, float(np.linalg.norm(hess, 2)))
    if np.min(np.abs(eig)) > thresh:
        return "nondegenerate", int(np.sum(eig < 0)), eig, thresh
    return "degenerate", None, eig, thresh


def newton_find(
    chart: FermiChart,
    seed,
    tau_crit: float = DEFAULTS.tau_crit,
    max_iter: int = DEFAULTS.max_iter,
    eps_nd: float = DEFAULTS.eps_nd,
    metric: SymTensorField | None = None,
) -> CriticalPointRecord:
    """Damped Newton on ``grad_H = 0`` inside ``chart``.

    Steps halve while the gradient norm increases or the iterate leaves the
    chart. Near-singular Hessians get their small eigenvalues pushed away
    from zero by ``mu = 1e-8 ||hess||``; a Hessian that is zero relative to
    the gradient falls back to a gradient-descent step of length ``R/2``.
    Seeds are abandoned early when the Newton target keeps landing well
    outside the chart, ``H`` looks affine for several steps, or ten steps
    fail to halve the gradient norm.
    """
    g = chart.metric if metric is None else metric
    R = chart.radius
    x = np.asarray(seed, dtype=float).reshape(-1).copy()
    if not chart.contains(x):
        raise NoConvergence("seed outside chart")
    H, grad, hess = H_jet(g, x)
    gn = float(np.linalg.norm(grad))
    it = 0
    outward = flat = 0
    history = [gn]
    while gn > tau_crit:
        if it >= max_iter:
            raise NoConvergence(f"no convergence after {max_iter} iterations (|grad| = {gn:.3e})")
        it += 1
        hn = float(np.linalg.norm(hess, 2))
        if hn * R < 1e-9 * gn:
            # singular Hessian: normalized gradient-descent step; an affine stretch
            # wider than the chart holds no critical point
            flat += 1
            if flat >= 5:
                raise NoConvergence("H is affine around the iterate")
            step = -(0.5 * R / gn) * grad
        else:
            mu = 1e-8 * hn
            w, V = np.linalg.eigh(hess)
            w = np.where(np.abs(w) >= mu, w, np.where(w >= 0, w + mu, w - mu))
            step = -V @ ((V.T @ grad) / w)
        # a root persistently predicted beyond the chart belongs to a neighbouring chart
        outward += int(np.max(np.abs(x + step)) > 1.5 * R)
        if outward >= 3:
            raise NoConvergence("Newton target lies outside the chart")
        snorm = float(np.max(np.abs(step)))
        if snorm > 0.5 * R:
            step *= 0.5 * R / snorm
        alpha = 1.0
        for _ in range(20):
            trial = x + alpha * step
            if chart.contains(trial):
                try:
                    Ht, gt_, ht = H_jet(g, trial)
                except NotSPD:
                    Ht = None
                # backtrack only on an increase beyond rounding; flat stretches are crossed
                if Ht is not None and np.linalg.norm(gt_) <= gn * (1.0 + 1e-9):
                    break
            alpha *= 0.5
        else:
            raise NoConvergence(f"line search stalled at |grad| = {gn:.3e}")
        x, H, grad, hess = trial, Ht, gt_, ht
        gn = float(np.linalg.norm(grad))
        history.append(gn)
        if len(history) > 10 and gn > 0.5 * history[-11]:
            raise NoConvergence(f"stalled at |grad| = {gn:.3e}")
    cls_, index, eig, thresh = classify(hess, eps_nd)
    point = chart.embedding(x)
    return CriticalPointRecord(
        chart=chart.name,
        x=x.tolist(),
        global_x=chart.to_global(x).tolist(),
        point=None if point is None else point.tolist(),
        grad_norm=gn,
        hessian=hess.tolist(),
        eigenvalues=eig.tolist(),
        classification=cls_,
        morse_index=index,
        H_value=H,
        eps_nd=thresh,
        iterations=it,
    )


# -- global scan ------------------------------------------------------------------------


@dataclass
class ScanReport:
    records: list[CriticalPointRecord]
    seeds_used: int
    failures: int
    constant_H_flag: bool
    H_min: float
    H_max: float
    min_abs_hessian_det: float | None
    r_dedup: float
    parameters: dict = dc_field(default_factory=dict)

    @property
    def classification(self) -> str:
        if self.constant_H_flag:
            return "constant-field"
        if all(r.classification == "nondegenerate" for r in self.records):
            return "all-nondegenerate"
        return "has-degenerate"

    @property
    def all_nondegenerate(self) -> bool:
        return not self.constant_H_flag and all(r.classification == "nondegenerate" for r in self.records)

    def count(self, kind: str) -> int:
        return sum(1 for r in self.records if r.kind == kind)

    @property
    def euler_sum(self) -> int:
        return sum((-1) ** r.morse_index for r in self.records if r.morse_index is not None)

    def to_dict(self) -> dict:
        return {
            "records": [r.to_dict() for r in self.records],
            "seeds_used": self.seeds_used,
            "failures": self.failures,
            "constant_H_flag": self.constant_H_flag,
            "classification": self.classification,
            "H_min": self.H_min,
            "H_max": self.H_max,
            "min_abs_hessian_det": self.min_abs_hessian_det,
            "r_dedup": self.r_dedup,
            "counts": {k: self.count(k) for k in ("minimum", "maximum", "saddle", "degenerate")},
            "euler_sum": self.euler_sum,
            "parameters": self.parameters,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScanReport":
        return cls(
            records=[CriticalPointRecord.from_dict(r) for r in d["records"]],
            seeds_used=d["seeds_used"],
            failures=d["failures"],
            constant_H_flag=d["constant_H_flag"],
            H_min=d["H_min"],
            H_max=d["H_max"],
            min_abs_hessian_det=d["min_abs_hessian_det"],
            r_dedup=d["r_dedup"],
            parameters=d.get("parameters", {}),
        )


def seed_grid(chart: FermiChart, per_axis: int) -> np.ndarray:
    """Cell-centered uniform grid of ``per_axis**n`` seeds over the chart box."""
    R = chart.radius
    ax = -R + (np.arange(per_axis) + 0.5) * (2 * R / per_axis)
    return np.array(list(itertools.product(ax, repeat=chart.dim)))


def bracket_seeds(chart: FermiChart, per_axis: int, center=None, half_width: float | None = None) -> np.ndarray:
    """Seeds in grid cells where every component of ``grad_H`` changes sign.

    The gradient is sampled at ``per_axis`` points per axis spanning the chart
    box, or the box of ``half_width`` around ``center`` clipped to the chart.
    In one dimension the seed is the linear-interpolation root, otherwise the
    cell center. This catches close pairs of critical points that a coarse
    Newton seed grid funnels into a single basin.
    """
    n, R = chart.dim, chart.radius
    c = np.zeros(n) if center is None else np.asarray(center, dtype=float)
    h = R if half_width is None else half_width
    axes = [np.linspace(max(-R, c[a] - h), min(R, c[a] + h), per_axis) for a in range(n)]
    pts = np.array(list(itertools.product(*axes)))
    grad = grad_values(chart.metric, pts).reshape((per_axis,) * n + (n,))
    seeds = []
    for cell in itertools.product(range(per_axis - 1), repeat=n):
        corners = np.array([grad[tuple(c + o for c, o in zip(cell, off))] for off in itertools.product((0, 1), repeat=n)])
        if np.isnan(corners).any():
            continue
        if np.all((corners.min(axis=0) <= 0) & (corners.max(axis=0) >= 0)):
            lo = np.array([axes[a][cell[a]] for a in range(n)])
            step = np.array([axes[a][1] - axes[a][0] for a in range(n)])
            if n == 1:
                g0, g1 = corners[0, 0], corners[1, 0]
                w = 0.5 if g0 == g1 else g0 / (g0 - g1)
                seeds.append(lo + w * step)
            else:
                seeds.append(lo + 0.5 * step)
    return np.array(seeds).reshape(-1, n)


def record_distance(manifold: Manifold, a: CriticalPointRecord, b: CriticalPointRecord) -> float:
    """Boundary distance: global parameter distance on translation atlases, else ambient distance."""
    if manifold.atlas.translation:
        return manifold.param_distance(a.global_x, b.global_x)
    if a.point is not None and b.point is not None:
        return float(np.linalg.norm(np.subtract(a.point, b.point)))
    if a.chart == b.chart:
        return float(np.linalg.norm(np.subtract(a.x, b.x)))
    return float("inf")


def sample_H(manifold: Manifold, per_axis: int) -> np.ndarray:
    return np.concatenate([H_values(c.metric, seed_grid(c, per_axis)) for c in manifold.charts])


def _root_radius(rec: CriticalPointRecord, tau_crit: float) -> float:
    """Distance within which two Newton solutions are the same root: ``1e3 |grad| / min |eig|``."""
    lam = min(abs(e) for e in rec.eigenvalues) if rec.eigenvalues else 0.0
    return 1e3 * max(rec.grad_norm, tau_crit) / max(lam, 1e-300)


def _merge(manifold: Manifold, accepted: list, results: list, r_dedup: float, tau_crit: float) -> list:
    """Sequential dedup in seed order; keeps the representative deepest inside its chart.

    Two records merge when they share a Morse index and sit closer than both
    ``r_dedup`` and the sum of their Newton error radii, so distinct nearby
    critical points of a busy curvature field are kept apart.
    """
    accepted = list(accepted)
    for rec in results:
        if rec is None:
            continue
        if manifold.atlas.translation:
            rec.global_x = manifold.wrap(rec.global_x).tolist()
        dup = None
        for k, other in enumerate(accepted):
            if rec.morse_index != other.morse_index:
                continue
            radius = min(r_dedup, _root_radius(rec, tau_crit) + _root_radius(other, tau_crit))
            if record_distance(manifold, rec, other) < radius:
                dup = k
                break
        if dup is None:
            accepted.append(rec)
        elif np.max(np.abs(rec.x)) < np.max(np.abs(accepted[dup].x)):
            accepted[dup] = rec
    return accepted


def global_scan(
    manifold: Manifold,
    seeds_per_axis: int | None = None,
    tol: Tolerances = DEFAULTS,
    threads: int = 1,
) -> ScanReport:
    """Multi-start Newton over every chart, deduplicated across chart overlaps.

    Seeds are the uniform grid of :func:`seed_grid` followed by the
    sign-change seeds of :func:`bracket_seeds` on a finer sample grid, and a
    second bracketing pass on three nested fine grids around every record
    found. When
    the sampled range of ``H`` is below ``tau_const * (1 + |mean H|)`` the
    manifold is reported as a constant-curvature field and no Newton
    iterations run.
    """
    per_axis = tol.seeds_per_axis if seeds_per_axis is None else seeds_per_axis
    r_dedup = tol.r_dedup_frac * min(c.radius for c in manifold.charts)
    params = dict(tol.as_dict(), seeds_per_axis=per_axis, r_dedup=r_dedup)
    samples = np.concatenate([sample_H(manifold, per_axis), sample_H(manifold, 2 * per_axis + 1)])
    h_min, h_max = float(samples.min()), float(samples.max())
    constant = (h_max - h_min) < tol.tau_const * (1.0 + abs(float(samples.mean())))
    jobs = [(c, s) for c in manifold.charts for s in seed_grid(c, per_axis)]
    if constant:
        return ScanReport([], len(jobs), 0, True, h_min, h_max, None, r_dedup, params)
    bracket = (16 * per_axis + 1) if manifold.dim == 1 else (4 * per_axis + 1)
    params["bracket_per_axis"] = bracket
    jobs += [(c, s) for c in manifold.charts for s in bracket_seeds(c, bracket)]

    def run(job):
        chart, seed = job
        try:
            rec = newton_find(chart, seed, tol.tau_crit, tol.max_iter, tol.eps_nd)
        except (NoConvergence, NotSPD):
            return None
        if not chart.contains(rec.x):
            return None
        return rec

    def run_all(batch):
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                return list(pool.map(run, batch))
        return [run(j) for j in batch]

    results = run_all(jobs)

    failures = sum(1 for r in results if r is None)
    accepted = _merge(manifold, [], results, r_dedup, tol.tau_crit)
    # fold partners sit right next to a found point: re-bracket on nested grids around each record
    cell = 2.0 * min(c.radius for c in manifold.charts) / (bracket - 1)
    fine, shrink = (65, 8.0) if manifold.dim == 1 else (9, 4.0)
    charts = {c.name: c for c in manifold.charts}
    local = []
    for r in accepted:
        for level in range(3):
            hw = cell / shrink**level
            spacing = 2.0 * hw / (fine - 1)
            seeds = bracket_seeds(charts[r.chart], fine, r.x, hw)
            # the record's own cell only leads back to the record
            seeds = seeds[np.max(np.abs(seeds - r.x), axis=1) > spacing] if len(seeds) else seeds
            local += [(charts[r.chart], s) for s in seeds]
    extra = run_all(local)
    failures += sum(1 for r in extra if r is None)
    accepted = _merge(manifold, accepted, extra, r_dedup, tol.tau_crit)
    params["refine_per_axis"] = fine
    dets = [abs(float(np.linalg.det(np.array(r.hessian)))) for r in accepted]
    return ScanReport(
        accepted,
        len(jobs) + len(local),
        failures,
        False,
        h_min,
        h_max,
        min(dets) if dets else None,
        r_dedup,
        params,
    )
