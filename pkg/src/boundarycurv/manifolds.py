"""Manifolds as atlases of Fermi charts, and the builtin examples."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, replace

import numpy as np

from . import expr
from .errors import SpecError
from .geometry import AmbientBoundarySpec, FermiChart, cofactor_normal, fermi_pullback
from .jets import jet_space
from .tensors import DEFAULT_ORDER, ChartAtlas, ShiftedField, SymTensorField

TWO_PI = 2.0 * math.pi


@dataclass
class Manifold:
    """A boundary described by a chart atlas.

    For translation atlases every chart reads the shared global parameter as
    ``global = chart.center + x``, which is what lets perturbation tensors be
    written once in global coordinates.
    """

    name: str
    dim: int
    atlas: ChartAtlas
    source: str = "builtin"

    @property
    def charts(self) -> list[FermiChart]:
        return self.atlas.charts

    def wrap(self, g) -> np.ndarray:
        g = np.asarray(g, dtype=float).copy()
        if self.atlas.period is not None:
            for a, p in enumerate(self.atlas.period):
                if p is not None:
                    g[a] = g[a] % p
        return g

    def param_distance(self, a, b) -> float:
        d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
        if self.atlas.period is not None:
            for i, p in enumerate(self.atlas.period):
                if p is not None:
                    d[i] -= p * np.round(d[i] / p)
        return float(np.linalg.norm(d))

    def perturbed(self, k_global: SymTensorField) -> "Manifold":
        """``g + k`` with ``k`` written in global parameter coordinates."""
        if not self.atlas.translation and len(self.charts) > 1:
            raise SpecError(
                "perturbations need a translation atlas (charts sharing one global parameter); "
                f"{self.name!r} uses charts with nontrivial transition maps"
            )
        charts = [
            c.with_metric(c.metric + ShiftedField(k_global, c.center), provenance=c.provenance + "+k")
            for c in self.charts
        ]
        atlas = replace(self.atlas, charts=charts)
        return replace(self, atlas=atlas)

    def chart_for_global(self, g) -> tuple[FermiChart, np.ndarray]:
        """The chart whose center is nearest to a global parameter, with local coordinates."""
        best = None
        for c in self.charts:
            d = np.asarray(g, dtype=float) - np.asarray(c.center)
            if self.atlas.period is not None:
                for i, p in enumerate(self.atlas.period):
                    if p is not None:
                        d[i] -= p * np.round(d[i] / p)
            score = float(np.abs(d).max())
            if best is None or score < best[0]:
                best = (score, c, d)
        return best[1], best[2]


def _fmt(v: float) -> str:
    return repr(float(v))


def ellipse(a: float = 2.0, b: float = 1.0, offset: float = 0.0, charts: int = 4, depth: float = 0.5,
            order: int = DEFAULT_ORDER, name: str | None = None) -> Manifold:
    """Ellipse ``(a cos x1, b sin x1)`` bounding the filled ellipse, periodic in x1."""
    if a <= 0 or b <= 0:
        raise SpecError("ellipse semi-axes must be positive")
    spec = AmbientBoundarySpec.parse(1, [f"{_fmt(a)}*cos(x1)", f"{_fmt(b)}*sin(x1)"])
    R = 1.25 * math.pi / charts
    chart_list = [
        fermi_pullback(spec, [(offset + k * TWO_PI / charts) % TWO_PI], R, depth, name=f"c{k}", order=order)
        for k in range(charts)
    ]
    atlas = ChartAtlas(chart_list, translation=True, period=(TWO_PI,))
    label = name or f"ellipse({a:g},{b:g})"
    return Manifold(label, 1, atlas)


def circle(r: float = 1.0, **kw) -> Manifold:
    kw.setdefault("name", "circle" if r == 1.0 else f"circle({r:g})")
    return ellipse(r, r, **kw)


def disk(**kw) -> Manifold:
    kw.setdefault("name", "disk")
    return ellipse(1.0, 1.0, **kw)


def _face_spec(axes, axis: int, sign: int) -> AmbientBoundarySpec:
    others = [i for i in range(3) if i != axis]
    d = ["", "", ""]
    d[axis] = _fmt(sign)
    d[others[0]] = "x1"
    d[others[1]] = "x2"
    denom = " + ".join(f"({d[i]})^2/{_fmt(axes[i] ** 2)}" for i in range(3))
    texts = [f"({d[i]})/sqrt({denom})" for i in range(3)]
    spec = AmbientBoundarySpec.parse(2, texts)
    # choose the orientation that points toward the origin (inside)
    sp = jet_space(3, 1)
    pos = spec.position_jet(jet_space(3, 2), np.zeros(2))
    tang = np.stack([jet_space(3, 2).diff(pos, i) for i in range(2)], axis=-3)
    nu = cofactor_normal(sp, tang)[..., 0]
    p0 = pos[..., 0]
    spec.orientation = -1 if float(nu @ p0) > 0 else 1
    return spec


def ellipsoid(a: float = 1.0, b: float = 1.3, c: float = 1.7, radius: float = 1.1, depth: float = 0.5,
              order: int = DEFAULT_ORDER, name: str | None = None) -> Manifold:
    """Ellipsoid covered by six cube-face charts ``direction = (+-1, x1, x2)`` etc.

    Each axis endpoint sits at the center of its face chart. Transition maps
    are not translations, so the atlas is not a translation atlas.
    """
    axes = (a, b, c)
    if min(axes) <= 0:
        raise SpecError("ellipsoid semi-axes must be positive")
    charts = []
    labels = "xyz"
    for axis in range(3):
        for sign in (1, -1):
            spec = _face_spec(axes, axis, sign)
            nm = ("+" if sign > 0 else "-") + labels[axis]
            charts.append(fermi_pullback(spec, [0.0, 0.0], radius, depth, name=nm, order=order))
    overlaps = [(i, j) for i in range(6) for j in range(i + 1, 6) if i // 2 != j // 2]
    atlas = ChartAtlas(charts, translation=False, period=None, overlaps=overlaps)
    return Manifold(name or f"ellipsoid({a:g},{b:g},{c:g})", 2, atlas)


def ball3(r: float = 1.0, **kw) -> Manifold:
    kw.setdefault("name", "ball3" if r == 1.0 else f"ball3({r:g})")
    return ellipsoid(r, r, r, **kw)


def half_space(n: int = 2, period: float = TWO_PI, charts_per_axis: int = 2, depth: float = 0.5,
               order: int = DEFAULT_ORDER, name: str | None = None) -> Manifold:
    """Flat boundary ``{y_{n+1} = 0}`` with periodic parameters (a flat torus, ``H = 0``)."""
    texts = [f"x{i + 1}" for i in range(n)] + ["0"]
    spec = AmbientBoundarySpec.parse(n, texts)
    step = period / charts_per_axis
    R = 0.625 * step
    centers = np.stack(
        np.meshgrid(*[(np.arange(charts_per_axis) + 0.5) * step] * n, indexing="ij"), axis=-1
    ).reshape(-1, n)
    chart_list = [fermi_pullback(spec, c, R, depth, name=f"c{k}", order=order) for k, c in enumerate(centers)]
    atlas = ChartAtlas(chart_list, translation=True, period=(period,) * n)
    return Manifold(name or ("half-space" if n == 2 else f"half-space({n})"), n, atlas)


BUILTINS = {
    "half-space": half_space,
    "disk": disk,
    "circle": circle,
    "ball3": ball3,
    "ellipse": ellipse,
    "ellipsoid": ellipsoid,
}

_BUILTIN_RE = re.compile(r"^\s*([a-z0-9-]+)\s*(?:\((.*)\))?\s*$")


def builtin(text: str, **kwargs) -> Manifold:
    """Build a builtin manifold from ``"ellipse(2, 1)"``-style text."""
    m = _BUILTIN_RE.match(text)
    if not m or m.group(1) not in BUILTINS:
        raise SpecError(f"unknown builtin {text!r}; choose from {', '.join(BUILTINS)}")
    fn = BUILTINS[m.group(1)]
    args = []
    if m.group(2) is not None and m.group(2).strip():
        try:
            args = [float(expr.parse(s).evaluate({})) for s in m.group(2).split(",")]
        except Exception as exc:  # noqa: BLE001 - reported as spec error
            raise SpecError(f"bad builtin arguments in {text!r}: {exc}") from None
    if m.group(1) == "half-space" and args:
        args[0] = int(args[0])
    try:
        return fn(*args, **kwargs)
    except TypeError as exc:
        raise SpecError(f"bad builtin arguments in {text!r}: {exc}") from None
