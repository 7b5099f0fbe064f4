"""Manifold spec files.

A spec file is a small ``key = value`` text with ``[section]`` headers. Three
modes are supported:

``builtin``
    one of the builtin manifolds, e.g. ``id = ellipse(2, 1)``.
``fermi``
    tangential metric components ``g_ij(x, t)`` given directly as
    expressions, either once in global coordinates over a box (``[fermi]``)
    or per chart in local coordinates (``[chart NAME]`` sections).
``ambient``
    a boundary parametrization ``y_a(x)`` into ``R^{n+1}`` plus an optional
    ambient metric ``G_ab(y)``; charts are Fermi pullbacks.

The grammar is documented in ``docs/format.md``. Every error carries the
line and column of the offending text.
"""

from __future__ import annotations

import hashlib
import itertools
import re
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from . import expr
from .errors import BoundaryCurvError, ParseError, SpecError
from .geometry import AmbientBoundarySpec, AmbientMetric, FermiChart, cofactor_normal, fermi_pullback
from .jets import jet_space
from .manifolds import Manifold, builtin
from .tensors import DEFAULT_ORDER, ChartAtlas, FieldDomain, MetricField, ShiftedField, parse_field

MODES = ("builtin", "fermi", "ambient")
BUILTIN_PREFIX = "builtin:"

_SECTION = re.compile(r"^\[\s*([A-Za-z]+)(?:\s+([A-Za-z0-9_.+-]+))?\s*\]$")
_KEY = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


@dataclass
class Entry:
    value: str
    line: int
    column: int


@dataclass
class Section:
    kind: str
    label: str | None
    line: int
    entries: dict[str, Entry] = dc_field(default_factory=dict)

    def get(self, key: str) -> Entry | None:
        return self.entries.get(key)

    def require(self, key: str) -> Entry:
        if key not in self.entries:
            what = self.kind + (f" {self.label}" if self.label else "")
            raise SpecError(f"section [{what}] needs '{key}'", self.line, 1)
        return self.entries[key]


@dataclass
class ManifoldSpecFile:
    """Parsed, not yet built, spec file."""

    name: str
    mode: str
    dim: int
    sections: list[Section]
    text: str
    source: str = "<string>"

    @property
    def spec_hash(self) -> str:
        return "sha256:" + hashlib.sha256(self.text.encode("utf-8")).hexdigest()

    def section(self, kind: str) -> Section | None:
        for s in self.sections:
            if s.kind == kind:
                return s
        return None

    def build(self, order: int = DEFAULT_ORDER) -> Manifold:
        if self.mode == "builtin":
            sec = self.section("builtin")
            if sec is None:
                raise SpecError("builtin mode needs a [builtin] section", 1, 1)
            ent = sec.require("id")
            try:
                m = builtin(ent.value, order=order)
            except SpecError as exc:
                raise SpecError(str(exc), ent.line, ent.column) from None
            if self.name:
                m.name = self.name
            return m
        if self.mode == "fermi":
            return _build_fermi(self, order)
        return _build_ambient(self, order)


# -- text layer -------------------------------------------------------------------------


def parse_text(text: str, source: str = "<string>") -> ManifoldSpecFile:
    """Parse spec text; raises :class:`SpecError` with line and column."""
    top = Section("top", None, 1)
    sections = [top]
    current = top
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        stripped = line.strip()
        if not stripped:
            continue
        indent = len(line) - len(line.lstrip())
        if stripped.startswith("["):
            m = _SECTION.match(stripped)
            if not m:
                raise SpecError(f"malformed section header {stripped!r}", lineno, indent + 1)
            kind, label = m.group(1).lower(), m.group(2)
            if kind not in ("builtin", "fermi", "chart", "ambient", "metric"):
                raise SpecError(f"unknown section [{kind}]", lineno, indent + 2)
            if kind == "chart" and not label:
                raise SpecError("[chart] sections need a name, e.g. [chart c0]", lineno, indent + 1)
            ident = (kind, label)
            if ident in seen:
                raise SpecError(f"duplicate section [{stripped[1:-1].strip()}]", lineno, indent + 1)
            seen.add(ident)
            current = Section(kind, label, lineno)
            sections.append(current)
            continue
        if "=" not in line:
            raise SpecError("expected 'key = value'", lineno, indent + 1)
        key_part, value_part = line.split("=", 1)
        key = key_part.strip()
        if not _KEY.match(key):
            raise SpecError(f"bad key {key!r}", lineno, indent + 1)
        value = value_part.strip()
        vcol = len(key_part) + 2 + (len(value_part) - len(value_part.lstrip()))
        if not value:
            raise SpecError(f"empty value for '{key}'", lineno, vcol)
        if key in current.entries:
            raise SpecError(f"duplicate key '{key}'", lineno, indent + 1)
        current.entries[key] = Entry(value, lineno, vcol)

    mode_ent = top.get("mode")
    if mode_ent is None:
        raise SpecError("missing 'mode' (builtin, fermi or ambient)", 1, 1)
    mode = mode_ent.value.lower()
    if mode not in MODES:
        raise SpecError(f"unknown mode {mode_ent.value!r}", mode_ent.line, mode_ent.column)
    for key, ent in top.entries.items():
        if key not in ("name", "mode", "dim"):
            raise SpecError(f"unknown top-level key '{key}'", ent.line, 1)
    name_ent = top.get("name")
    name = name_ent.value if name_ent else ""
    dim = 0
    if mode != "builtin":
        dim_ent = top.require("dim")
        dim = _integer(dim_ent)
        if dim < 1:
            raise SpecError("dim must be a positive integer", dim_ent.line, dim_ent.column)
    return ManifoldSpecFile(name, mode, dim, sections, text, source)


def load(path_or_builtin: str) -> ManifoldSpecFile:
    """Read a spec file, or wrap ``builtin:ellipse(2,1)``-style arguments."""
    if path_or_builtin.startswith(BUILTIN_PREFIX):
        ident = path_or_builtin[len(BUILTIN_PREFIX):].strip()
        return parse_text(f"mode = builtin\n[builtin]\nid = {ident}\n", source=path_or_builtin)
    path = Path(path_or_builtin)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise SpecError(f"cannot read spec file {str(path)!r}: {exc.strerror}") from None
    return parse_text(text, source=str(path))


# -- values -------------------------------------------------------------------------------


def _number(ent: Entry, text: str | None = None, offset: int = 0) -> float:
    src = ent.value if text is None else text
    try:
        v = float(expr.parse(src, ()).evaluate({}))
    except ParseError as exc:
        raise SpecError(f"bad number {src.strip()!r}: {exc}", ent.line, ent.column + offset + exc.offset) from None
    except (ZeroDivisionError, ValueError, FloatingPointError) as exc:
        raise SpecError(f"bad number {src.strip()!r}: {exc}", ent.line, ent.column + offset) from None
    if not np.isfinite(v):
        raise SpecError(f"value {src.strip()!r} is not finite", ent.line, ent.column + offset)
    return v


def _integer(ent: Entry) -> int:
    v = _number(ent)
    if v != int(v):
        raise SpecError(f"expected an integer, got {ent.value!r}", ent.line, ent.column)
    return int(v)


def _vector(ent: Entry, n: int, allow_none: bool = False) -> list:
    parts, out, offset = ent.value.split(","), [], 0
    if len(parts) == 1 and n > 1:
        parts = parts * n
        repeat = True
    else:
        repeat = False
    if len(parts) != n:
        raise SpecError(f"expected {n} comma-separated values, got {len(parts)}", ent.line, ent.column)
    for p in parts:
        if allow_none and p.strip().lower() == "none":
            out.append(None)
        else:
            out.append(_number(ent, p, offset))
        if not repeat:
            offset += len(p) + 1
    return out


def _expression(ent: Entry, names) -> str:
    try:
        expr.parse(ent.value, names)
    except ParseError as exc:
        raise SpecError(str(exc).rsplit(" at offset", 1)[0], ent.line, ent.column + exc.offset) from None
    return ent.value


def _check_keys(sec: Section, allowed) -> None:
    for key, ent in sec.entries.items():
        if key not in allowed:
            raise SpecError(f"unknown key '{key}' in [{sec.kind}]", ent.line, 1)


def _component_keys(prefix: str, n: int) -> dict[str, tuple[int, int]]:
    return {f"{prefix}{i + 1}{j + 1}": (i, j) for i in range(n) for j in range(n)}


def _components(sec: Section, prefix: str, n: int, names) -> dict[tuple[int, int], str]:
    keys = _component_keys(prefix, n)
    out = {}
    for key, ent in sec.entries.items():
        if key in keys:
            i, j = keys[key]
            ij = (min(i, j), max(i, j))
            if ij in out:
                raise SpecError(f"component {key} given twice (the metric is symmetric)", ent.line, 1)
            out[ij] = _expression(ent, names)
    return out


# -- chart layout -------------------------------------------------------------------------


def _layout(sec: Section, n: int):
    """Chart centers and radius over ``[lower, upper]`` from ``charts``/``radius``/``period``."""
    lower = np.array(_vector(sec.require("lower"), n))
    upper = np.array(_vector(sec.require("upper"), n))
    lo_ent = sec.require("lower")
    if np.any(upper <= lower):
        raise SpecError("upper must exceed lower on every axis", sec.require("upper").line, 1)
    period = None
    if sec.get("period") is not None:
        period = _vector(sec.get("period"), n, allow_none=True)
        for a, p in enumerate(period):
            if p is not None and abs(p - (upper[a] - lower[a])) > 1e-12 * max(1.0, abs(p)):
                raise SpecError(f"period on axis {a + 1} must equal upper - lower", sec.get("period").line, 1)
    counts = [int(c) for c in _vector(sec.get("charts") or Entry("4" if n == 1 else "2", lo_ent.line, 1), n)]
    if min(counts) < 1:
        raise SpecError("charts must be positive", sec.get("charts").line, 1)
    steps = (upper - lower) / counts
    if sec.get("radius") is not None:
        radius = _number(sec.get("radius"))
    else:
        radius = 0.625 * float(steps.max())
    axes = []
    for a in range(n):
        periodic = period is not None and period[a] is not None
        if periodic:
            centers = lower[a] + (np.arange(counts[a]) + 0.5) * steps[a]
            gap = steps[a]
        elif counts[a] == 1:
            centers = np.array([0.5 * (lower[a] + upper[a])])
            gap = upper[a] - lower[a]
        else:
            centers = np.linspace(lower[a] + radius, upper[a] - radius, counts[a])
            gap = centers[1] - centers[0]
        if (radius <= 0.5 * gap) if counts[a] > 1 or periodic else (radius < 0.5 * gap):
            where = sec.get("radius") or sec.get("charts") or lo_ent
            raise SpecError(f"charts do not cover axis {a + 1}; raise 'radius' or 'charts'", where.line, 1)
        if not periodic and counts[a] > 1 and 2 * radius > upper[a] - lower[a]:
            raise SpecError(f"radius too large for axis {a + 1}", (sec.get("radius") or lo_ent).line, 1)
        axes.append(centers)
    centers = np.array(list(itertools.product(*axes)))
    return centers, float(radius), (None if period is None else tuple(period))


def _depth(sec: Section) -> float:
    ent = sec.get("depth")
    d = 0.5 if ent is None else _number(ent)
    if d <= 0:
        raise SpecError("depth must be positive", ent.line, ent.column)
    return d


def _validated(metric, chart_name: str, radius: float, depth: float, line: int):
    n = metric.dim
    axes = [np.linspace(-radius, radius, 5)] * n + [np.linspace(0.0, depth, 3)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n + 1)
    try:
        MetricField.validate(metric, pts)
    except BoundaryCurvError as exc:
        raise SpecError(f"chart {chart_name}: {exc}", line, 1) from None
    return metric


def _build_fermi(spec: ManifoldSpecFile, order: int) -> Manifold:
    n = spec.dim
    names = expr.field_variables(n)
    head = spec.section("fermi")
    chart_secs = [s for s in spec.sections if s.kind == "chart"]
    comp_keys = set(_component_keys("g", n))
    charts = []
    if chart_secs:
        period = None
        if head is not None:
            _check_keys(head, {"period", "depth"})
            if head.get("period") is not None:
                period = tuple(_vector(head.get("period"), n, allow_none=True))
        for sec in chart_secs:
            _check_keys(sec, {"center", "radius", "depth"} | comp_keys)
            center = _vector(sec.require("center"), n)
            radius = _number(sec.require("radius"))
            if radius <= 0:
                raise SpecError("radius must be positive", sec.require("radius").line, 1)
            depth = _depth(sec) if sec.get("depth") is not None else (_depth(head) if head else 0.5)
            comps = _components(sec, "g", n, names)
            if not comps:
                raise SpecError(f"chart {sec.label} gives no metric components", sec.line, 1)
            domain = FieldDomain((-radius,) * n, (radius,) * n, depth)
            metric = _validated(parse_field(comps, n, order=order, domain=domain), sec.label, radius, depth, sec.line)
            charts.append(FermiChart(sec.label, tuple(center), radius, depth, metric, provenance="expression-text"))
    else:
        if head is None:
            raise SpecError("fermi mode needs a [fermi] section or [chart NAME] sections", 1, 1)
        _check_keys(head, {"lower", "upper", "period", "charts", "radius", "depth"} | comp_keys)
        comps = _components(head, "g", n, names)
        if not comps:
            raise SpecError("[fermi] gives no metric components", head.line, 1)
        centers, radius, period = _layout(head, n)
        depth = _depth(head)
        base = parse_field(comps, n, order=order)
        for k, c in enumerate(centers):
            domain = FieldDomain((-radius,) * n, (radius,) * n, depth)
            metric = _validated(ShiftedField(base, c, domain=domain), f"c{k}", radius, depth, head.line)
            charts.append(FermiChart(f"c{k}", tuple(float(v) for v in c), radius, depth, metric,
                                     provenance="expression-text"))
    atlas = ChartAtlas(charts, translation=True, period=period)
    return Manifold(spec.name or "fermi-spec", n, atlas, source=spec.source)


def _auto_orientation(bspec: AmbientBoundarySpec, lower, upper) -> int:
    """+1 when the cofactor normal points, on balance, toward the centroid of the sampled boundary."""
    n = bspec.dim
    axes = [np.linspace(lo, hi, 9) for lo, hi in zip(lower, upper)]
    params = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    sp = jet_space(n + 1, 2)
    pos = bspec.position_jet(sp, params)
    tang = np.stack([sp.diff(pos, i) for i in range(n)], axis=-3)
    nu = cofactor_normal(jet_space(n + 1, 1), sp.truncate(tang, 1))[..., 0]
    p = pos[..., 0]
    score = float(np.sum(nu * (p.mean(axis=0) - p)))
    return -1 if score < 0 else 1


def _build_ambient(spec: ManifoldSpecFile, order: int) -> Manifold:
    n = spec.dim
    sec = spec.section("ambient")
    if sec is None:
        raise SpecError("ambient mode needs an [ambient] section", 1, 1)
    ykeys = [f"y{a + 1}" for a in range(n + 1)]
    _check_keys(sec, {"lower", "upper", "period", "charts", "radius", "depth", "orientation"} | set(ykeys))
    params = tuple(f"x{i + 1}" for i in range(n))
    texts = [_expression(sec.require(k), params) for k in ykeys]
    metric = None
    msec = spec.section("metric")
    if msec is not None:
        mkeys = _component_keys("G", n + 1)
        _check_keys(msec, set(mkeys))
        ambient_names = tuple(f"y{a + 1}" for a in range(n + 1))
        comps = {}
        for key, ent in msec.entries.items():
            i, j = mkeys[key]
            comps[f"G{min(i, j) + 1}{max(i, j) + 1}"] = _expression(ent, ambient_names)
        metric = AmbientMetric.parse(n + 1, comps)
    centers, radius, period = _layout(sec, n)
    lower = _vector(sec.require("lower"), n)
    upper = _vector(sec.require("upper"), n)
    bspec = AmbientBoundarySpec.parse(n, texts, ambient_metric=metric, lower=tuple(lower), upper=tuple(upper),
                                      period=period)
    ori = sec.get("orientation")
    if ori is None or ori.value.lower() == "auto":
        bspec.orientation = _auto_orientation(bspec, lower, upper)
    elif ori.value.strip() in ("1", "+1", "-1"):
        bspec.orientation = int(ori.value)
    else:
        raise SpecError("orientation must be auto, +1 or -1", ori.line, ori.column)
    depth = _depth(sec)
    charts = []
    for k, c in enumerate(centers):
        try:
            charts.append(fermi_pullback(bspec, c, radius, depth, name=f"c{k}", order=order))
        except BoundaryCurvError as exc:
            raise SpecError(f"chart c{k} at {np.round(c, 6).tolist()}: {exc}", sec.line, 1) from None
    atlas = ChartAtlas(charts, translation=True, period=period)
    return Manifold(spec.name or "ambient-spec", n, atlas, source=spec.source)


__all__ = ["BUILTIN_PREFIX", "Entry", "ManifoldSpecFile", "Section", "load", "parse_text"]
