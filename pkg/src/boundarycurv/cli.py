"""Command-line front end.

::

    boundarycurv analyze  SPEC [--out report.json]
    boundarycurv perturb  SPEC --epsilon 1e-2 --seed 7 [--rounds 5]
    boundarycurv validate SPEC --suite {frechet,escobar,inverse,neumann,norm}
    boundarycurv plotdata SPEC --field {H,gradnorm} --grid N --out values.csv

``SPEC`` is a spec file path or ``builtin:ID`` (``builtin:ellipse(2,1)``).
JSON reports and CSV files get a PNG figure next to them unless
``--no-plot`` is given. Exit codes: 0 ok, 1 validation failure, 2 input
error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from .critical import H_values, global_scan, grad_values
from .errors import InputError, NumericalError
from .manifolds import Manifold
from .perturbation import perturb_to_generic, perturbed_from_dict
from .report import ReportEnvelope
from .specfile import ManifoldSpecFile, load
from .tensors import DEFAULT_ORDER
from .tolerances import DEFAULTS, Tolerances
from .validation import SUITES, run_suite

EXIT_OK, EXIT_VALIDATION, EXIT_INPUT, EXIT_NUMERICAL = 0, 1, 2, 3


class CliInputError(InputError):
    pass


# -- argument parsing -------------------------------------------------------------------


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("spec", help="spec file path or builtin:ID, e.g. builtin:ellipse(2,1)")
    p.add_argument("--out", help="output path ('-' writes to standard output)")
    p.add_argument("--seed", type=int, default=0, help="random seed (unsigned 64-bit)")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="worker threads for scans")
    p.add_argument("--order", type=int, default=DEFAULT_ORDER, help="jet order of the metric fields")
    p.add_argument("--no-plot", action="store_true", help="skip the PNG figure")
    tol = p.add_argument_group("tolerances (defaults in boundarycurv.tolerances)")
    for f in fields(Tolerances):
        default = getattr(DEFAULTS, f.name)
        tol.add_argument(_flag(f.name), dest=f.name, type=type(default), default=None,
                         metavar=type(default).__name__.upper(), help=f"default {default!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="boundarycurv", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="find and classify the critical points of H")
    _common(p)

    p = sub.add_parser("perturb", help="perturb the metric until every critical point is nondegenerate")
    _common(p)
    p.add_argument("--epsilon", type=float, default=1e-2, help="coefficient size of the perturbation")
    p.add_argument("--rounds", type=int, default=5, help="maximum number of perturbation rounds")

    p = sub.add_parser("validate", help="run a cross-check suite")
    _common(p)
    p.add_argument("--suite", choices=SUITES, required=True)

    p = sub.add_parser("plotdata", help="sample H or |grad H| on a grid and write CSV")
    _common(p)
    p.add_argument("--field", choices=("H", "gradnorm"), default="H")
    p.add_argument("--grid", type=int, default=33, help="grid points per axis (>= 2)")
    p.add_argument("--perturbation", help="GenericityReport JSON whose perturbed metric is sampled")
    return parser


def _tolerances(args) -> Tolerances:
    changes = {f.name: getattr(args, f.name) for f in fields(Tolerances)}
    tol = DEFAULTS.updated(**changes)
    for f in fields(Tolerances):
        if getattr(tol, f.name) <= 0:
            raise CliInputError(f"{_flag(f.name)} must be positive")
    return tol


def _check_ranges(args) -> None:
    if args.seed < 0 or args.seed >= 2**64:
        raise CliInputError("--seed must be an unsigned 64-bit integer")
    if args.threads < 1:
        raise CliInputError("--threads must be >= 1")
    if args.order < 3:
        raise CliInputError("--order must be >= 3")
    if getattr(args, "epsilon", 0.0) < 0:
        raise CliInputError("--epsilon must be >= 0")
    if getattr(args, "rounds", 1) < 1:
        raise CliInputError("--rounds must be >= 1")
    if getattr(args, "grid", 2) < 2:
        raise CliInputError("--grid must be >= 2")


# -- helpers -----------------------------------------------------------------------------


def _spec_info(spec: ManifoldSpecFile, manifold: Manifold) -> dict:
    return {
        "source": spec.source,
        "hash": spec.spec_hash,
        "name": manifold.name,
        "mode": spec.mode,
        "dim": manifold.dim,
        "charts": [c.name for c in manifold.charts],
        "translation_atlas": bool(manifold.atlas.translation),
    }


def _parameters(args, tol: Tolerances, **extra) -> dict:
    d = {"tolerances": tol.as_dict(), "seed": args.seed, "threads": args.threads, "order": args.order}
    d.update(extra)
    return d


def _write(args, text: str) -> None:
    if args.out in (None, "-"):
        if args.out == "-":
            sys.stdout.write(text)
        return
    Path(args.out).write_text(text, encoding="utf-8")


def _say(args, text: str) -> None:
    # the summary moves to stderr when stdout carries the report
    print(text, file=sys.stderr if args.out == "-" else sys.stdout)


def _figure_path(args) -> Path | None:
    if args.no_plot or args.out in (None, "-"):
        return None
    return Path(args.out).with_suffix(".png")


def sample_rows(manifold: Manifold, field: str, grid: int) -> list[dict]:
    """Grid samples of ``H`` or ``|grad H|``.

    Translation atlases are sampled on one global grid (periodic axes
    without the duplicated endpoint); other atlases chart by chart on the
    local box.
    """
    n = manifold.dim
    rows = []
    blocks = []
    if manifold.atlas.translation:
        lo, hi = manifold.atlas.global_bounds()
        axes = []
        for a in range(n):
            periodic = manifold.atlas.period is not None and manifold.atlas.period[a] is not None
            axes.append(np.linspace(lo[a], hi[a], grid, endpoint=not periodic))
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
        owner = {}
        for i, p in enumerate(pts):
            chart, x = manifold.chart_for_global(p)
            owner.setdefault(chart.name, []).append((i, x))
        values = np.empty(len(pts))
        for c in manifold.charts:
            if c.name not in owner:
                continue
            idx = [i for i, _ in owner[c.name]]
            xs = np.array([x for _, x in owner[c.name]])
            values[idx] = _evaluate(c, xs, field)
        blocks.append(("global", pts, values))
    else:
        for c in manifold.charts:
            ax = np.linspace(-c.radius, c.radius, grid)
            xs = np.stack(np.meshgrid(*[ax] * n, indexing="ij"), axis=-1).reshape(-1, n)
            blocks.append((c.name, xs, _evaluate(c, xs, field)))
    for name, pts, values in blocks:
        for p, v in zip(pts, values):
            row = {"chart": name}
            row.update({f"x{a + 1}": float(p[a]) for a in range(n)})
            row["value"] = float(v)
            rows.append(row)
    return rows


def _evaluate(chart, xs: np.ndarray, field: str) -> np.ndarray:
    if field == "H":
        v = H_values(chart.metric, xs)
    else:
        v = np.linalg.norm(grad_values(chart.metric, xs), axis=-1)
    return v + 0.0  # no signed zeros in the output


def _csv(rows: list[dict], with_chart: bool) -> str:
    buf = io.StringIO()
    keys = [k for k in rows[0] if with_chart or k != "chart"]
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(keys)
    for r in rows:
        w.writerow([r[k] if isinstance(r[k], str) else format(r[k], ".17g") for k in keys])
    return buf.getvalue()


def _scan_figure(manifold: Manifold, scan, path: Path, title: str) -> Path | None:
    from .plotting import plot_field

    if manifold.dim > 2:
        return None
    rows = sample_rows(manifold, "H", 201 if manifold.dim == 1 else 61)
    marks = []
    for r in scan.records:
        if manifold.atlas.translation:
            marks.append({"panel": "global", "x": r.global_x, "H": r.H_value, "kind": r.kind})
        else:
            marks.append({"panel": r.chart, "x": r.x, "H": r.H_value, "kind": r.kind})
    return plot_field(rows, "H", path, title=title, records=marks)


def _scan_summary(scan) -> str:
    if scan.constant_H_flag:
        return f"H is constant ({scan.H_min:.12g}); every boundary point is a degenerate critical point"
    c = {k: scan.count(k) for k in ("maximum", "minimum", "saddle", "degenerate")}
    return (
        f"{len(scan.records)} critical points ({c['maximum']} maxima, {c['minimum']} minima, "
        f"{c['saddle']} saddles, {c['degenerate']} degenerate); {scan.classification}; "
        f"H in [{scan.H_min:.6g}, {scan.H_max:.6g}]; Euler sum {scan.euler_sum}"
    )


# -- commands ------------------------------------------------------------------------------


def cmd_analyze(args) -> int:
    tol = _tolerances(args)
    spec = load(args.spec)
    manifold = spec.build(order=args.order)
    scan = global_scan(manifold, tol=tol, threads=args.threads)
    env = ReportEnvelope("analyze", _spec_info(spec, manifold), _parameters(args, tol), "ScanReport", scan.to_dict())
    _write(args, env.to_json())
    _say(args, f"{manifold.name}: {_scan_summary(scan)}")
    fig = _figure_path(args)
    if fig is not None and _scan_figure(manifold, scan, fig, f"H on {manifold.name}") is not None:
        _say(args, f"figure: {fig}")
    return EXIT_OK


def cmd_perturb(args) -> int:
    tol = _tolerances(args)
    spec = load(args.spec)
    manifold = spec.build(order=args.order)
    rep = perturb_to_generic(manifold, args.epsilon, seed=args.seed, max_rounds=args.rounds, tol=tol,
                             threads=args.threads)
    params = _parameters(args, tol, epsilon=args.epsilon, rounds=args.rounds)
    env = ReportEnvelope("perturb", _spec_info(spec, manifold), params, "GenericityReport", rep.to_dict())
    _write(args, env.to_json())
    _say(args, f"{manifold.name} before: {_scan_summary(rep.before)}")
    _say(args, f"{manifold.name} after {rep.rounds} round(s): {_scan_summary(rep.after)}")
    _say(args, f"success: {str(rep.success).lower()}" + (" (rounds exhausted)" if rep.exhausted else ""))
    fig = _figure_path(args)
    if fig is not None:
        target = manifold if rep.perturbation is None else perturbed_from_dict(manifold, rep.perturbation)
        if _scan_figure(target, rep.after, fig, f"H on {manifold.name} + k") is not None:
            _say(args, f"figure: {fig}")
    return EXIT_OK


def cmd_validate(args) -> int:
    tol = _tolerances(args)
    spec = load(args.spec)
    manifold = spec.build(order=args.order)
    table = run_suite(args.suite, manifold, seed=args.seed, tol=tol)
    env = ReportEnvelope("validate", _spec_info(spec, manifold), _parameters(args, tol, suite=args.suite),
                         "ValidationTable", table.to_dict())
    _write(args, env.to_json())
    width = max(len(r.check) for r in table.rows)
    for r in table.rows:
        mark = "PASS" if r.passed else "FAIL"
        _say(args, f"{mark}  {r.check:<{width}}  error {r.max_error:.3e}  tolerance {r.tolerance:.1e}  {r.detail}")
    return EXIT_OK if table.passed else EXIT_VALIDATION


def cmd_plotdata(args) -> int:
    tol = _tolerances(args)
    spec = load(args.spec)
    manifold = spec.build(order=args.order)
    if args.perturbation:
        try:
            env = ReportEnvelope.from_json(Path(args.perturbation).read_text(encoding="utf-8"))
            pert = env.payload["perturbation"]
        except (OSError, ValueError, KeyError) as exc:
            raise CliInputError(f"cannot read a perturbation from {args.perturbation!r}: {exc}") from None
        if pert is not None:
            manifold = perturbed_from_dict(manifold, pert)
    del tol  # echoed for a uniform interface; sampling uses no tolerance
    rows = sample_rows(manifold, args.field, args.grid)
    text = _csv(rows, with_chart=not manifold.atlas.translation)
    _write(args, text)
    values = np.array([r["value"] for r in rows])
    _say(args, f"{manifold.name}: {len(rows)} samples of {args.field}, range [{values.min():.6g}, {values.max():.6g}]")
    fig = _figure_path(args)
    if fig is not None and manifold.dim <= 2:
        from .plotting import plot_field

        plot_field(rows, args.field, fig, title=f"{args.field} on {manifold.name}")
        _say(args, f"figure: {fig}")
    return EXIT_OK


COMMANDS = {"analyze": cmd_analyze, "perturb": cmd_perturb, "validate": cmd_validate, "plotdata": cmd_plotdata}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _check_ranges(args)
        return COMMANDS[args.command](args)
    except InputError as exc:
        print(f"boundarycurv: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as exc:
        print(f"boundarycurv: numerical failure ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
