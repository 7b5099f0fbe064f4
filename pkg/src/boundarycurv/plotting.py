"""Figures written next to CSV and JSON outputs (matplotlib, Agg backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_MARKERS = {"minimum": ("v", "tab:blue"), "maximum": ("^", "tab:red"), "saddle": ("x", "tab:green"),
            "degenerate": ("o", "black")}


def _save(fig, path: Path) -> Path:
    path = Path(path)
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_field(rows: list[dict], field: str, path, title: str = "", records=None) -> Path:
    """Line plot (n = 1) or image (n = 2) of sampled values; one panel per chart block.

    ``rows`` are the CSV rows of ``plotdata``: ``chart``, ``x1..xn``, ``value``.
    """
    charts = list(dict.fromkeys(r["chart"] for r in rows))
    n = sum(1 for k in rows[0] if k.startswith("x"))
    if n > 2:
        raise ValueError("figures are drawn for n <= 2 only")
    cols = min(3, len(charts))
    nrows = -(-len(charts) // cols)
    fig, axes = plt.subplots(nrows, cols, figsize=(4.2 * cols, 3.4 * nrows), squeeze=False)
    for ax in axes.flat[len(charts):]:
        ax.set_visible(False)
    for ax, name in zip(axes.flat, charts):
        block = [r for r in rows if r["chart"] == name]
        if n == 1:
            x = np.array([r["x1"] for r in block])
            v = np.array([r["value"] for r in block])
            order = np.argsort(x)
            ax.plot(x[order], v[order], "-", color="0.2", lw=1.2)
            ax.set_xlabel("x1")
            ax.set_ylabel(field)
        else:
            x1 = np.unique([r["x1"] for r in block])
            x2 = np.unique([r["x2"] for r in block])
            grid = np.full((len(x2), len(x1)), np.nan)
            i1 = {v: i for i, v in enumerate(x1)}
            i2 = {v: i for i, v in enumerate(x2)}
            for r in block:
                grid[i2[r["x2"]], i1[r["x1"]]] = r["value"]
            im = ax.pcolormesh(x1, x2, grid, shading="nearest", cmap="viridis")
            fig.colorbar(im, ax=ax, shrink=0.85)
            ax.set_xlabel("x1")
            ax.set_ylabel("x2")
        for rec in records or []:
            if len(charts) > 1 and rec.get("panel") != name:
                continue
            marker, color = _MARKERS.get(rec["kind"], ("o", "black"))
            xy = rec["x"]
            if n == 1:
                ax.plot(xy[0], rec["H"] if field == "H" else 0.0, marker, color=color, ms=7)
            else:
                ax.plot(xy[0], xy[1], marker, color=color, ms=7, mec="white")
        if len(charts) > 1:
            ax.set_title(name, fontsize=9)
    fig.suptitle(title or field)
    fig.tight_layout()
    return _save(fig, path)

