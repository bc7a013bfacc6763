"""SVG plots with embedded data, and aligned class-average image export."""

from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# deterministic SVG ids so identical data gives identical files
plt.rcParams["svg.hashsalt"] = "latentview"


def _csv_text(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    if rows:
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return buf.getvalue()


def _save_svg(fig, path, rows: Sequence[dict], meta: dict | None) -> None:
    buf = io.StringIO()
    fig.savefig(buf, format="svg", metadata={"Date": None, "Creator": "latentview"})
    plt.close(fig)
    svg = buf.getvalue()
    lines = ["latentview plot data"]
    for k, v in (meta or {}).items():
        lines.append(f"{k}: {v}")
    lines.append(_csv_text(rows).replace("--", "- -"))
    comment = "<!--\n" + "\n".join(lines) + "-->\n"
    head, sep, tail = svg.partition("<svg")
    Path(path).write_text(head + comment + sep + tail)


def read_svg_data(path) -> list[dict]:
    """Recover the data table embedded in an SVG written by this module."""
    text = Path(path).read_text()
    block = text.split("<!--\n", 1)[1].split("-->", 1)[0]
    lines = block.splitlines()
    start = next(i for i, ln in enumerate(lines) if "," in ln and ":" not in ln)
    return list(csv.DictReader(lines[start:]))


def _float(v) -> float:
    return float("nan") if v in ("", None) else float(v)


def plot_accuracy_vs_views(rows: Sequence[dict], path, meta: dict | None = None,
                           series: Sequence[str] = ("class_acc", "view_acc")) -> None:
    """Accuracy curves over the number of observed views."""
    x = [int(_float(r["views"])) for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for name in series:
        ax.plot(x, [100 * _float(r[name]) for r in rows], marker="o", label=name)
    ax.set_xlabel("views per object")
    ax.set_ylabel("accuracy (%)")
    ax.set_xticks(x)
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    _save_svg(fig, path, rows, meta)


def plot_history(rows: Sequence[dict], path, meta: dict | None = None) -> None:
    """Training loss and alignment variance over iterations."""
    it = np.array([_float(r["iteration"]) for r in rows])
    loss = np.array([_float(r["loss"]) for r in rows])
    var = np.array([_float(r["mean_alignment_variance"]) for r in rows])
    fig, (a0, a1) = plt.subplots(1, 2, figsize=(8, 3.2))
    ok = np.isfinite(loss)
    a0.plot(it[ok], loss[ok], lw=0.8)
    a0.set_xlabel("iteration")
    a0.set_ylabel("loss")
    ok = np.isfinite(var)
    a1.plot(it[ok], var[ok], marker=".")
    a1.set_xlabel("iteration")
    a1.set_ylabel("mean alignment variance")
    for a in (a0, a1):
        a.grid(alpha=0.3)
    fig.tight_layout()
    _save_svg(fig, path, [r for r, v in zip(rows, var) if np.isfinite(v)], meta)


def plot_table(rows: Sequence[dict], path, meta: dict | None = None) -> None:
    """Pick a plot type from the CSV columns."""
    if not rows:
        raise ValueError("nothing to plot: empty table")
    cols = set(rows[0])
    if "views" in cols:
        plot_accuracy_vs_views(rows, path, meta)
    elif "iteration" in cols:
        plot_history(rows, path, meta)
    elif {"orientation", "class_acc"} <= cols:
        data = [r for r in rows if r["orientation"].isdigit()]
        fig, ax = plt.subplots(figsize=(5, 3.2))
        ax.bar([int(r["orientation"]) for r in data], [100 * float(r["class_acc"]) for r in data])
        ax.set_xlabel("camera system orientation")
        ax.set_ylabel("class accuracy (%)")
        fig.tight_layout()
        _save_svg(fig, path, data, meta)
    else:
        raise ValueError(f"unrecognised table columns: {sorted(cols)}")


def montage(stack: np.ndarray) -> np.ndarray:
    """Lay out ``(M, H, W)`` views side by side with a one-pixel gap."""
    M, H, W = stack.shape
    out = np.ones((H, M * (W + 1) - 1))
    for j in range(M):
        out[:, j * (W + 1):j * (W + 1) + W] = stack[j]
    return out


def export_class_averages(aligned: dict[int, np.ndarray], path, unaligned: dict[int, np.ndarray] | None = None) -> None:
    """One PNG: per class, the unaligned average (if given) above the aligned one.

    ``aligned[c]`` has shape ``(instances, M, H, W)``; slot j holds the image
    assigned to viewpoint j.
    """
    rows = []
    for c in sorted(aligned):
        if unaligned is not None:
            rows.append(montage(unaligned[c].mean(axis=0)))
        rows.append(montage(aligned[c].mean(axis=0)))
    gap = np.ones((1, rows[0].shape[1]))
    img = np.vstack([r for row in rows for r in (row, gap)][:-1])
    plt.imsave(path, np.clip(img, 0.0, 1.0), cmap="gray", vmin=0.0, vmax=1.0)
