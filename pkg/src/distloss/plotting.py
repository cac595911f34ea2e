"""Render report figures from the plot-data files written by ``evaluate``."""
from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 120,
    "savefig.bbox": "tight",
}

LABEL_COLOR = "#9ecae1"
PRED_COLOR = "#fd8d3c"
FEW_SHOT_SHADE = "#f0f0f0"


def _read_tsv(path: Path) -> dict[str, np.ndarray]:
    data = np.genfromtxt(path, delimiter="\t", names=True, dtype=float)
    return {name: np.atleast_1d(data[name]) for name in data.dtype.names}


def _shade_few_shot(ax, few_bins, width):
    for v in few_bins:
        ax.axvspan(v - width / 2, v + width / 2, color=FEW_SHOT_SHADE, lw=0, zorder=0)


def histogram_figure(hist: dict, arm: str, few_bins=(), width: float = 1.0):
    fig, ax = plt.subplots(figsize=(4.2, 2.8))
    _shade_few_shot(ax, few_bins, width)
    ax.bar(hist["bin"], hist["label_count"], width=width, color=LABEL_COLOR, label="label")
    ax.bar(hist["bin"], hist["prediction_count"], width=width * 0.6, color=PRED_COLOR, alpha=0.85,
           label="prediction")
    ax.set_xlabel("label value")
    ax.set_ylabel("count")
    ax.set_title(f"{arm}: label vs prediction histogram")
    ax.legend(frameon=False)
    return fig


def scatter_figure(scatter: dict, arm: str, r: float | str | None = None):
    fig, ax = plt.subplots(figsize=(3.4, 3.2))
    y, p = scatter["label"], scatter["prediction"]
    ax.scatter(y, p, s=3, alpha=0.25, color=PRED_COLOR, edgecolors="none")
    lo, hi = float(min(y.min(), p.min())), float(max(y.max(), p.max()))
    ax.plot([lo, hi], [lo, hi], color="0.3", lw=0.8, ls="--")
    ax.set_xlabel("label")
    ax.set_ylabel("prediction")
    title = arm if r is None or isinstance(r, str) else f"{arm} (r = {r:.3f})"
    ax.set_title(title)
    ax.set_aspect("equal", adjustable="box")
    return fig


def curves_figure(curves: dict[str, list[dict]]):
    fig, axes = plt.subplots(1, 2, figsize=(7.0, 2.6))
    for arm, rows in curves.items():
        if not rows:
            continue
        ep = [r["epoch"] for r in rows]
        line, = axes[0].plot(ep, [r["loss"] for r in rows], label=arm)
        axes[1].plot(ep, [r["plain"] for r in rows], color=line.get_color(), label=f"{arm} plain")
        axes[1].plot(ep, [r["dist"] for r in rows], color=line.get_color(), ls=":", label=f"{arm} dist")
    axes[0].set_title("training objective")
    axes[1].set_title("loss terms")
    for ax in axes:
        ax.set_xlabel("epoch")
        ax.legend(frameon=False)
    return fig


def region_bars_figure(report: dict):
    arms = list(report["arms"])
    keys = [("mae", "few-shot MAE"), ("overlap_ratio", "few-shot overlap ratio")]
    fig, axes = plt.subplots(1, len(keys), figsize=(6.0, 2.4))
    for ax, (key, title) in zip(axes, keys):
        vals = [report["arms"][a]["metrics"].get("few_shot", {}).get(key, np.nan) for a in arms]
        vals = [np.nan if isinstance(v, str) else v for v in vals]
        ax.bar(arms, vals, color=[LABEL_COLOR, PRED_COLOR] * len(arms))
        ax.set_title(title)
    return fig


def render_report(directory) -> list[Path]:
    directory = Path(directory)
    report = json.loads((directory / "report.json").read_text())
    figures = directory / "figures"
    figures.mkdir(exist_ok=True)
    space = report["label_space"]
    written = []
    with plt.rc_context(STYLE):
        for arm, data in report["arms"].items():
            hist = _read_tsv(directory / "plots" / f"histogram_{arm}.tsv")
            fig = histogram_figure(hist, arm, space["few_shot_bins"], space["bin_width"])
            written.append(_save(fig, figures / f"histogram_{arm}.png"))
            scatter = _read_tsv(directory / "plots" / f"scatter_{arm}.tsv")
            fig = scatter_figure(scatter, arm, data["metrics"]["overall"]["pearson_r"])
            written.append(_save(fig, figures / f"scatter_{arm}.png"))
        curves = {a: d["training_curve"] for a, d in report["arms"].items()}
        if any(curves.values()):
            written.append(_save(curves_figure(curves), figures / "training_curves.png"))
        written.append(_save(region_bars_figure(report), figures / "few_shot_summary.png"))
    return written


def _save(fig, path: Path) -> Path:
    fig.savefig(path)
    plt.close(fig)
    return path
