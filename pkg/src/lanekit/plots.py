"""Report figures rendered alongside the table and JSON outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .metrics import Category, EvalReport

# Fixed metadata keeps PNG bytes a pure function of the report contents.
_PNG_METADATA = {"Software": "lanekit"}


def render_report_figure(report: EvalReport, path) -> None:
    if report.metric == "culane-f1":
        _culane_figure(report, path)
    elif report.metric == "tusimple-accuracy":
        _tusimple_figure(report, path)
    else:
        raise ValueError(f"unknown metric {report.metric!r}")


def _save(fig, path):
    fig.savefig(path, dpi=120, metadata=_PNG_METADATA)
    plt.close(fig)


def _culane_figure(report: EvalReport, path) -> None:
    names = [
        name
        for name in report.per_category
        if name != Category.CROSSROAD.value
    ]
    scores = [100.0 * report.per_category[name]["f1"] for name in names]
    names.append("Total")
    scores.append(100.0 * report.totals["f1"])

    fig, ax = plt.subplots(figsize=(7.0, 4.0))
    ypos = range(len(names))
    ax.barh(ypos, scores, color="#4878a8")
    ax.set_yticks(ypos)
    ax.set_yticklabels(names)
    ax.invert_yaxis()
    ax.set_xlim(0, 100)
    ax.set_xlabel("F1 (%)")
    crossroad_fp = report.per_category.get(Category.CROSSROAD.value, {}).get("fp", 0)
    ax.set_title(f"IoU F1 by category (crossroad FP = {crossroad_fp})")
    for y, s in zip(ypos, scores):
        ax.text(s + 1, y, f"{s:.1f}", va="center", fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def _tusimple_figure(report: EvalReport, path) -> None:
    totals = report.totals
    names = ["Accuracy", "FP rate", "FN rate"]
    values = [totals["accuracy"], totals["fp_rate"], totals["fn_rate"]]

    fig, ax = plt.subplots(figsize=(5.0, 3.5))
    bars = ax.bar(names, values, color=["#4878a8", "#d1605e", "#e49444"])
    ax.set_ylim(0, 1.05)
    ax.set_title("Point-accuracy evaluation")
    for bar, v in zip(bars, values):
        ax.text(
            bar.get_x() + bar.get_width() / 2,
            v + 0.02,
            f"{v:.4f}",
            ha="center",
            fontsize=9,
        )
    fig.tight_layout()
    _save(fig, path)
