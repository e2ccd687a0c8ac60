"""Four-panel per-layer variance chart written to SVG."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .variance import VarianceReport  # noqa: E402

FORWARD_METHODS = ("lecun", "xavier", "kai_for", "virgo_for")
BACKWARD_METHODS = ("lecun", "xavier", "kai_back", "virgo_back")

STYLE = {
    "lecun": dict(color="#7f7f7f", marker="v"),
    "xavier": dict(color="#1f77b4", marker="s"),
    "kai_for": dict(color="#ff7f0e", marker="^"),
    "kai_back": dict(color="#ff7f0e", marker="^"),
    "virgo_for": dict(color="#d62728", marker="o"),
    "virgo_back": dict(color="#d62728", marker="o"),
}

PANELS = (
    ("forward (empirical)", "empirical_forward", FORWARD_METHODS),
    ("forward (theoretical)", "theoretical_forward", FORWARD_METHODS),
    ("backward (empirical)", "empirical_backward", BACKWARD_METHODS),
    ("backward (theoretical)", "theoretical_backward", BACKWARD_METHODS),
)


def variance_figure(reports: Sequence[VarianceReport], title: str = ""):
    by_method = {r.method: r for r in reports}
    fig, axes = plt.subplots(1, 4, figsize=(14, 3.4), constrained_layout=True)
    for ax, (label, attr, methods) in zip(axes, PANELS):
        for m in methods:
            if m not in by_method:
                continue
            series = getattr(by_method[m], attr)
            layers = range(1, len(series) + 1) if attr.endswith("forward") else range(len(series))
            ax.plot(list(layers), series, label=m, linewidth=1.2, markersize=4, **STYLE[m])
        ax.set_yscale("log")
        ax.set_title(label, fontsize=9)
        ax.set_xlabel("layer")
        ax.tick_params(labelsize=8)
        ax.legend(fontsize=7, frameon=False)
    axes[0].set_ylabel("mean node variance")
    if title:
        fig.suptitle(title, fontsize=10)
    return fig


def save_svg(fig, path: Path) -> None:
    """Write ``fig`` without a timestamp and with stable element ids."""
    with matplotlib.rc_context({"svg.hashsalt": "virgo", "svg.fonttype": "path"}):
        fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_variances(reports: Sequence[VarianceReport], path: Path, title: str = "") -> Path:
    path = Path(path)
    save_svg(variance_figure(reports, title), path)
    return path
