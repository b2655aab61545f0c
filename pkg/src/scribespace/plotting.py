"""Static scatter rendering of a canvas export.

Mirrors the interactive view: narrative engagement on x, scientific
exposition on y, one dot per version, parent edges drawn underneath.
Intended for headless runs, so the Agg backend is forced before pyplot
is imported.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
from matplotlib.lines import Line2D

EXPLORATORY_COLOR = "#9e9e9e"
COMMITTED_COLOR = "#7e57c2"
EDGE_COLOR = "#cfd8dc"
LABEL_COLOR = "#546e7a"


def _dot_style(state: str) -> tuple[str, str, float]:
    """(color, marker, size) for a node state string."""
    if state == "applied":
        return COMMITTED_COLOR, "*", 260.0
    if state == "confirmed":
        return COMMITTED_COLOR, "o", 90.0
    return EXPLORATORY_COLOR, "o", 90.0


def render_canvas(export: dict, out_path: str | Path) -> Path:
    """Draw the version graph of one exported canvas to a PNG file."""
    nodes = export["nodes"]
    positions = {
        node["id"]: (node["score"]["engagement"], node["score"]["exposition"])
        for node in nodes
    }

    fig, ax = plt.subplots(figsize=(6.4, 6.4), dpi=120)
    for node in nodes:
        x1, y1 = positions[node["id"]]
        for parent_id in node["parents"]:
            x0, y0 = positions[parent_id]
            ax.plot([x0, x1], [y0, y1], color=EDGE_COLOR, linewidth=1.2, zorder=1)

    for node in nodes:
        color, marker, size = _dot_style(node["state"])
        x, y = positions[node["id"]]
        ax.scatter([x], [y], c=color, marker=marker, s=size,
                   edgecolors="white", linewidths=0.8, zorder=3)
        ax.annotate(node["id"].split(":", 1)[-1], (x, y),
                    textcoords="offset points", xytext=(5, 5),
                    fontsize=7, color=LABEL_COLOR, zorder=4)

    ax.set_xlim(-5, 105)
    ax.set_ylim(-5, 105)
    ax.set_xlabel("Narrative engagement")
    ax.set_ylabel("Scientific exposition")
    ax.set_title(f"Canvas {export['id']}")
    ax.grid(True, color="#eceff1", linewidth=0.8, zorder=0)
    ax.legend(handles=[
        Line2D([], [], color=EXPLORATORY_COLOR, marker="o", linestyle="",
               label="exploratory"),
        Line2D([], [], color=COMMITTED_COLOR, marker="o", linestyle="",
               label="confirmed"),
        Line2D([], [], color=COMMITTED_COLOR, marker="*", linestyle="",
               markersize=12, label="applied"),
    ], loc="lower left", frameon=False, fontsize=8)

    path = Path(out_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, facecolor="white", bbox_inches="tight")
    plt.close(fig)
    return path
