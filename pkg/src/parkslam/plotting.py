"""Figure rendering for maps and trajectories.

All output goes through :func:`save_svg`, which pins the SVG hash salt and
strips volatile metadata so identical inputs produce identical bytes.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from matplotlib.patches import Polygon

from .geometry import Pose2, Vec2
from .pointcloud import SEMANTIC_CLASSES
from .slots import MapDocument, slot_corners

_SVG_RC = {"svg.hashsalt": "parkslam", "svg.fonttype": "path"}

CLASS_COLORS = {
    "slot-line": "#4878a8",
    "lane-marking": "#999999",
    "arrow": "#55a868",
}

_TRAJ_COLORS = ("#c44e52", "#dd8452", "#8172b3", "#937860", "#64b5cd")


def save_svg(fig, path: str | Path) -> None:
    """Write a figure as SVG with run-independent bytes, then close it."""
    with plt.rc_context(_SVG_RC):
        fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)


def _plot_cloud(ax, cloud) -> None:
    for c, name in enumerate(SEMANTIC_CLASSES):
        part = cloud.of_class(c)
        if not len(part):
            continue
        ax.scatter(
            part.xy[:, 0],
            part.xy[:, 1],
            s=0.5,
            color=CLASS_COLORS[name],
            label=name,
            linewidths=0,
            rasterized=False,
        )


def _plot_trajectories(
    ax,
    trajectories: Mapping[str, Sequence[tuple[int, Pose2]]] | None,
    truth: Sequence[Pose2] | None,
) -> None:
    if truth:
        xy = np.array([[p.x, p.y] for p in truth])
        ax.plot(xy[:, 0], xy[:, 1], color="#333333", lw=1.0, ls="--", label="truth")
    if trajectories:
        for k, (name, traj) in enumerate(trajectories.items()):
            xy = np.array([[p.x, p.y] for _f, p in traj])
            ax.plot(
                xy[:, 0], xy[:, 1], color=_TRAJ_COLORS[k % len(_TRAJ_COLORS)], lw=1.0, label=name
            )


def map_figure(
    doc: MapDocument,
    trajectories: Mapping[str, Sequence[tuple[int, Pose2]]] | None = None,
    truth: Sequence[Pose2] | None = None,
    title: str | None = None,
):
    """Slots, semantic cloud, and optional trajectories in one map view.

    Stable slots are drawn as filled outlines (each tagged with an SVG group
    id ``slot-<id>``), unstable ones as faint dashed rectangles.
    """
    fig, ax = plt.subplots(figsize=(10.0, 8.0))
    _plot_cloud(ax, doc.cloud)
    for s in doc.slots:
        corners = slot_corners(s.x, s.y, s.theta, s.width, doc.slot_depth, Vec2(s.open_x, s.open_y))
        style = (
            dict(fill=False, edgecolor="#2b4c6f", lw=0.8)
            if s.stable
            else dict(fill=False, edgecolor="#b0583f", lw=0.6, ls=(0, (2, 2)))
        )
        patch = Polygon(corners, closed=True, gid=f"slot-{s.id}", **style)
        ax.add_patch(patch)
    _plot_trajectories(ax, trajectories, truth)
    ax.set_aspect("equal")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    if title:
        ax.set_title(title)
    ax.legend(loc="upper right", fontsize=8, markerscale=6)
    fig.tight_layout()
    return fig


def trajectory_figure(
    trajectories: Mapping[str, Sequence[tuple[int, Pose2]]],
    truth: Sequence[Pose2] | None = None,
    title: str | None = None,
):
    """Overlay of named trajectories, optionally against ground truth."""
    fig, ax = plt.subplots(figsize=(8.0, 6.5))
    _plot_trajectories(ax, trajectories, truth)
    ax.set_aspect("equal")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    if title:
        ax.set_title(title)
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    return fig
