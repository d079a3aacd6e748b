"""Matplotlib figures written straight to files (Agg, no pyplot state)."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from matplotlib.figure import Figure

from .geometry import PoseSE3


def _save(fig: Figure, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=110, bbox_inches="tight")


def plot_study(rows, path, xlabel: str, log_x: bool = False) -> None:
    """Position and orientation error against the study variable (failed rows omitted)."""
    ok = [r for r in rows if r.ok]
    labels = ["all" if r.value is None else r.value for r in ok]
    # "all" sits one step past the largest count
    xs = []
    numeric = [float(v) for v in labels if v != "all"]
    for v in labels:
        xs.append(float(v) if v != "all" else (max(numeric) * 1.5 if numeric else 1.0))
    fig = Figure(figsize=(8, 3.4))
    for i, (attr, unit) in enumerate((("position_mm", "position error (mm)"), ("orientation_deg", "orientation error (deg)"))):
        ax = fig.add_subplot(1, 2, i + 1)
        ax.plot(xs, [getattr(r, attr) for r in ok], "o-")
        ax.set_xlabel(xlabel)
        ax.set_ylabel(unit)
        if log_x and all(x > 0 for x in xs):
            ax.set_xscale("log")
        ax.set_xticks(xs)
        ax.set_xticklabels([str(v) for v in labels], rotation=45)
        ax.grid(alpha=0.3)
    _save(fig, path)


def plot_cost_traces(traces: Mapping[str, Sequence[float]], path) -> None:
    fig = Figure(figsize=(5, 3.4))
    ax = fig.add_subplot(1, 1, 1)
    for name, trace in traces.items():
        if len(trace):
            ax.semilogy(np.arange(len(trace)), np.maximum(np.asarray(trace, dtype=float), 1e-30), label=name)
    ax.set_xlabel("iteration")
    ax.set_ylabel("cost")
    ax.legend(fontsize=7)
    ax.grid(alpha=0.3)
    _save(fig, path)


def plot_camera_layout(poses: Mapping[int, PoseSE3], path, truth: Mapping[int, PoseSE3] | None = None, points=None):
    """Top view (x, z of the reference frame) of camera centers and viewing directions."""
    fig = Figure(figsize=(5, 5))
    ax = fig.add_subplot(1, 1, 1)
    if points is not None and len(points):
        p = np.asarray(points)
        ax.scatter(p[:, 0], p[:, 2], s=2, c="0.7", label="points")
    for name, ps, style in (("estimate", poses, "b"), ("truth", truth, "r")):
        if not ps:
            continue
        for c, pose in sorted(ps.items()):
            ctr = pose.center
            d = pose.rotation[2]
            ax.plot(ctr[0], ctr[2], style + "o")
            ax.arrow(ctr[0], ctr[2], 2 * d[0], 2 * d[2], color=style, head_width=0.3)
            if name == "estimate":
                ax.annotate(str(c), (ctr[0], ctr[2]), textcoords="offset points", xytext=(4, 4))
    ax.set_xlabel("x (m)")
    ax.set_ylabel("z (m)")
    ax.set_aspect("equal", adjustable="datalim")
    ax.grid(alpha=0.3)
    _save(fig, path)


def plot_birdseye(tracks: Mapping[int, np.ndarray], path) -> None:
    """``tracks`` maps person id to an (F, 2) array of ground-plane coordinates."""
    fig = Figure(figsize=(5, 5))
    ax = fig.add_subplot(1, 1, 1)
    for pid, xy in sorted(tracks.items()):
        xy = np.asarray(xy)
        if len(xy):
            ax.plot(xy[:, 0], xy[:, 1], "-", lw=1, label=f"person {pid}")
    ax.set_xlabel("ground u (m)")
    ax.set_ylabel("ground v (m)")
    ax.set_aspect("equal", adjustable="datalim")
    ax.legend(fontsize=7)
    ax.grid(alpha=0.3)
    _save(fig, path)
