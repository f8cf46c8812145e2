"""Report figures: per-viewpoint valid counts and a 3D overview of the plan.

Figures are rendered off-screen (Agg) straight to image files.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .superquadric import sample_surface_grid  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "savefig.dpi": 120,
    "figure.dpi": 120,
    # fixed metadata keeps repeated renders byte-stable
    "svg.hashsalt": "sqgrasp",
}


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_viewpoint_counts(result, path, budget=None):
    """Bar chart of valid grasps per viewpoint, with the mean drawn as a line."""
    counts = [len(p.valid) for p in result.plans]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.0, 3.0))
        x = np.arange(1, len(counts) + 1)
        ax.bar(x, counts, color="#4c72b0", width=0.7)
        ax.axhline(np.mean(counts), color="#c44e52", lw=1.2, ls="--",
                   label=f"mean = {np.mean(counts):.2f}")
        if budget is not None:
            ax.set_ylim(0, budget)
        ax.set_xticks(x)
        ax.set_xlabel("viewpoint")
        ax.set_ylabel("valid grasps")
        ax.set_title(f"{result.name}: valid grasps per viewpoint")
        ax.legend(loc="upper right", frameon=False)
        fig.tight_layout()
        return _save(fig, path)


def _set_equal_3d(ax, pts):
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    c = 0.5 * (lo + hi)
    r = 0.5 * float((hi - lo).max())
    ax.set_xlim(c[0] - r, c[0] + r)
    ax.set_ylim(c[1] - r, c[1] + r)
    ax.set_zlim(c[2] - r, c[2] + r)


def plot_scene(result, mesh, path, max_mesh_points=3000):
    """Mesh vertices, primitive surfaces, viewpoints and the nearest valid grasp per view."""
    rng = np.random.default_rng(0)
    v = mesh.vertices
    if len(v) > max_mesh_points:
        v = v[np.sort(rng.choice(len(v), max_mesh_points, replace=False))]
    with plt.rc_context(STYLE):
        fig = plt.figure(figsize=(5.5, 5.0))
        ax = fig.add_subplot(projection="3d")
        ax.scatter(*v.T, s=1, c="0.6", alpha=0.4, label="mesh")
        cmap = plt.get_cmap("tab20")
        for i, sq in enumerate(result.decomposition.primitives):
            s = sample_surface_grid(sq, 10, 20)
            ax.scatter(*s.T, s=1.5, color=cmap(i % 20), alpha=0.8)
        views = np.array([p.translation for p in result.viewpoints])
        ax.scatter(*views.T, marker="^", s=30, c="k", label="viewpoints")
        for pose, plan in zip(result.viewpoints, result.plans):
            valid = plan.valid
            if not valid:
                continue
            d = [np.linalg.norm(g.candidate.pose.translation - pose.translation) for g in valid]
            g = valid[int(np.argmin(d))].candidate.pose
            a = g.rotation[:, 2]
            ax.quiver(*g.translation, *(0.1 * a), color="#c44e52", lw=1.5)
        _set_equal_3d(ax, np.vstack([mesh.vertices, views]))
        ax.set_title(f"{result.name}: {len(result.decomposition.primitives)} primitives")
        ax.legend(loc="upper left", frameon=False, markerscale=4)
        fig.tight_layout()
        return _save(fig, path)
