"""PNG report figures written next to the CLI's text outputs.

Uses the non-interactive Agg backend so it runs headless.
"""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["plot_convergence", "plot_separation", "plot_frame_metrics"]


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # fixed metadata keeps repeated runs byte-stable
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_convergence(trace, path):
    """Misfit, objective and relative change per sweep on log axes."""
    sweeps = [r.sweep for r in trace]
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    axes[0].semilogy(sweeps, [max(r.psi, 1e-300) for r in trace], label="objective")
    axes[0].semilogy(sweeps, [max(r.misfit**2, 1e-300) for r in trace], "--", label="squared misfit")
    axes[0].set_xlabel("sweep")
    axes[0].legend()
    later = [r for r in trace if r.sweep > 0]
    if later:
        axes[1].semilogy([r.sweep for r in later], [max(r.rel_change, 1e-300) for r in later], label="relative change")
        axes[1].semilogy([r.sweep for r in later], [max(r.re, 1e-300) for r in later], label="relative error")
        axes[1].legend()
    axes[1].set_xlabel("sweep")
    fig.tight_layout()
    return _save(fig, path)


def plot_separation(X, background, foreground, path, frames=None):
    """Rows of original, background and foreground for a few frames."""
    p = X.shape[1]
    if frames is None:
        frames = sorted({0, p // 2, p - 1})
    fig, axes = plt.subplots(3, len(frames), figsize=(2.4 * len(frames), 7), squeeze=False)
    for col, j in enumerate(frames):
        for row, (name, V) in enumerate((("video", X), ("background", background), ("foreground", foreground))):
            img = V[:, j] if V.ndim == 3 else np.clip(V[:, j] / 255.0, 0, 1)
            ax = axes[row, col]
            ax.imshow(img, cmap="gray" if V.ndim == 3 else None)
            ax.set_xticks([])
            ax.set_yticks([])
            if col == 0:
                ax.set_ylabel(name)
            if row == 0:
                ax.set_title(f"frame {j}")
    fig.tight_layout()
    return _save(fig, path)


def plot_frame_metrics(per_frame: dict, path):
    """One panel per background metric against the frame index."""
    names = list(per_frame)
    fig, axes = plt.subplots(1, len(names), figsize=(3 * len(names), 3), squeeze=False)
    for ax, name in zip(axes[0], names):
        vals = per_frame[name]
        ax.plot(range(len(vals)), vals, marker=".")
        ax.set_title(name)
        ax.set_xlabel("frame")
    fig.tight_layout()
    return _save(fig, path)
