"""Figures written next to the CSV outputs (matplotlib, non-interactive backend)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_history(history, path):
    fig, ax = plt.subplots(figsize=(5.5, 3.6))
    epochs = np.arange(len(history.losses))
    for label, key in (("PDE", "pde"), ("BC", "bc"), ("interface", "interface"), ("total", "total")):
        vals = np.array([getattr(b, key) for b in history.losses])
        if np.any(vals > 0):
            ax.semilogy(epochs, vals, label=label, lw=1.4 if key == "total" else 0.9)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend(frameon=False)
    return _save(fig, path)


def plot_error_histogram(errors, path, title=None):
    errors = np.asarray(errors, float)
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    pos = errors[errors > 0]
    bins = np.logspace(np.log10(pos.min()), np.log10(pos.max()), 30) if len(pos) > 1 else 10
    ax.hist(pos if len(pos) else errors, bins=bins, color="#4477aa")
    if len(pos) > 1:
        ax.set_xscale("log")
    ax.axvline(errors.mean(), color="k", ls="--", lw=1, label=f"mean {errors.mean():.3g}")
    ax.set_xlabel("relative L2 error")
    ax.set_ylabel("test samples")
    ax.legend(frameon=False)
    if title:
        ax.set_title(title)
    return _save(fig, path)


def plot_predictions(points, sides, truth, pred, path, count=3):
    """Reference vs prediction for the first ``count`` samples (lines in 1D, maps in 2D)."""
    count = min(count, len(truth))
    if points.shape[1] == 1:
        fig, axes = plt.subplots(1, count, figsize=(4 * count, 3.2), squeeze=False)
        y = points[:, 0]
        for k, ax in enumerate(axes[0]):
            ax.plot(y, truth[k], "k-", lw=1.2, label="reference")
            ax.plot(y, pred[k], "r--", lw=1.2, label="prediction")
            ax.set_xlabel("y")
            ax.set_title(f"sample {k}")
        axes[0, 0].legend(frameon=False)
        return _save(fig, path)
    n = int(round(np.sqrt(len(points))))
    ext = [points[:, 0].min(), points[:, 0].max(), points[:, 1].min(), points[:, 1].max()]
    fig, axes = plt.subplots(count, 3, figsize=(11, 3.2 * count), squeeze=False)
    for k in range(count):
        t, p = truth[k].reshape(n, n).T, pred[k].reshape(n, n).T
        for ax, img, name in zip(axes[k], (t, p, np.abs(p - t)), ("reference", "prediction", "|error|")):
            im = ax.imshow(img, origin="lower", extent=ext, cmap="viridis" if name != "|error|" else "magma")
            ax.set_title(f"sample {k}: {name}")
            fig.colorbar(im, ax=ax, shrink=0.8)
    return _save(fig, path)


def plot_ood(mus, length_scales, grid, path):
    fig, ax = plt.subplots(figsize=(1.2 * len(length_scales) + 2.5, 0.8 * len(mus) + 2))
    im = ax.imshow(np.log10(grid), cmap="viridis", aspect="auto")
    ax.set_xticks(range(len(length_scales)), [f"{v:g}" for v in length_scales])
    ax.set_yticks(range(len(mus)), [f"{v:g}" for v in mus])
    ax.set_xlabel("length scale")
    ax.set_ylabel("mean")
    for i in range(len(mus)):
        for j in range(len(length_scales)):
            ax.text(j, i, f"{grid[i, j]:.2g}", ha="center", va="center", color="w", fontsize=8)
    fig.colorbar(im, ax=ax, label="log10 mean rel. L2")
    return _save(fig, path)


def plot_ablation(axis, rows, path):
    values = list(dict.fromkeys(r["value"] for r in rows))
    means = [np.mean([r["mean_rel_l2"] for r in rows if r["value"] == v]) for v in values]
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    for r in rows:
        ax.plot(values.index(r["value"]), r["mean_rel_l2"], "o", color="0.7", ms=4)
    ax.plot(range(len(values)), means, "o-", color="#aa3377")
    ax.set_xticks(range(len(values)), [str(v) for v in values])
    ax.set_yscale("log")
    ax.set_xlabel(axis)
    ax.set_ylabel("mean rel. L2 (test)")
    return _save(fig, path)


def plot_convergence(sizes, errors, path, label):
    h = 1.0 / (np.asarray(sizes, float) - 1.0)
    fig, ax = plt.subplots(figsize=(4.5, 3.4))
    ax.loglog(h, errors, "o-", label=label)
    ax.loglog(h, errors[0] * (h / h[0]) ** 2, "k:", label="slope 2")
    ax.set_xlabel("h")
    ax.set_ylabel("max error")
    ax.legend(frameon=False)
    return _save(fig, path)
