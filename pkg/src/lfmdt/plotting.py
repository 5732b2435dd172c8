"""Report figures. Uses the non-interactive Agg backend; every function writes a PNG and closes its figure."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# Fixed metadata keeps PNG bytes stable across runs.
_SAVE = {"dpi": 120, "metadata": {"Software": None}}


def _finish(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, **_SAVE)
    plt.close(fig)
    return path


def plot_loss_curve(curve: list[dict], path, bicubic_psnr: float | None = None) -> Path:
    steps = [row["step"] for row in curve]
    fig, (ax_l, ax_p) = plt.subplots(1, 2, figsize=(9, 3.4))
    ax_l.semilogy(steps, [row["loss"] for row in curve], color="tab:blue")
    ax_l.set_xlabel("step")
    ax_l.set_ylabel("L1 loss")
    ax_l.grid(alpha=0.3, which="both")
    ax_p.plot(steps, [row["psnr"] for row in curve], color="tab:green", label="network")
    if bicubic_psnr is not None:
        ax_p.axhline(bicubic_psnr, color="0.4", ls="--", label="bicubic")
        ax_p.legend(frameon=False)
    ax_p.set_xlabel("step")
    ax_p.set_ylabel("PSNR (dB, Y)")
    ax_p.grid(alpha=0.3)
    return _finish(fig, path)


def plot_complexity(report, path) -> Path:
    """MDT vs baseline MACs per attention category, log scale."""
    cats = [c for c in report.ratios if report.baseline.macs[c] or report.mdt.macs[c]]
    x = np.arange(len(cats))
    fig, ax = plt.subplots(figsize=(6, 3.4))
    ax.bar(x - 0.2, [max(report.mdt.macs[c], 1) for c in cats], 0.4, label="MDT")
    ax.bar(x + 0.2, [max(report.baseline.macs[c], 1) for c in cats], 0.4, label="baseline ST")
    ax.set_xticks(x, cats)
    ax.set_yscale("log")
    ax.set_ylabel("MACs per layer")
    ax.legend(frameon=False)
    return _finish(fig, path)


def plot_epi(epi: np.ndarray, path, title: str | None = None) -> Path:
    fig, ax = plt.subplots(figsize=(6, 1.2 + 0.25 * epi.shape[0]))
    ax.imshow(epi, cmap="gray", vmin=0, vmax=1, aspect="auto", interpolation="nearest")
    ax.set_xlabel("x")
    ax.set_ylabel("u")
    if title:
        ax.set_title(title)
    return _finish(fig, path)


def plot_feature_maps(maps: list[np.ndarray], labels: list[str], path) -> Path:
    """One panel per branch, each showing the channel-mean of its centre-view output."""
    fig, axes = plt.subplots(1, len(maps), figsize=(3 * len(maps), 3), squeeze=False)
    for ax, m, label in zip(axes[0], maps, labels):
        ax.imshow(m, cmap="viridis", interpolation="nearest")
        ax.set_title(label)
        ax.axis("off")
    return _finish(fig, path)
