"""Figure rendering for regions, synthesized samples, and feature maps."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def label_colors(n: int, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.integers(40, 255, size=(max(n, 1), 3)).astype(np.uint8)


def region_overlay(rgb: np.ndarray, labels: np.ndarray, alpha: float = 0.55, seed: int = 0):
    """Blend a random color per region over the image and darken boundaries."""
    colors = label_colors(int(labels.max()) + 1, seed)
    tint = colors[labels]
    out = (rgb.astype(np.float64) * (1 - alpha) + tint.astype(np.float64) * alpha)
    boundary = np.zeros(labels.shape, dtype=bool)
    boundary[:, :-1] |= labels[:, :-1] != labels[:, 1:]
    boundary[:-1, :] |= labels[:-1, :] != labels[1:, :]
    out[boundary] *= 0.25
    return np.clip(out, 0, 255).astype(np.uint8)


def save_region_figure(path, rgb: np.ndarray, labels: np.ndarray, title: str = "") -> None:
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    axes[0].imshow(rgb)
    axes[0].set_title("image")
    axes[1].imshow(region_overlay(rgb, labels))
    axes[1].set_title(title or f"{labels.max() + 1} regions")
    for ax in axes:
        ax.set_axis_off()
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def save_sample_grid(path, sample, max_images: int = 16) -> None:
    n = min(sample.num_images, max_images)
    cols = min(4, n)
    rows = (n + cols - 1) // cols
    fig, axes = plt.subplots(rows, cols, figsize=(3.2 * cols, 2.0 * rows), squeeze=False)
    for i in range(rows * cols):
        ax = axes[i // cols][i % cols]
        ax.set_axis_off()
        if i < n:
            ax.imshow(sample.images[i])
            ax.set_title(f"img {i} ({len(sample.records_for_image(i))} pastes)", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def save_feature_figure(path, pca_image: np.ndarray, title: str = "features") -> None:
    fig, ax = plt.subplots(figsize=(6, 3.2))
    ax.imshow(pca_image)
    ax.set_title(title)
    ax.set_axis_off()
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
