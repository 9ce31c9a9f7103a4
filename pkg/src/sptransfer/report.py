"""Figures and raster dumps for inspecting a run."""

from __future__ import annotations

import colorsys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from PIL import Image  # noqa: E402

from .imagecore import to_uint8  # noqa: E402

# fixed metadata keeps repeated renders byte-identical
_PNG_METADATA = {"Software": None}
_GOLDEN = 0.618033988749895


def label_palette(n):
    """``n`` distinct colors; hue steps by the golden ratio so neighbors in id differ."""
    out = np.empty((max(n, 1), 3))
    for i in range(max(n, 1)):
        out[i] = colorsys.hsv_to_rgb((i * _GOLDEN) % 1.0, 0.55 + 0.35 * (i % 2), 0.95 - 0.25 * (i % 3 == 2))
    return out


def label_image(label_map, uncovered=(0.0, 0.0, 0.0)):
    """RGB raster of a label map, uncovered pixels in ``uncovered``."""
    labels = label_map.labels
    pal = label_palette(label_map.n_superpixels)
    img = np.empty(labels.shape + (3,))
    img[:] = uncovered
    cov = labels >= 0
    img[cov] = pal[labels[cov]]
    return img


def boundaries(labels):
    """Pixels whose right or lower neighbor carries another label."""
    edge = np.zeros(labels.shape, bool)
    edge[:, :-1] |= labels[:, 1:] != labels[:, :-1]
    edge[:-1, :] |= labels[1:, :] != labels[:-1, :]
    return edge


def save_png(img, path):
    Image.fromarray(to_uint8(img)).save(path, format="PNG")


def save_figure(fig, path, dpi=100):
    fig.savefig(path, dpi=dpi, format="png", metadata=_PNG_METADATA)
    plt.close(fig)


def match_overlay(img_in, img_ref, matches, max_lines=200):
    """Input and reference side by side with a line per matched point."""
    h1, w1 = img_in.shape[:2]
    h2, w2 = img_ref.shape[:2]
    h = max(h1, h2)
    canvas = np.ones((h, w1 + w2, 3))
    canvas[:h1, :w1] = img_in
    canvas[:h2, w1:] = img_ref

    fig, ax = plt.subplots(figsize=(8, 8 * h / (w1 + w2) + 0.6))
    ax.imshow(canvas, interpolation="nearest")
    order = np.argsort(-matches.scores, kind="stable")[:max_lines]
    cmap = plt.get_cmap("viridis")
    lo, hi = float(matches.scores.min()), float(matches.scores.max())
    span = hi - lo if hi > lo else 1.0
    for m in order:
        (r1, c1), (r2, c2) = matches.input_locs[m], matches.ref_locs[m]
        color = cmap((matches.scores[m] - lo) / span)
        ax.plot([c1, c2 + w1], [r1, r2], "-", color=color, lw=0.8)
        ax.plot([c1, c2 + w1], [r1, r2], "o", color=color, ms=2.5)
    ax.set_xlim(-0.5, w1 + w2 - 0.5)
    ax.set_ylim(h - 0.5, -0.5)
    ax.set_axis_off()
    ax.set_title(f"{len(matches)} matches (color = score)", fontsize=9)
    fig.tight_layout()
    return fig


def labels_figure(img_in, img_ref, labels_in, labels_ref, table=None):
    """Label maps over the images; paired superpixels share a color when ``table`` is given."""
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.6))
    pal_ref = label_palette(labels_ref.n_superpixels)
    pal_in = label_palette(labels_in.n_superpixels)
    if table is not None:
        mapping = table.as_array(labels_in.n_superpixels)
        pal_in = pal_ref[mapping]
    for ax, img, lm, pal, title in (
        (axes[0], img_in, labels_in, pal_in, "input"),
        (axes[1], img_ref, labels_ref, pal_ref, "reference"),
    ):
        lab = lm.labels
        tint = np.zeros(lab.shape + (3,))
        cov = lab >= 0
        tint[cov] = pal[lab[cov]]
        view = 0.45 * img + 0.55 * tint
        edge = boundaries(lab)
        view[edge] = 0.6 * view[edge] + 0.4
        ax.imshow(np.clip(view, 0, 1), interpolation="nearest")
        ax.set_title(f"{title}: {lm.n_superpixels} superpixels", fontsize=9)
        ax.set_axis_off()
    fig.tight_layout()
    return fig


def summary_figure(report, img_in, img_ref, out, labels_in, labels_ref):
    """Images before/after, superpixel size distribution and run counts.

    Timings are left out so repeated runs render identical bytes.
    """
    fig = plt.figure(figsize=(10, 5.2))
    grid = fig.add_gridspec(2, 3, height_ratios=[3, 2])
    for k, (img, title) in enumerate(((img_in, "input"), (img_ref, "reference"), (out, "output"))):
        ax = fig.add_subplot(grid[0, k])
        ax.imshow(np.clip(img, 0, 1), interpolation="nearest")
        ax.set_title(title, fontsize=9)
        ax.set_axis_off()

    ax = fig.add_subplot(grid[1, :2])
    areas = [np.bincount(lm.labels[lm.labels >= 0].ravel()) for lm in (labels_in, labels_ref)]
    top = max(int(a.max()) for a in areas)
    bins = np.unique(np.geomspace(1, top + 1, 25).astype(int))
    ax.hist(areas, bins=bins, label=["input", "reference"], color=["0.25", "0.65"])
    ax.set_xscale("log")
    ax.set_xlabel("superpixel area (pixels)", fontsize=8)
    ax.set_ylabel("count", fontsize=8)
    ax.tick_params(labelsize=8)
    ax.legend(fontsize=8, frameon=False)
    for side in ("top", "right"):
        ax.spines[side].set_visible(False)

    ax = fig.add_subplot(grid[1, 2])
    ax.set_axis_off()
    keys = ("matches_kept", "input_superpixels", "reference_superpixels", "partition_k", "matched_pairs", "fallbacks")
    text = "\n".join(f"{k}: {report.counts[k]}" for k in keys if k in report.counts)
    ax.text(0.0, 1.0, text, va="top", ha="left", family="monospace", fontsize=8)
    fig.tight_layout()
    return fig
