"""Per-superpixel statistics transfer in l-alpha-beta and guided-filter smoothing."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter

from .matching import region_stats

DEFAULT_SIGMA_FLOOR = 1e-6
DEFAULT_GUIDED_RADIUS = 8
DEFAULT_GUIDED_EPS = 1e-4


@dataclass(frozen=True)
class ChannelStats:
    mean: np.ndarray  # (l, alpha, beta)
    std: np.ndarray

    @classmethod
    def of(cls, values):
        values = np.asarray(values, dtype=np.float64).reshape(-1, 3)
        mean = values.mean(axis=0)
        return cls(mean, np.sqrt(np.mean((values - mean) ** 2, axis=0)))


def transfer_region(lab, mask, stats_in, stats_ref, sigma_floor=DEFAULT_SIGMA_FLOOR):
    """Recenter and rescale ``lab[mask]`` in place so it takes ``stats_ref``."""
    if not np.any(mask):
        raise ValueError("empty region")
    scale = stats_ref.std / np.maximum(stats_in.std, sigma_floor)
    lab[mask] = (lab[mask] - stats_in.mean) * scale + stats_ref.mean
    return lab


def box_mean(plane, radius):
    if radius == 0:
        return plane.copy()
    return uniform_filter(plane, size=2 * radius + 1, mode="nearest")


def guided_filter(guide, src, radius, eps):
    """Gray-guide guided filter with replicate-padded box means.

    Windows where ``var + eps`` is zero fall back to ``a = 0``.
    """
    guide = np.asarray(guide, dtype=np.float64)
    src = np.asarray(src, dtype=np.float64)
    if guide.shape != src.shape:
        raise ValueError("guide and src must have the same shape")
    if radius < 0 or eps < 0:
        raise ValueError("radius and eps must be non-negative")
    if radius == 0:
        return src.copy()
    mean_g = box_mean(guide, radius)
    mean_s = box_mean(src, radius)
    var = np.maximum(box_mean(guide * guide, radius) - mean_g * mean_g, 0.0)
    cov = box_mean(guide * src, radius) - mean_g * mean_s
    denom = var + eps
    a = np.divide(cov, denom, out=np.zeros_like(cov), where=denom > 0)
    b = mean_s - a * mean_g
    return box_mean(a, radius) * guide + box_mean(b, radius)


def transfer_all(lab_in, lab_ref, labels_in, labels_ref, mapping, sigma_floor=DEFAULT_SIGMA_FLOOR):
    """Statistics transfer for every input superpixel; ``mapping[i]`` is the
    reference superpixel driving input superpixel ``i``.  Returns the new
    l-alpha-beta plane before smoothing."""
    flat_in = labels_in.labels.ravel()
    flat_ref = labels_ref.labels.ravel()
    lab_in_flat = np.asarray(lab_in, dtype=np.float64).reshape(-1, 3)
    mean_in, std_in = region_stats(lab_in_flat, flat_in, labels_in.n_superpixels)
    mean_ref, std_ref = region_stats(
        np.asarray(lab_ref, dtype=np.float64).reshape(-1, 3), flat_ref, labels_ref.n_superpixels
    )
    mapping = np.asarray(mapping, dtype=np.intp)
    out = lab_in_flat.copy()
    # regions are disjoint, so a single vectorized pass equals any per-region order
    src = mapping[flat_in]
    scale = std_ref[src] / np.maximum(std_in[flat_in], sigma_floor)
    out = (out - mean_in[flat_in]) * scale + mean_ref[src]
    return out.reshape(np.shape(lab_in))


def smooth_transfer(lab_in, lab_transferred, guide, radius, eps):
    """Guided-filter the per-pixel change and add it back onto the input.

    Smoothing the change rather than the image removes seams between
    superpixels without blurring detail the input already had.
    """
    delta = lab_transferred - lab_in
    out = np.empty_like(lab_in)
    for c in range(3):
        out[..., c] = lab_in[..., c] + guided_filter(guide, delta[..., c], radius, eps)
    return out


def stylize(lab_in, lab_ref, labels_in, labels_ref, mapping, guide, config):
    """Transfer then smooth; returns ``(smoothed, unsmoothed)`` planes."""
    raw = transfer_all(lab_in, lab_ref, labels_in, labels_ref, mapping, config.sigma_floor)
    return smooth_transfer(lab_in, raw, guide, config.guided_radius, config.guided_eps), raw
