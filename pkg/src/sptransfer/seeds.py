"""Seed superpixels grown around matched points by thresholded feature distance."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .features import ALL_TOGGLES, term_scales

UNCOVERED = -1
SEED = "seed"
PARTITION = "partition"

T_CLUSTER_PERCENTILE = 60.0
T_CLUSTER_SAMPLES = 1000


@dataclass(frozen=True)
class SuperpixelLabelMap:
    """Per-pixel superpixel ids (``-1`` = uncovered) plus the origin of each id.

    ``origin[s]`` is ``("seed", matched_point_id)`` or ``("partition", cluster)``.
    """

    labels: np.ndarray
    origin: tuple

    @property
    def shape(self):
        return self.labels.shape

    @property
    def n_superpixels(self):
        return len(self.origin)

    @property
    def covered(self):
        return self.labels >= 0

    def seed_ids(self):
        """Matched-point id -> superpixel id, for seeds."""
        return {tag: sp for sp, (kind, tag) in enumerate(self.origin) if kind == SEED}

    def validate(self):
        ids = np.unique(self.labels[self.labels >= 0])
        if not np.array_equal(ids, np.arange(self.n_superpixels)):
            raise AssertionError("superpixel ids are not dense or some id is empty")


def _style_related_terms(bank, scales, flat_px, flat_ref):
    total = np.zeros(len(flat_px))
    for term, arr in (("M", bank.M), ("T", bank.T), ("C", bank.C), ("DV", bank.DV), ("La", bank.La)):
        if scales[term]:
            flat = arr.reshape(-1, arr.shape[-1])
            d = flat[flat_px] - flat[flat_ref]
            total += scales[term] * np.sum(d * d, axis=1)
    return total


def seed_distance(bank, pixel_loc, match_loc, weights, toggles=ALL_TOGGLES):
    """``sum ||delta||^2 / lambda`` over ``M, T, C, DV, La`` between two pixels."""
    w = bank.shape[1]
    scales = term_scales(weights, toggles)
    a = np.array([pixel_loc[0] * w + pixel_loc[1]])
    b = np.array([match_loc[0] * w + match_loc[1]])
    return float(_style_related_terms(bank, scales, a, b)[0])


def default_window(shape, n_matches):
    h, w = shape
    return 2 * math.ceil(math.hypot(h, w) / math.sqrt(n_matches))


def _window_slices(shape, loc, window):
    h, w = shape
    if window is None:
        return slice(0, h), slice(0, w)
    r, c = loc
    return slice(max(0, r - window), min(h, r + window + 1)), slice(max(0, c - window), min(w, c + window + 1))


def min_seed_distances(bank, match_locs, weights, window=None, toggles=ALL_TOGGLES):
    """Per-pixel minimum seed distance and its arg-min matched-point id.

    Only pixels inside a square window of radius ``window`` around a matched
    point are compared with it (``None`` = whole image).  Ties go to the lower
    id.  Unreached pixels get ``inf`` and id ``-1``.
    """
    h, w = bank.shape
    scales = term_scales(weights, toggles)
    best = np.full((h, w), np.inf)
    arg = np.full((h, w), -1, dtype=np.intp)
    flat_idx = np.arange(h * w).reshape(h, w)
    for m, (r, c) in enumerate(match_locs):
        rs, cs = _window_slices((h, w), (r, c), window)
        px = flat_idx[rs, cs].ravel()
        d = _style_related_terms(bank, scales, px, np.full(len(px), r * w + c))
        d = d.reshape(rs.stop - rs.start, cs.stop - cs.start)
        block_best = best[rs, cs]
        better = d < block_best
        block_best[better] = d[better]
        arg[rs, cs][better] = m
    return best, arg


def auto_t_cluster(best, rng, percentile=T_CLUSTER_PERCENTILE, samples=T_CLUSTER_SAMPLES):
    """Percentile of per-pixel minimum seed distances over a random pixel subset."""
    flat = best.ravel()
    n = min(samples, flat.size)
    pick = rng.choice(flat.size, size=n, replace=False)
    return float(np.percentile(flat[pick], percentile, method="lower"))


def grow_seeds(bank, matches, weights, t_cluster, window=None, toggles=ALL_TOGGLES, precomputed=None):
    """Label every pixel within ``t_cluster`` of its closest matched point.

    Superpixel ids are assigned in matched-point id order; a matched point
    that claims no pixel (its location coincides with a lower id's) gets no
    superpixel.
    """
    if len(matches) == 0:
        raise ValueError("no matched points")
    locs = matches.locs(bank.side)
    if precomputed is None:
        best, arg = min_seed_distances(bank, locs, weights, window, toggles)
    else:
        best, arg = precomputed
    owner = np.where(best <= t_cluster, arg, UNCOVERED)
    # a matched pixel always belongs to a seed
    for m in range(len(locs) - 1, -1, -1):
        r, c = locs[m]
        owner[r, c] = m
    return relabel_seeds(owner)


def relabel_seeds(owner):
    present = np.unique(owner[owner >= 0])
    lut = np.full(int(owner.max()) + 2 if owner.size else 1, UNCOVERED, dtype=np.intp)
    lut[present] = np.arange(len(present))
    labels = np.where(owner >= 0, lut[np.maximum(owner, 0)], UNCOVERED)
    return SuperpixelLabelMap(labels, tuple((SEED, int(m)) for m in present))
