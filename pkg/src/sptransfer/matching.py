"""Superpixel-level bipartite graph and one-to-one matching."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .features import ALL_TOGGLES, TEXTURE_DIM
from .partition import pixel_affinity

DEFAULT_EPSILON_EDGE = 1e-4


@dataclass(frozen=True)
class SuperpixelDescriptor:
    id: int
    side: str
    pixel_count: int
    mean_f: np.ndarray
    lab_mean: np.ndarray
    lab_std: np.ndarray


def aggregate_superpixels(bank, label_map, lab):
    """Mean style-free feature and population l-alpha-beta statistics per superpixel."""
    labels = label_map.labels.ravel()
    if np.any(labels < 0):
        raise ValueError("label map still has uncovered pixels")
    n_sp = label_map.n_superpixels
    n = bank.n_matches
    counts = np.bincount(labels, minlength=n_sp).astype(np.float64)

    f_sum = np.zeros((n_sp, 2 * n + TEXTURE_DIM + 2))
    k = bank.n_neighbors
    nb = bank.neighbors.reshape(-1, k)
    rows = np.repeat(labels, k)
    np.add.at(f_sum, (rows, nb.ravel()), bank.S.reshape(-1))
    np.add.at(f_sum[:, n : n + TEXTURE_DIM], labels, bank.T.reshape(-1, TEXTURE_DIM))
    np.add.at(f_sum[:, n + TEXTURE_DIM : n + TEXTURE_DIM + 2], labels, bank.La.reshape(-1, 2))
    np.add.at(f_sum, (rows, n + TEXTURE_DIM + 2 + nb.ravel()), bank.Lr.reshape(-1))
    mean_f = f_sum / counts[:, None]

    lab_flat = np.asarray(lab, dtype=np.float64).reshape(-1, 3)
    means, stds = region_stats(lab_flat, labels, n_sp)
    return [
        SuperpixelDescriptor(i, bank.side, int(counts[i]), mean_f[i], means[i], stds[i]) for i in range(n_sp)
    ]


def region_stats(lab_flat, labels, n_regions):
    """Per-region channel means and population standard deviations (two-pass)."""
    counts = np.bincount(labels, minlength=n_regions).astype(np.float64)
    means = np.zeros((n_regions, 3))
    np.add.at(means, labels, lab_flat)
    means /= counts[:, None]
    centered = lab_flat - means[labels]
    var = np.zeros((n_regions, 3))
    np.add.at(var, labels, centered * centered)
    return means, np.sqrt(var / counts[:, None])


def superpixel_affinity(a, b, weights, toggles=ALL_TOGGLES):
    return float(pixel_affinity(a.mean_f, b.mean_f, weights, toggles))


def affinity_matrix(descs_in, descs_ref, weights, toggles=ALL_TOGGLES):
    fa = np.stack([d.mean_f for d in descs_in])
    fb = np.stack([d.mean_f for d in descs_ref])
    return pixel_affinity(fa[:, None, :], fb[None, :, :], weights, toggles)


def hungarian(cost):
    """Minimum-cost perfect assignment on a square matrix.

    Shortest augmenting paths with dual potentials, O(n^3).  Returns
    ``assign`` with ``assign[row] = col``.
    """
    cost = np.asarray(cost, dtype=np.float64)
    n = cost.shape[0]
    if cost.shape != (n, n):
        raise ValueError("cost matrix must be square")
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    col_owner = np.zeros(n + 1, dtype=np.intp)  # 1-based row per column, 0 = free
    way = np.zeros(n + 1, dtype=np.intp)
    for row in range(1, n + 1):
        col_owner[0] = row
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = col_owner[j0]
            free = ~used[1:]
            reduced = cost[i0 - 1] - u[i0] - v[1:]
            better = free & (reduced < minv[1:])
            minv[1:][better] = reduced[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            u[col_owner[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if col_owner[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            col_owner[j0] = col_owner[j1]
            j0 = j1
    assign = np.empty(n, dtype=np.intp)
    assign[col_owner[1:] - 1] = np.arange(n)
    return assign


@dataclass(frozen=True)
class CorrespondenceTable:
    """``pairs`` is one-to-one; ``fallback`` covers the remaining input superpixels."""

    pairs: dict
    fallback: dict
    affinity: np.ndarray | None = None
    assignment: np.ndarray | None = None

    def resolve(self, input_id):
        if input_id in self.pairs:
            return self.pairs[input_id]
        return self.fallback[input_id]

    def as_array(self, n_input):
        return np.array([self.resolve(i) for i in range(n_input)], dtype=np.intp)


def padded_cost(affinity):
    a = np.asarray(affinity, dtype=np.float64)
    n, m = a.shape
    size = max(n, m)
    cost = np.ones((size, size))
    cost[:n, :m] = 1.0 - a
    return cost


def hungarian_match(affinity, epsilon_edge=DEFAULT_EPSILON_EDGE):
    """One-to-one superpixel correspondence maximizing total affinity.

    Cost is ``1 - affinity``, padded to square with dummy cost 1.  Pairs below
    ``epsilon_edge`` or matched to a dummy are dropped; those input superpixels
    fall back to their highest-affinity reference superpixel.
    """
    a = np.asarray(affinity, dtype=np.float64)
    n, m = a.shape
    if n < 1 or m < 1:
        raise ValueError("affinity matrix must be at least 1x1")
    assign = hungarian(padded_cost(a))
    pairs, fallback = {}, {}
    for i in range(n):
        j = int(assign[i])
        if j < m and a[i, j] >= epsilon_edge:
            pairs[i] = j
        else:
            fallback[i] = int(np.argmax(a[i]))
    return CorrespondenceTable(pairs, fallback, a, assign)


def assignment_cost(affinity, assignment):
    """Total padded cost of a full square assignment, summed exactly."""
    cost = padded_cost(affinity)
    return math.fsum(cost[i, j] for i, j in enumerate(assignment))


def index_pairing(labels_in, labels_ref, affinity):
    """Pairing without the superpixel graph: seed of match ``m`` with seed of
    match ``m``, partition cluster ``c`` with cluster ``c``; anything left falls
    back to its highest-affinity reference superpixel."""
    ref_index = {tag: j for j, tag in enumerate(labels_ref.origin)}
    pairs, fallback = {}, {}
    used = set()
    for i, tag in enumerate(labels_in.origin):
        j = ref_index.get(tag)
        if j is not None and j not in used:
            pairs[i] = j
            used.add(j)
        else:
            fallback[i] = int(np.argmax(affinity[i]))
    return CorrespondenceTable(pairs, fallback, np.asarray(affinity))


def format_table(table, n_input):
    lines = []
    for i in range(n_input):
        j = table.resolve(i)
        a = float(table.affinity[i, j]) if table.affinity is not None else float("nan")
        lines.append(f"{i} {j} {a!r}")
    return "\n".join(lines) + "\n"
