"""Pixel-level bipartite graph over uncovered pixels and its spectral co-clustering."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .features import ALL_TOGGLES, split_style_free, style_free_exponent, term_scales
from .seeds import PARTITION, UNCOVERED, SuperpixelLabelMap

DENSE_SVD_LIMIT = 500
AUTO_STRIDE_THRESHOLD = 20_000
KMEANS_MAX_ITER = 100
KMEANS_TOL = 1e-6
KMEANS_MAX_REPAIRS = 10
SVD_DRIFT_TOL = 1e-9
KRYLOV_DEPTH = 3
KRYLOV_OVERSAMPLE = 10
MAX_RESTARTS = 200
GROW_EVERY = 25


class DegenerateGraph(Exception):
    """One side of the pixel graph has no nodes."""


class SVDConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class BipartiteAffinity:
    """Sparse across-affinity between x-nodes (input) and y-nodes (reference).

    ``x_pixels`` / ``y_pixels`` map nodes back to flat pixel indices when the
    graph was built from images.
    """

    n_x: int
    n_y: int
    x: np.ndarray
    y: np.ndarray
    weight: np.ndarray
    x_pixels: np.ndarray | None = None
    y_pixels: np.ndarray | None = None

    def __post_init__(self):
        if len(self.x) and (np.any(self.weight <= 0) or not np.all(np.isfinite(self.weight))):
            raise ValueError("edge weights must be finite and positive")

    @classmethod
    def from_dense(cls, omega):
        omega = np.asarray(omega, dtype=np.float64)
        x, y = np.nonzero(omega)
        return cls(omega.shape[0], omega.shape[1], x, y, omega[x, y])

    def matrix(self):
        return sp.csr_matrix((self.weight, (self.x, self.y)), shape=(self.n_x, self.n_y))

    @property
    def deg_x(self):
        return np.bincount(self.x, weights=self.weight, minlength=self.n_x)

    @property
    def deg_y(self):
        return np.bincount(self.y, weights=self.weight, minlength=self.n_y)

    @property
    def isolated_x(self):
        return self.deg_x <= 0

    @property
    def isolated_y(self):
        return self.deg_y <= 0

    def drop_isolated(self):
        """Graph restricted to non-isolated nodes, plus the kept node indices."""
        keep_x = np.flatnonzero(~self.isolated_x)
        keep_y = np.flatnonzero(~self.isolated_y)
        remap_x = np.full(self.n_x, -1)
        remap_x[keep_x] = np.arange(len(keep_x))
        remap_y = np.full(self.n_y, -1)
        remap_y[keep_y] = np.arange(len(keep_y))
        g = BipartiteAffinity(
            len(keep_x),
            len(keep_y),
            remap_x[self.x],
            remap_y[self.y],
            self.weight,
            None if self.x_pixels is None else self.x_pixels[keep_x],
            None if self.y_pixels is None else self.y_pixels[keep_y],
        )
        return g, keep_x, keep_y


def normalized_across_affinity(g):
    """``D_X^{-1/2} Omega D_Y^{-1/2}`` as a sparse matrix."""
    if np.any(g.isolated_x) or np.any(g.isolated_y):
        raise ValueError("graph has isolated nodes")
    dx = sp.diags(1.0 / np.sqrt(g.deg_x))
    dy = sp.diags(1.0 / np.sqrt(g.deg_y))
    return (dx @ g.matrix() @ dy).tocsr()


def pixel_affinity(f_in, f_ref, weights, toggles=ALL_TOGGLES):
    """``exp(-sum ||delta||^2 / lambda)`` over the ``S, T, La, Lr`` blocks of two
    dense style-free vectors (also works row-wise on 2-D arrays)."""
    f_in = np.asarray(f_in, dtype=np.float64)
    f_ref = np.asarray(f_ref, dtype=np.float64)
    n = (f_in.shape[-1] - 12) // 2
    scales = term_scales(weights, toggles)
    exponent = 0.0
    for term, a, b in zip(("S", "T", "La", "Lr"), split_style_free(f_in, n), split_style_free(f_ref, n)):
        d = a - b
        exponent = exponent + scales[term] * np.sum(d * d, axis=-1)
    return np.exp(-exponent)


def sample_mask(shape, stride):
    rows, cols = np.mgrid[0 : shape[0], 0 : shape[1]]
    return (rows % stride == 0) & (cols % stride == 0)


def auto_stride(uncovered_in, uncovered_ref):
    return 2 if max(uncovered_in, uncovered_ref) > AUTO_STRIDE_THRESHOLD else 1


def build_pixel_graph(bank_in, bank_ref, labels_in, labels_ref, weights, stride=1, toggles=ALL_TOGGLES):
    """Graph over the uncovered pixels of both images (subsampled by ``stride``).

    An input pixel and a reference pixel are joined iff their nearest matched
    point ids coincide.  Edges whose affinity underflows to zero are dropped.
    """
    scales = term_scales(weights, toggles)
    nodes = []
    for bank, labels in ((bank_in, labels_in), (bank_ref, labels_ref)):
        mask = (labels.labels == UNCOVERED) & sample_mask(labels.shape, stride)
        nodes.append(np.flatnonzero(mask.ravel()))
    x_pixels, y_pixels = nodes
    if len(x_pixels) == 0 or len(y_pixels) == 0:
        raise DegenerateGraph("no uncovered pixels on at least one side")

    near_x = bank_in.neighbors[..., 0].ravel()[x_pixels]
    near_y = bank_ref.neighbors[..., 0].ravel()[y_pixels]
    order_y = np.argsort(near_y, kind="stable")
    ys_sorted = near_y[order_y]

    xs_all, ys_all, ws_all = [], [], []
    for m in np.unique(near_x):
        gx = np.flatnonzero(near_x == m)
        lo, hi = np.searchsorted(ys_sorted, [m, m + 1])
        gy = order_y[lo:hi]
        if len(gy) == 0:
            continue
        ex = np.repeat(gx, len(gy))
        ey = np.tile(gy, len(gx))
        w = np.exp(-style_free_exponent(bank_in, x_pixels[ex], bank_ref, y_pixels[ey], scales))
        keep = w > 0
        xs_all.append(ex[keep])
        ys_all.append(ey[keep])
        ws_all.append(w[keep])

    if xs_all:
        x, y, w = np.concatenate(xs_all), np.concatenate(ys_all), np.concatenate(ws_all)
    else:
        x = y = np.zeros(0, dtype=np.intp)
        w = np.zeros(0)
    return BipartiteAffinity(len(x_pixels), len(y_pixels), x, y, w, x_pixels, y_pixels)


def format_edges(g):
    return "".join(f"{a} {b} {float(w)!r}\n" for a, b, w in zip(g.x, g.y, g.weight))


def choose_k(uncovered_count, target_area):
    if target_area < 1:
        raise ValueError("target_area must be >= 1")
    return max(2, math.ceil(uncovered_count / target_area))


# spectral co-clustering -------------------------------------------------------


@dataclass(frozen=True)
class CoClustering:
    k: int
    x_labels: np.ndarray
    y_labels: np.ndarray
    singular_values: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def one_sided(self):
        """Cluster ids present on only one side."""
        in_x = set(np.unique(self.x_labels).tolist())
        in_y = set(np.unique(self.y_labels).tolist())
        return sorted(in_x ^ in_y)


def block_krylov_svd(mat, k, rng, tol=SVD_DRIFT_TOL, depth=KRYLOV_DEPTH, oversample=KRYLOV_OVERSAMPLE, max_restarts=MAX_RESTARTS):
    """Top-``k`` singular triplets of a sparse matrix by restarted block Krylov
    bidiagonal projection.

    Each cycle orthonormalizes the block Krylov space
    ``[V, (A^T A) V, ..., (A^T A)^depth V]``, projects ``A`` onto it and
    restarts from the leading Ritz vectors.  A block method resolves repeated
    singular values, which single-vector Lanczos cannot.  Converged when every
    one of the top ``k`` singular values moves by less than ``tol`` between
    restarts.  A cluster of near-equal values wider than the block stalls
    convergence, so the block doubles every ``GROW_EVERY`` restarts; once it
    spans half the smaller side a dense SVD is cheaper and is used instead.
    """
    n_x, n_y = mat.shape
    block = min(k + oversample, n_y)
    v = np.linalg.qr(rng.standard_normal((n_y, block)))[0]
    matT = mat.T.tocsr()
    prev = None
    drift = np.inf
    for restart in range(1, max_restarts + 1):
        if restart % GROW_EVERY == 0:
            block = min(2 * block, n_y)
            if 2 * block >= min(n_x, n_y):
                u, s, vt = np.linalg.svd(mat.toarray(), full_matrices=False)
                return u[:, :k], s[:k], vt[:k].T
            extra = rng.standard_normal((n_y, block - v.shape[1]))
            v = np.linalg.qr(np.hstack([v, extra]))[0]
        blocks = [v]
        cur = v
        for _ in range(depth):
            cur = matT @ (mat @ cur)
            cur = np.linalg.qr(cur)[0]
            blocks.append(cur)
        basis = np.linalg.qr(np.hstack(blocks))[0]
        if basis.shape[1] > n_y:
            basis = basis[:, :n_y]
        left = mat @ basis
        q, r = np.linalg.qr(left)
        ur, s, vtr = np.linalg.svd(r)
        u_full = q @ ur
        v_full = basis @ vtr.T
        sk = s[:k]
        if prev is not None:
            drift = float(np.max(np.abs(sk - prev)))
            if drift < tol:
                return u_full[:, :k], sk, v_full[:, :k]
        prev = sk
        v = v_full[:, :block]
    raise SVDConvergenceError(
        f"partial SVD of a {n_x}x{n_y} block did not converge after {max_restarts} restarts; "
        f"last singular-value drift {drift:.3e} (tolerance {tol:.1e}), top values {prev[:5]}"
    )


def _top_singular(mat, k, rng):
    n_x, n_y = mat.shape
    k = min(k, n_x, n_y)
    if n_x + n_y < DENSE_SVD_LIMIT or 2 * (k + KRYLOV_OVERSAMPLE) >= min(n_x, n_y):
        u, s, vt = np.linalg.svd(mat.toarray(), full_matrices=False)
        return u[:, :k], s[:k], vt[:k].T
    if n_x < n_y:
        v, s, u = block_krylov_svd(mat.T.tocsr(), k, rng)
        return u, s, v
    return block_krylov_svd(mat, k, rng)


def spectral_embedding(g, k, seed=0):
    """Rows ``[D_X^{-1/2} U; D_Y^{-1/2} V]`` from the top-``k`` singular vectors.

    The normalized matrix is block diagonal over connected components, so its
    partial SVD is assembled from per-component SVDs.  Ties in singular value
    keep component order.  Also returns the node component ids and the
    component owning each embedding column.
    """
    rng = np.random.default_rng(seed)
    norm = normalized_across_affinity(g)
    adj = sp.bmat([[None, g.matrix()], [g.matrix().T, None]], format="csr")
    n_comp, comp = connected_components(adj, directed=False)
    comp_x, comp_y = comp[: g.n_x], comp[g.n_x :]

    triplets = []  # (-sigma, component, rank, xs, ys, u, v)
    for c in range(n_comp):
        xs = np.flatnonzero(comp_x == c)
        ys = np.flatnonzero(comp_y == c)
        block = norm[xs][:, ys]
        u, s, v = _top_singular(block, k, rng)
        for r in range(len(s)):
            triplets.append((-s[r], c, r, xs, ys, u[:, r], v[:, r]))
    triplets.sort(key=lambda t: (t[0], t[1], t[2]))
    triplets = triplets[:k]

    emb = np.zeros((g.n_x + g.n_y, len(triplets)))
    for col, (_, _, _, xs, ys, u, v) in enumerate(triplets):
        emb[xs, col] = u
        emb[g.n_x + ys, col] = v
    emb[: g.n_x] /= np.sqrt(g.deg_x)[:, None]
    emb[g.n_x :] /= np.sqrt(g.deg_y)[:, None]
    col_comp = np.array([t[1] for t in triplets], dtype=np.intp)
    return emb, np.array([-t[0] for t in triplets]), comp, col_comp


def _sqdist(points, centers):
    d = (points * points).sum(1)[:, None] - 2 * points @ centers.T + (centers * centers).sum(1)[None, :]
    return np.maximum(d, 0.0)


def farthest_first(points, k):
    """Deterministic init: farthest point from the mean, then farthest from all chosen."""
    first = int(np.argmax(((points - points.mean(0)) ** 2).sum(1)))
    chosen = [first]
    mind = ((points - points[first]) ** 2).sum(1)
    while len(chosen) < k:
        nxt = int(np.argmax(mind))
        chosen.append(nxt)
        mind = np.minimum(mind, ((points - points[nxt]) ** 2).sum(1))
    return points[chosen].copy()


def kmeans(points, k, max_iter=KMEANS_MAX_ITER, tol=KMEANS_TOL, max_repairs=KMEANS_MAX_REPAIRS):
    """Lloyd iterations from :func:`farthest_first`; returns per-point labels.

    An emptied cluster is re-seeded at the point farthest from its center, at
    most ``max_repairs`` times; after that empty clusters are left out.
    """
    n = len(points)
    k = min(k, n)
    centers = farthest_first(points, k)
    repairs = 0
    prev = np.inf
    labels = np.zeros(n, dtype=np.intp)
    for _ in range(max_iter):
        d = _sqdist(points, centers)
        labels = np.argmin(d, axis=1)
        inertia = float(d[np.arange(n), labels].sum())
        counts = np.bincount(labels, minlength=k)
        empty = np.flatnonzero(counts == 0)
        if len(empty) and repairs < max_repairs:
            own = d[np.arange(n), labels]
            for e in empty:
                if repairs >= max_repairs:
                    break
                far = int(np.argmax(own))
                centers[e] = points[far]
                own[far] = -1.0
                repairs += 1
            continue
        for c in range(k):
            if counts[c]:
                centers[c] = points[labels == c].mean(0)
        if prev - inertia <= tol * max(prev, 1e-300) or inertia == 0:
            break
        prev = inertia
    d = _sqdist(points, centers)
    return np.argmin(d, axis=1)


def _canonical(labels):
    _, first, inverse = np.unique(labels, return_index=True, return_inverse=True)
    rank = np.argsort(np.argsort(first))
    return rank[inverse]


def co_cluster(g, k, seed=0):
    """Spectral co-clustering of ``g`` into ``k`` coupled clusters.

    Cluster ids are renumbered by first appearance over ``[x-nodes, y-nodes]``;
    clusters that end up empty are dropped, so ``result.k`` may be below ``k``.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if np.any(g.isolated_x) or np.any(g.isolated_y):
        raise ValueError("graph has isolated nodes; attach them before co-clustering")
    n = g.n_x + g.n_y
    if k == 1:
        return CoClustering(1, np.zeros(g.n_x, dtype=np.intp), np.zeros(g.n_y, dtype=np.intp))
    emb, sv, comp, col_comp = spectral_embedding(g, k, seed)
    # a cluster never spans components: each component is split into as many
    # clusters as it owns embedding columns (at least one)
    labels = np.empty(n, dtype=np.intp)
    offset = 0
    for c in range(int(comp.max()) + 1):
        rows = np.flatnonzero(comp == c)
        cols = np.flatnonzero(col_comp == c)
        if len(cols) <= 1:
            labels[rows] = offset
            offset += 1
            continue
        local = kmeans(emb[np.ix_(rows, cols)], len(cols))
        labels[rows] = offset + local
        offset += len(cols)
    labels = _canonical(labels)
    return CoClustering(int(labels.max()) + 1 if n else 0, labels[: g.n_x], labels[g.n_x :], sv)


# label-map assembly -------------------------------------------------------------


@dataclass(frozen=True)
class PartitionResult:
    labels_in: SuperpixelLabelMap
    labels_ref: SuperpixelLabelMap
    graph: BipartiteAffinity | None
    k: int
    clusters: int
    stride: int
    attached_isolated: int


def _seed_of_nearest(bank, seed_map, matches, flat_pixels):
    locs = matches.locs(bank.side)
    near = bank.neighbors[..., 0].ravel()[flat_pixels]
    return seed_map.labels[locs[near, 0], locs[near, 1]]


def _inherit(bank, scales, sampled, sampled_labels, targets):
    """Label of the nearest sampled pixel (in weighted f distance) sharing the
    target's nearest matched point; ``-1`` when the group has no sample."""
    out = np.full(len(targets), -1, dtype=np.intp)
    near = bank.neighbors[..., 0].ravel()
    near_s = near[sampled]
    near_t = near[targets]
    for m in np.unique(near_t):
        ti = np.flatnonzero(near_t == m)
        si = np.flatnonzero(near_s == m)
        if len(si) == 0:
            continue
        a = np.repeat(targets[ti], len(si))
        b = np.tile(sampled[si], len(ti))
        d = style_free_exponent(bank, a, bank, b, scales).reshape(len(ti), len(si))
        out[ti] = sampled_labels[si[np.argmin(d, axis=1)]]
    return out


def _merge(seed_map, flat_pixels, cluster_ids):
    """Append partition clusters to a seed label map; ``cluster_ids`` >= 0 are
    cluster indices, negative values ``-(seed_label + 2)`` attach to a seed."""
    labels = seed_map.labels.copy().ravel()
    clusters = np.unique(cluster_ids[cluster_ids >= 0])
    base = seed_map.n_superpixels
    lut = {int(c): base + i for i, c in enumerate(clusters)}
    for px, c in zip(flat_pixels, cluster_ids):
        labels[px] = lut[int(c)] if c >= 0 else -(c + 2)
    origin = seed_map.origin + tuple((PARTITION, int(c)) for c in clusters)
    return SuperpixelLabelMap(labels.reshape(seed_map.shape), origin)


def attach_to_seeds(bank, seed_map, matches):
    """Give every uncovered pixel the seed superpixel of its nearest matched point."""
    flat = np.flatnonzero(seed_map.labels.ravel() == UNCOVERED)
    labels = seed_map.labels.copy().ravel()
    labels[flat] = _seed_of_nearest(bank, seed_map, matches, flat)
    return SuperpixelLabelMap(labels.reshape(seed_map.shape), seed_map.origin)


def partition_uncovered(
    bank_in,
    bank_ref,
    seeds_in,
    seeds_ref,
    matches,
    weights,
    target_area,
    stride=None,
    seed=0,
    toggles=ALL_TOGGLES,
):
    """Cover the pixels left by the seeds on both sides.

    Builds the pixel graph, attaches isolated nodes to the seed superpixel of
    their nearest matched point, co-clusters the rest, and propagates labels to
    pixels skipped by subsampling.
    """
    scales = term_scales(weights, toggles)
    unc_in = int(np.sum(seeds_in.labels == UNCOVERED))
    unc_ref = int(np.sum(seeds_ref.labels == UNCOVERED))
    if stride is None:
        stride = auto_stride(unc_in, unc_ref)
    k = choose_k(unc_in, target_area)
    try:
        graph = build_pixel_graph(bank_in, bank_ref, seeds_in, seeds_ref, weights, stride, toggles)
    except DegenerateGraph:
        return PartitionResult(
            attach_to_seeds(bank_in, seeds_in, matches),
            attach_to_seeds(bank_ref, seeds_ref, matches),
            None,
            k,
            0,
            stride,
            unc_in + unc_ref,
        )

    core, keep_x, keep_y = graph.drop_isolated()
    node_x = np.full(graph.n_x, -1, dtype=np.intp)
    node_y = np.full(graph.n_y, -1, dtype=np.intp)
    n_clusters = 0
    if core.n_x and core.n_y:
        cc = co_cluster(core, k, seed)
        node_x[keep_x] = cc.x_labels
        node_y[keep_y] = cc.y_labels
        n_clusters = cc.k
    attached = int(np.sum(node_x < 0) + np.sum(node_y < 0))

    results = []
    for bank, seed_map, pixels, node in (
        (bank_in, seeds_in, graph.x_pixels, node_x),
        (bank_ref, seeds_ref, graph.y_pixels, node_y),
    ):
        # encode seed attachment as -(label + 2) so it survives _inherit
        iso = node < 0
        node = node.copy()
        node[iso] = -(_seed_of_nearest(bank, seed_map, matches, pixels[iso]) + 2)
        uncovered = np.flatnonzero(seed_map.labels.ravel() == UNCOVERED)
        rest = np.setdiff1d(uncovered, pixels, assume_unique=True)
        rest_ids = _inherit(bank, scales, pixels, node, rest) if len(rest) else np.zeros(0, dtype=np.intp)
        orphan = rest_ids == -1
        rest_ids[orphan] = -(_seed_of_nearest(bank, seed_map, matches, rest[orphan]) + 2)
        attached += int(orphan.sum())
        results.append(_merge(seed_map, np.concatenate([pixels, rest]), np.concatenate([node, rest_ids])))

    return PartitionResult(results[0], results[1], graph, k, n_clusters, stride, attached)
