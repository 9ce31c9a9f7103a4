"""Hierarchical per-pixel features.

Style-related features (change when an image is restyled):

* ``M``  patch intensity vector, ``p*p`` values
* ``C``  RGB color
* ``I``  intensity, the RGB norm
* ``DV`` gradient-magnitude patch vector, ``p*p`` values

Style-independent features:

* ``T``   texture descriptor, 10 values (see :func:`texture_feature`)
* ``La``  absolute location ``(row / h, col / w)``
* ``Lr``  ridge coordinates of the pixel location over its nearest matched points
  (5 by default)
* ``S``   ridge coordinates of the pixel's ``[M, C, I, DV]`` stack over the same
  matched points' stacks

``Lr`` and ``S`` are sparse vectors indexed by matched-point id.  The
style-independent vector used across images is ``f = [S, T, La, Lr]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .correspondence import nearest_matches, nearest_matches_grid
from .imagecore import check_image, intensity_plane

N_NEIGHBORS = 5
TEXTURE_DIM = 10
N_ORIENTATION_BINS = 8
DEFAULT_PATCH_SIDE = 5
# gradients below this are rounding noise and cast no orientation vote
FLAT_GRADIENT = 1e-9

ALL_TOGGLES = frozenset({"color", "distance", "texture", "patch", "gradient"})

# feature toggle -> terms it controls
_TOGGLE_TERMS = {
    "color": ("C", "S"),
    "distance": ("La", "Lr"),
    "texture": ("T",),
    "patch": ("M",),
    "gradient": ("DV",),
}

_SOLVE_CHUNK = 16384


@dataclass(frozen=True)
class FeatureWeights:
    lambda_M: float = 0.1
    lambda_T: float = 0.001
    lambda_C: float = 0.0001
    lambda_DV: float = 1e-6
    lambda_S: float = 0.1
    lambda_La: float = 0.01
    lambda_Lr: float = 0.01
    n_alpha: float = 1000.0
    n_beta: float = 1e6

    def __post_init__(self):
        for name, value in vars(self).items():
            if not value > 0:
                raise ValueError(f"{name} must be strictly positive, got {value}")


def term_scales(weights, toggles=ALL_TOGGLES):
    """Map each feature term to ``1 / lambda``, or 0 when its toggle is off."""
    unknown = set(toggles) - ALL_TOGGLES
    if unknown:
        raise ValueError(f"unknown feature toggles: {sorted(unknown)}")
    scales = {}
    for toggle, terms in _TOGGLE_TERMS.items():
        for term in terms:
            lam = getattr(weights, f"lambda_{term}")
            scales[term] = 1.0 / lam if toggle in toggles else 0.0
    return scales


class SparseCode(NamedTuple):
    """Coefficients stored at matched-point ids."""

    ids: np.ndarray
    values: np.ndarray

    def dense(self, n):
        out = np.zeros(n)
        out[self.ids] = self.values
        return out


# single-pixel features ------------------------------------------------------


def _check_patch_side(patch_side, minimum=1):
    if patch_side < minimum or patch_side % 2 == 0:
        raise ValueError(f"patch_side must be odd and >= {minimum}, got {patch_side}")


def _patch_coords(shape, loc, patch_side):
    h, w = shape
    r = patch_side // 2
    i, j = loc
    rows = np.clip(np.arange(i - r, i + r + 1), 0, h - 1)
    cols = np.clip(np.arange(j - r, j + r + 1), 0, w - 1)
    return rows, cols


def _gradient_at(intensity, row, col):
    h, w = intensity.shape
    dx = (intensity[row, min(col + 1, w - 1)] - intensity[row, max(col - 1, 0)]) / 2.0
    dy = (intensity[min(row + 1, h - 1), col] - intensity[max(row - 1, 0), col]) / 2.0
    return dx, dy


def patch_intensity(img, loc, patch_side):
    """Row-major intensities of the patch around ``loc`` (replicate borders)."""
    _check_patch_side(patch_side)
    intensity = intensity_plane(img)
    rows, cols = _patch_coords(intensity.shape, loc, patch_side)
    return np.array([intensity[r, c] for r in rows for c in cols])


def gradient_patch(img, loc, patch_side):
    """Gradient magnitudes over the patch around ``loc``.

    Central differences on the intensity plane, replicate borders.
    """
    _check_patch_side(patch_side)
    intensity = intensity_plane(img)
    rows, cols = _patch_coords(intensity.shape, loc, patch_side)
    out = []
    for r in rows:
        for c in cols:
            dx, dy = _gradient_at(intensity, r, c)
            out.append(np.hypot(dx, dy))
    return np.array(out)


def texture_feature(img, loc, patch_side):
    """10-value texture descriptor of the patch around ``loc``.

    ``[std of intensities, mean gradient magnitude, 8-bin orientation histogram]``.
    Orientation bins are pi/4 wide over [0, 2pi); each gradient votes its
    magnitude above ``FLAT_GRADIENT`` and the histogram is L2-normalized (left
    at zero when flat).
    """
    _check_patch_side(patch_side, minimum=3)
    intensity = intensity_plane(img)
    rows, cols = _patch_coords(intensity.shape, loc, patch_side)
    values, mags = [], []
    hist = np.zeros(N_ORIENTATION_BINS)
    for r in rows:
        for c in cols:
            values.append(intensity[r, c])
            dx, dy = _gradient_at(intensity, r, c)
            mag = np.hypot(dx, dy)
            mags.append(mag)
            if mag > FLAT_GRADIENT:
                angle = np.mod(np.arctan2(dy, dx), 2 * np.pi)
                hist[int(angle // (np.pi / 4)) % N_ORIENTATION_BINS] += mag
    norm = np.linalg.norm(hist)
    if norm > 0:
        hist = hist / norm
    return np.concatenate([[np.std(values), np.mean(mags)], hist])


def ridge_coefficients(basis, target, ridge):
    """Solve ``(B^T B + ridge * Id) x = B^T y`` for a ``(d, k)`` basis ``B``."""
    basis = np.asarray(basis, dtype=np.float64)
    gram = basis.T @ basis + ridge * np.eye(basis.shape[1])
    return np.linalg.solve(gram, basis.T @ np.asarray(target, dtype=np.float64))


def relative_location(loc, matches, side, n_alpha, n_neighbors=N_NEIGHBORS):
    """Ridge coordinates of ``loc`` over its nearest matched locations."""
    ids = nearest_matches(matches, side, loc, n_neighbors)
    tau = matches.locs(side)[ids].T.astype(np.float64)
    alpha = ridge_coefficients(tau, np.asarray(loc, dtype=np.float64), n_alpha)
    return SparseCode(ids, alpha)


def appearance_stack(img, loc, patch_side):
    """``[M, C, I, DV]`` at ``loc``."""
    rgb = check_image(img)
    color = rgb[loc[0], loc[1]]
    return np.concatenate(
        [
            patch_intensity(rgb, loc, patch_side),
            color,
            [np.sqrt(np.sum(color * color))],
            gradient_patch(rgb, loc, patch_side),
        ]
    )


def llc_feature(loc, img, matches, side, n_beta, patch_side, n_neighbors=N_NEIGHBORS):
    """Ridge coordinates of the appearance stack at ``loc`` over the stacks
    of its nearest matched points."""
    ids = nearest_matches(matches, side, loc, n_neighbors)
    locs = matches.locs(side)
    basis = np.stack([appearance_stack(img, tuple(locs[m]), patch_side) for m in ids], axis=1)
    target = appearance_stack(img, loc, patch_side)
    return SparseCode(ids, ridge_coefficients(basis, target, n_beta))


# whole-image bank -------------------------------------------------------------


def _patches(plane, patch_side):
    r = patch_side // 2
    padded = np.pad(plane, r, mode="edge")
    win = sliding_window_view(padded, (patch_side, patch_side))
    return win.reshape(plane.shape[0], plane.shape[1], patch_side * patch_side)


def _patch_sum(plane, patch_side):
    r = patch_side // 2
    h, w = plane.shape[:2]
    pad = [(r, r), (r, r)] + [(0, 0)] * (plane.ndim - 2)
    padded = np.pad(plane, pad, mode="edge")
    acc = np.zeros_like(plane)
    for di in range(patch_side):
        for dj in range(patch_side):
            acc += padded[di : di + h, dj : dj + w]
    return acc


def intensity_gradients(intensity):
    """Central-difference ``(dI_x, dI_y)`` with replicate borders."""
    p = np.pad(intensity, 1, mode="edge")
    dx = (p[1:-1, 2:] - p[1:-1, :-2]) / 2.0
    dy = (p[2:, 1:-1] - p[:-2, 1:-1]) / 2.0
    return dx, dy


def _batched_ridge(bases, targets, ridge):
    # bases (N, d, k), targets (N, d)
    k = bases.shape[2]
    gram = np.einsum("ndk,ndl->nkl", bases, bases) + ridge * np.eye(k)
    rhs = np.einsum("ndk,nd->nk", bases, targets)
    return np.linalg.solve(gram, rhs[..., None])[..., 0]


@dataclass(frozen=True)
class PixelFeatureBank:
    """All features for every pixel of one image.

    Dense features are ``(H, W, ...)`` arrays.  ``neighbors`` holds the 5
    nearest matched-point ids per pixel (nearest first); ``Lr`` and ``S`` hold
    the coefficients stored at those ids.
    """

    side: str
    n_matches: int
    patch_side: int
    M: np.ndarray
    C: np.ndarray
    I: np.ndarray
    DV: np.ndarray
    T: np.ndarray
    La: np.ndarray
    neighbors: np.ndarray
    Lr: np.ndarray
    S: np.ndarray

    @property
    def shape(self):
        return self.I.shape

    @property
    def n_neighbors(self):
        return self.neighbors.shape[-1]

    @property
    def f_dim(self):
        return 2 * self.n_matches + TEXTURE_DIM + 2

    def style_free(self, i, j):
        """Dense ``f = [S, T, La, Lr]`` at pixel ``(i, j)``."""
        n = self.n_matches
        s = np.zeros(n)
        s[self.neighbors[i, j]] = self.S[i, j]
        lr = np.zeros(n)
        lr[self.neighbors[i, j]] = self.Lr[i, j]
        return np.concatenate([s, self.T[i, j], self.La[i, j], lr])

    def appearance(self):
        """``[M, C, I, DV]`` stacked per pixel, shape ``(H, W, 2p^2 + 4)``."""
        return np.concatenate([self.M, self.C, self.I[..., None], self.DV], axis=2)


def build_feature_bank(
    img, matches, side, weights=FeatureWeights(), patch_side=DEFAULT_PATCH_SIDE, n_neighbors=N_NEIGHBORS
):
    rgb = check_image(img)
    _check_patch_side(patch_side, minimum=3)
    h, w = rgb.shape[:2]
    if (h, w) != tuple(matches.dims(side)):
        raise ValueError(f"image is {h}x{w} but matches expect {matches.dims(side)}")
    if len(matches) < n_neighbors:
        raise ValueError(f"need at least {n_neighbors} matches")

    intensity = intensity_plane(rgb)
    dx, dy = intensity_gradients(intensity)
    mag = np.hypot(dx, dy)

    M = _patches(intensity, patch_side)
    DV = _patches(mag, patch_side)

    angle = np.mod(np.arctan2(dy, dx), 2 * np.pi)
    bins = (angle // (np.pi / 4)).astype(np.intp) % N_ORIENTATION_BINS
    votes = np.zeros((h, w, N_ORIENTATION_BINS))
    np.put_along_axis(votes, bins[..., None], np.where(mag > FLAT_GRADIENT, mag, 0.0)[..., None], axis=2)
    hist = _patch_sum(votes, patch_side)
    norm = np.linalg.norm(hist, axis=2, keepdims=True)
    hist = np.divide(hist, norm, out=np.zeros_like(hist), where=norm > 0)
    T = np.concatenate([np.std(M, axis=2)[..., None], DV.mean(axis=2)[..., None], hist], axis=2)

    rows, cols = np.mgrid[0:h, 0:w]
    La = np.stack([rows / h, cols / w], axis=2).astype(np.float64)

    neighbors = nearest_matches_grid(matches, side, n_neighbors)
    locs = matches.locs(side).astype(np.float64)

    appearance = np.concatenate([M, rgb, intensity[..., None], DV], axis=2)
    d = appearance.shape[2]
    basis_stack = appearance[matches.locs(side)[:, 0], matches.locs(side)[:, 1]]  # (n, d)

    flat_nb = neighbors.reshape(-1, n_neighbors)
    flat_pos = np.stack([rows.ravel(), cols.ravel()], axis=1).astype(np.float64)
    flat_app = appearance.reshape(-1, d)
    Lr = np.empty(flat_nb.shape)
    S = np.empty(flat_nb.shape)
    for start in range(0, len(flat_nb), _SOLVE_CHUNK):
        sl = slice(start, start + _SOLVE_CHUNK)
        nb = flat_nb[sl]
        tau = np.transpose(locs[nb], (0, 2, 1))  # (N, 2, 5)
        Lr[sl] = _batched_ridge(tau, flat_pos[sl], weights.n_alpha)
        tau_f = np.transpose(basis_stack[nb], (0, 2, 1))  # (N, d, 5)
        S[sl] = _batched_ridge(tau_f, flat_app[sl], weights.n_beta)

    return PixelFeatureBank(
        side=side,
        n_matches=len(matches),
        patch_side=patch_side,
        M=M,
        C=rgb.copy(),
        I=intensity,
        DV=DV,
        T=T,
        La=La,
        neighbors=neighbors,
        Lr=Lr.reshape(h, w, n_neighbors),
        S=S.reshape(h, w, n_neighbors),
    )


# distances ------------------------------------------------------------------


def sparse_sqdist(ids_a, vals_a, ids_b, vals_b):
    """Squared distance between row-aligned sparse codes, shape ``(N,)``.

    Within one code the ids are distinct.
    """
    same = ids_a[:, :, None] == ids_b[:, None, :]
    cross = np.einsum("nk,nkl,nl->n", vals_a, same, vals_b)
    return np.sum(vals_a**2, axis=1) + np.sum(vals_b**2, axis=1) - 2.0 * cross


def _sq(a, b):
    d = a - b
    return np.sum(d * d, axis=-1)


def style_free_exponent(bank_a, flat_a, bank_b, flat_b, scales):
    """Weighted ``sum ||delta||^2 / lambda`` over ``f = [S, T, La, Lr]``.

    ``flat_a`` and ``flat_b`` are row-aligned flat pixel indices.
    """
    out = np.zeros(len(flat_a))
    nb_a = bank_a.neighbors.reshape(-1, bank_a.n_neighbors)[flat_a]
    nb_b = bank_b.neighbors.reshape(-1, bank_b.n_neighbors)[flat_b]
    if scales["S"]:
        s_a = bank_a.S.reshape(-1, bank_a.n_neighbors)[flat_a]
        s_b = bank_b.S.reshape(-1, bank_b.n_neighbors)[flat_b]
        out += scales["S"] * sparse_sqdist(nb_a, s_a, nb_b, s_b)
    if scales["T"]:
        out += scales["T"] * _sq(bank_a.T.reshape(-1, TEXTURE_DIM)[flat_a], bank_b.T.reshape(-1, TEXTURE_DIM)[flat_b])
    if scales["La"]:
        out += scales["La"] * _sq(bank_a.La.reshape(-1, 2)[flat_a], bank_b.La.reshape(-1, 2)[flat_b])
    if scales["Lr"]:
        r_a = bank_a.Lr.reshape(-1, bank_a.n_neighbors)[flat_a]
        r_b = bank_b.Lr.reshape(-1, bank_b.n_neighbors)[flat_b]
        out += scales["Lr"] * sparse_sqdist(nb_a, r_a, nb_b, r_b)
    return np.maximum(out, 0.0)


def split_style_free(f, n_matches):
    """Split a dense ``f`` vector (or rows) into ``(S, T, La, Lr)``."""
    n = n_matches
    return (
        f[..., :n],
        f[..., n : n + TEXTURE_DIM],
        f[..., n + TEXTURE_DIM : n + TEXTURE_DIM + 2],
        f[..., n + TEXTURE_DIM + 2 :],
    )
