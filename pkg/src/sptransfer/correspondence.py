"""Precomputed dense matches: parsing, confidence filtering, neighbor queries.

Match file format, one match per line::

    x_input y_input x_ref y_ref score

Coordinates are zero-based integer pixels with x = column and y = row.
Lines starting with ``#`` and blank lines are ignored.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np

MIN_MATCHES = 5
INPUT = "input"
REFERENCE = "reference"

# rows of pixels per chunk in the all-pixel neighbor search
_CHUNK_ELEMENTS = 4_000_000


class MatchError(ValueError):
    """Base class for match-file problems."""


class MatchParseError(MatchError):
    pass


class MatchValidationError(MatchError):
    pass


class InsufficientMatchesError(MatchError):
    pass


@dataclass(frozen=True)
class MatchedPointSet:
    """Scored (input, reference) pixel pairs.

    ``input_locs`` and ``ref_locs`` hold ``(row, col)`` integer pairs.  The row
    index of an entry is its matched-point id.
    """

    input_locs: np.ndarray
    ref_locs: np.ndarray
    scores: np.ndarray
    input_dims: tuple[int, int]
    ref_dims: tuple[int, int]

    def __post_init__(self):
        for name, dtype in (("input_locs", np.int64), ("ref_locs", np.int64), ("scores", np.float64)):
            arr = np.array(getattr(self, name), dtype=dtype)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        for name in ("input_dims", "ref_dims"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        n = len(self.scores)
        if self.scores.shape != (n,) or self.input_locs.shape != (n, 2) or self.ref_locs.shape != (n, 2):
            raise MatchValidationError("locations must be (n, 2) and scores (n,)")
        for side, locs, (h, w) in (
            (INPUT, self.input_locs, self.input_dims),
            (REFERENCE, self.ref_locs, self.ref_dims),
        ):
            bad = (locs[:, 0] < 0) | (locs[:, 0] >= h) | (locs[:, 1] < 0) | (locs[:, 1] >= w)
            if np.any(bad):
                r, c = locs[np.argmax(bad)]
                raise MatchValidationError(f"{side} location (row {r}, col {c}) outside {h}x{w}")
        if not np.all(np.isfinite(self.scores)):
            raise MatchValidationError("scores must be finite")

    def __len__(self):
        return len(self.scores)

    def locs(self, side):
        if side == INPUT:
            return self.input_locs
        if side == REFERENCE:
            return self.ref_locs
        raise ValueError(f"unknown side {side!r}")

    def dims(self, side):
        return self.input_dims if side == INPUT else self.ref_dims

    def subset(self, ids):
        ids = np.asarray(ids, dtype=np.intp)
        return MatchedPointSet(
            self.input_locs[ids].copy(),
            self.ref_locs[ids].copy(),
            self.scores[ids].copy(),
            self.input_dims,
            self.ref_dims,
        )

    def scaled(self, factor, input_dims, ref_dims):
        """Rescale coordinates for resized images, clipping to the new bounds."""

        def rescale(locs, dims):
            out = np.round(locs * factor).astype(np.int64)
            out[:, 0] = np.clip(out[:, 0], 0, dims[0] - 1)
            out[:, 1] = np.clip(out[:, 1], 0, dims[1] - 1)
            return out

        return _dedup(
            rescale(self.input_locs, input_dims),
            rescale(self.ref_locs, ref_dims),
            self.scores.copy(),
            tuple(input_dims),
            tuple(ref_dims),
        )


def _dedup(input_locs, ref_locs, scores, input_dims, ref_dims):
    # keep the highest score per input location; the survivor takes the slot of
    # the first occurrence, equal scores keep the earlier line
    best = {}
    order = []
    for i, loc in enumerate(map(tuple, input_locs)):
        if loc not in best:
            best[loc] = i
            order.append(loc)
        elif scores[i] > scores[best[loc]]:
            best[loc] = i
    keep = np.array([best[loc] for loc in order], dtype=np.intp)
    return MatchedPointSet(
        input_locs[keep].copy(), ref_locs[keep].copy(), scores[keep].copy(), input_dims, ref_dims
    )


def load_matches(text, input_dims, ref_dims, min_entries=MIN_MATCHES):
    """Parse a match file.

    ``text`` may be bytes, str, or a binary/text file object.  ``input_dims``
    and ``ref_dims`` are ``(height, width)``.
    """
    if hasattr(text, "read"):
        text = text.read()
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MatchParseError(f"not valid UTF-8: {exc}") from None

    in_h, in_w = input_dims
    ref_h, ref_w = ref_dims
    in_locs, ref_locs, scores = [], [], []
    for lineno, line in enumerate(io.StringIO(text), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        fields = stripped.split()
        if len(fields) != 5:
            raise MatchParseError(f"line {lineno}: expected 5 fields, got {len(fields)}")
        try:
            xi, yi, xr, yr = (int(v) for v in fields[:4])
            score = float(fields[4])
        except ValueError:
            raise MatchParseError(f"line {lineno}: cannot parse {stripped!r}") from None
        if not math.isfinite(score) or score < 0:
            raise MatchValidationError(f"line {lineno}: score must be finite and >= 0")
        if not (0 <= xi < in_w and 0 <= yi < in_h):
            raise MatchValidationError(
                f"line {lineno}: input location (x={xi}, y={yi}) outside {in_w}x{in_h}"
            )
        if not (0 <= xr < ref_w and 0 <= yr < ref_h):
            raise MatchValidationError(
                f"line {lineno}: reference location (x={xr}, y={yr}) outside {ref_w}x{ref_h}"
            )
        in_locs.append((yi, xi))
        ref_locs.append((yr, xr))
        scores.append(score)

    matches = _dedup(
        np.array(in_locs, dtype=np.int64).reshape(-1, 2),
        np.array(ref_locs, dtype=np.int64).reshape(-1, 2),
        np.array(scores, dtype=np.float64),
        (int(in_h), int(in_w)),
        (int(ref_h), int(ref_w)),
    )
    if len(matches) < min_entries:
        raise InsufficientMatchesError(
            f"{len(matches)} matches after deduplication, need at least {min_entries}"
        )
    return matches


def format_matches(matches):
    """Serialize to the match-file format."""
    lines = []
    for (yi, xi), (yr, xr), s in zip(matches.input_locs, matches.ref_locs, matches.scores):
        lines.append(f"{xi} {yi} {xr} {yr} {float(s)!r}")
    return "\n".join(lines) + "\n"


def kept_count(n, fraction):
    # round away float noise first: 0.7 * 10 is 7.000000000000001
    return min(n, math.ceil(round(fraction * n, 9)))


def filter_top_fraction(matches, fraction, min_entries=MIN_MATCHES):
    """Keep the ``ceil(fraction * n)`` highest-scoring matches.

    Ties go to the earlier entry.  Survivors keep their relative order and are
    renumbered ``0..k-1``.
    """
    if not 0 < fraction <= 1:
        raise ValueError("fraction must be in (0, 1]")
    n = len(matches)
    k = kept_count(n, fraction)
    order = np.argsort(-matches.scores, kind="stable")[:k]
    kept = matches.subset(np.sort(order))
    if len(kept) < min_entries:
        raise InsufficientMatchesError(
            f"{len(kept)} matches kept at fraction {fraction}, need at least {min_entries}"
        )
    return kept


def nearest_matches(matches, side, loc, k):
    """Ids of the ``k`` matches nearest to ``loc`` on ``side``.

    Sorted by Euclidean distance, ties to the lower id.
    """
    if k > len(matches):
        raise ValueError(f"k={k} exceeds {len(matches)} matches")
    pts = matches.locs(side)
    d2 = np.sum((pts - np.asarray(loc, dtype=np.int64)) ** 2, axis=1)
    return np.argsort(d2, kind="stable")[:k]


def nearest_matches_grid(matches, side, k):
    """:func:`nearest_matches` for every pixel of ``side``, shape ``(H, W, k)``.

    Squared distances are exact integers, so ties resolve identically to the
    single-pixel query.
    """
    if k > len(matches):
        raise ValueError(f"k={k} exceeds {len(matches)} matches")
    h, w = matches.dims(side)
    pts = matches.locs(side)
    n = len(pts)
    rows, cols = np.mgrid[0:h, 0:w]
    flat = np.stack([rows.ravel(), cols.ravel()], axis=1).astype(np.int64)
    out = np.empty((h * w, k), dtype=np.intp)
    step = max(1, _CHUNK_ELEMENTS // max(n, 1))
    for start in range(0, h * w, step):
        block = flat[start : start + step]
        d2 = (block[:, None, 0] - pts[None, :, 0]) ** 2 + (block[:, None, 1] - pts[None, :, 1]) ** 2
        out[start : start + step] = np.argsort(d2, axis=1, kind="stable")[:, :k]
    return out.reshape(h, w, k)
