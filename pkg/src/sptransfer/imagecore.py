"""Raster helpers and color-space conversions.

Images are float64 arrays of shape ``(H, W, 3)`` with channels in [0, 1].
The decorrelated space is the log-LMS based l-alpha-beta space:

    RGB --(RGB_TO_LMS)--> LMS --(log10, floored)--> log LMS --(LAB_MIX)--> l, alpha, beta

``RGB_TO_LMS`` is the matrix used by Reinhard et al. (2001)::

    [[0.3811, 0.5783, 0.0402],
     [0.1967, 0.7244, 0.0782],
     [0.0241, 0.1288, 0.8444]]
"""

import numpy as np

RGB_TO_LMS = np.array(
    [
        [0.3811, 0.5783, 0.0402],
        [0.1967, 0.7244, 0.0782],
        [0.0241, 0.1288, 0.8444],
    ]
)
LMS_TO_RGB = np.linalg.inv(RGB_TO_LMS)

_LAB_SCALE = np.diag([1.0 / np.sqrt(3.0), 1.0 / np.sqrt(6.0), 1.0 / np.sqrt(2.0)])
_LAB_COMBINE = np.array(
    [
        [1.0, 1.0, 1.0],
        [1.0, 1.0, -2.0],
        [1.0, -1.0, 0.0],
    ]
)
LAB_MIX = _LAB_SCALE @ _LAB_COMBINE

_LAB_MIX_EXPECTED = np.array(
    [
        [1 / np.sqrt(3), 1 / np.sqrt(3), 1 / np.sqrt(3)],
        [1 / np.sqrt(6), 1 / np.sqrt(6), -2 / np.sqrt(6)],
        [1 / np.sqrt(2), -1 / np.sqrt(2), 0.0],
    ]
)
assert np.allclose(LAB_MIX, _LAB_MIX_EXPECTED, rtol=0, atol=1e-12)

LAB_UNMIX = np.linalg.inv(LAB_MIX)

DEFAULT_LOG_FLOOR = 1e-6

# 10**300 keeps every downstream product finite
_MAX_LOG = 300.0


class ImageError(ValueError):
    """Raised when an array is not a valid image plane."""


def check_image(img):
    """Validate and return ``img`` as a float64 ``(H, W, 3)`` array in [0, 1]."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ImageError(f"expected an (H, W, 3) array, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ImageError("image must be at least 1x1")
    if not np.all(np.isfinite(arr)):
        raise ImageError("image contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ImageError("image channels must lie in [0, 1]")
    return arr


def rgb_to_lab(img, log_floor=DEFAULT_LOG_FLOOR):
    """Map an RGB image to l-alpha-beta.

    LMS responses below ``log_floor`` are clamped before the logarithm so
    black pixels stay finite.
    """
    if log_floor <= 0:
        raise ValueError("log_floor must be positive")
    rgb = check_image(img)
    lms = rgb @ RGB_TO_LMS.T
    log_lms = np.log10(np.maximum(lms, log_floor))
    return log_lms @ LAB_MIX.T


def lab_to_rgb(lab):
    """Inverse of :func:`rgb_to_lab`, clamped to [0, 1]."""
    lab = np.asarray(lab, dtype=np.float64)
    if lab.ndim != 3 or lab.shape[2] != 3:
        raise ImageError(f"expected an (H, W, 3) array, got shape {lab.shape}")
    log_lms = np.clip(lab @ LAB_UNMIX.T, -_MAX_LOG, _MAX_LOG)
    rgb = np.power(10.0, log_lms) @ LMS_TO_RGB.T
    rgb = np.nan_to_num(rgb, nan=0.0, posinf=1.0, neginf=0.0)
    return np.clip(rgb, 0.0, 1.0)


def intensity_plane(img):
    """Per-pixel Euclidean norm of the RGB triple, in [0, sqrt(3)]."""
    rgb = check_image(img)
    return np.sqrt(np.sum(rgb * rgb, axis=2))


def to_uint8(img):
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def from_uint8(arr):
    arr = np.asarray(arr)
    if arr.ndim == 2:
        arr = np.stack([arr] * 3, axis=2)
    if arr.shape[2] == 4:
        arr = arr[:, :, :3]
    return arr.astype(np.float64) / 255.0
