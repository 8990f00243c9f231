"""Input validation helpers for the field-grid types.

All fields are plain numpy arrays in top-down row-major order
(``v`` = row, ``u`` = column):

* scalar field: ``(H, W)`` float64
* 2-vector field: ``(H, W, 2)`` float64
* 3-vector field: ``(H, W, 3)`` float64
* domain mask: ``(H, W)`` bool
"""

import numpy as np


def check_scalar_field(x, name="field", shape=None):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"{name} must be a 2-D array, got shape {x.shape}")
    _check_shape(x.shape[:2], shape, name)
    return x


def check_vector_field(x, ncomp, name="field", shape=None):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[2] != ncomp:
        raise ValueError(
            f"{name} must have shape (H, W, {ncomp}), got {x.shape}")
    _check_shape(x.shape[:2], shape, name)
    return x


def check_mask(mask, name="mask", shape=None, nonempty=False):
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError(f"{name} must be a 2-D array, got shape {mask.shape}")
    if mask.dtype != bool:
        mask = mask != 0
    _check_shape(mask.shape, shape, name)
    if nonempty and not mask.any():
        raise ValueError(f"{name} has no true pixels")
    return mask


def check_confidence(kappa, name="confidence", shape=None):
    kappa = check_scalar_field(kappa, name, shape)
    finite = np.isfinite(kappa)
    if np.any(kappa[finite] < 0) or np.any(kappa[finite] > 1):
        raise ValueError(f"{name} values must lie in [0, 1]")
    # non-finite confidence is treated as missing depth
    return np.where(finite, kappa, 0.0)


def check_fusion_inputs(depth, normals, confidence, mask):
    """Validate a depth/normal/confidence/mask quadruple.

    Returns the arrays converted to canonical dtypes. ``confidence`` may be
    None, in which case it defaults to 1 wherever ``depth`` is finite and
    positive.
    """
    depth = check_scalar_field(depth, "depth")
    shape = depth.shape
    normals = check_vector_field(normals, 3, "normals", shape)
    mask = check_mask(mask, "mask", shape, nonempty=True)
    if confidence is None:
        with np.errstate(invalid="ignore"):
            confidence = (np.isfinite(depth) & (depth > 0)).astype(np.float64)
    confidence = check_confidence(confidence, "confidence", shape)
    return depth, normals, confidence, mask


def _check_shape(actual, expected, name):
    if expected is not None and tuple(actual) != tuple(expected[:2]):
        raise ValueError(
            f"{name} has shape {tuple(actual)}, expected {tuple(expected[:2])}")
