"""Field grids: PFM file I/O, domain masks and normal-map orientation.

PFM stores rows bottom-up; everything in memory is top-down with the origin
at the top-left pixel. The conversion happens here and nowhere else.
"""

import logging
import warnings

import numpy as np

from .exceptions import PFMError
from .validation import check_mask, check_scalar_field, check_vector_field

logger = logging.getLogger(__name__)

_MAGIC_CHANNELS = {b"Pf": 1, b"PF": 3}
_WHITESPACE = b" \t\r\n"


def _next_token(buf, pos):
    while pos < len(buf) and buf[pos] in _WHITESPACE:
        pos += 1
    start = pos
    while pos < len(buf) and buf[pos] not in _WHITESPACE:
        pos += 1
    if start == pos:
        raise PFMError("unexpected end of header", start)
    return buf[start:pos], start, pos


def parse_pfm(buf):
    """Decode PFM bytes into a top-down float64 array.

    Returns an ``(H, W)`` array for ``Pf`` data and ``(H, W, 3)`` for ``PF``.
    """
    magic, offset, pos = _next_token(buf, 0)
    if magic not in _MAGIC_CHANNELS:
        raise PFMError(f"bad PFM magic {magic!r}", offset)
    channels = _MAGIC_CHANNELS[magic]

    dims = []
    for label in ("width", "height"):
        tok, offset, pos = _next_token(buf, pos)
        try:
            value = int(tok)
        except ValueError:
            raise PFMError(f"invalid {label} {tok!r}", offset) from None
        if value <= 0:
            raise PFMError(f"non-positive {label} {value}", offset)
        dims.append(value)
    width, height = dims

    tok, offset, pos = _next_token(buf, pos)
    try:
        scale = float(tok)
    except ValueError:
        raise PFMError(f"invalid scale {tok!r}", offset) from None
    if not np.isfinite(scale) or scale == 0:
        raise PFMError(f"non-finite or zero scale {tok!r}", offset)
    # exactly one whitespace byte separates the header from the payload
    if pos >= len(buf) or buf[pos] not in _WHITESPACE:
        raise PFMError("missing whitespace after scale", pos)
    pos += 1

    nbytes = width * height * channels * 4
    if len(buf) - pos < nbytes:
        raise PFMError(
            f"truncated payload: expected {nbytes} bytes, found {len(buf) - pos}",
            len(buf))
    dtype = np.dtype("<f4") if scale < 0 else np.dtype(">f4")
    data = np.frombuffer(buf, dtype=dtype, count=width * height * channels,
                         offset=pos)
    shape = (height, width) if channels == 1 else (height, width, 3)
    return np.flipud(data.reshape(shape)).astype(np.float64)


def format_pfm(field):
    """Encode a scalar ``(H, W)`` or 3-vector ``(H, W, 3)`` field as PFM bytes.

    Output is little-endian with scale ``-1.0``.
    """
    field = np.asarray(field, dtype=np.float64)
    if field.ndim == 2:
        magic = b"Pf"
    elif field.ndim == 3 and field.shape[2] == 3:
        magic = b"PF"
    else:
        raise ValueError(f"cannot write field of shape {field.shape} as PFM")
    height, width = field.shape[:2]
    header = b"%s\n%d %d\n-1.0\n" % (magic, width, height)
    payload = np.ascontiguousarray(np.flipud(field), dtype="<f4").tobytes()
    return header + payload


def read_pfm(path):
    """Read a PFM file as a float64 array (``(H, W)`` or ``(H, W, 3)``)."""
    with open(path, "rb") as fh:
        buf = fh.read()
    try:
        return parse_pfm(buf)
    except PFMError as exc:
        raise PFMError(f"{path}: {exc}") from None


def write_pfm(field, path):
    with open(path, "wb") as fh:
        fh.write(format_pfm(field))


def read_mask(path):
    """Read a mask stored as a 1-channel PFM of {0.0, 1.0}."""
    data = read_pfm(path)
    if data.ndim != 2:
        raise PFMError(f"{path}: mask must be a 1-channel PFM")
    return np.nan_to_num(data) > 0.5


def write_mask(mask, path):
    write_pfm(check_mask(mask).astype(np.float64), path)


def mask_from_normals(normals, tol=1e-6):
    """Pixels whose normal has unit length within ``tol``.

    Background pixels are encoded as ``(0, 0, 0)`` and come out false.
    """
    normals = check_vector_field(normals, 3, "normals")
    with np.errstate(invalid="ignore"):
        norm = np.linalg.norm(normals, axis=2)
        return np.abs(norm - 1.0) <= tol


def orient_normals(normals, mask):
    """Flip the whole normal map if most masked normals have ``n_z < 0``.

    The fusion code assumes normals oriented like the cross product of the
    surface tangents, i.e. ``n_z > 0`` for surfaces facing the camera.
    """
    normals = check_vector_field(normals, 3, "normals")
    mask = check_mask(mask, shape=normals.shape)
    nz = normals[..., 2][mask]
    if nz.size and np.count_nonzero(nz < 0) > nz.size / 2:
        warnings.warn("normal map has majority n_z < 0; flipping orientation",
                      stacklevel=2)
        return -normals
    return normals


def load_depth(path):
    return check_scalar_field(read_pfm(path), "depth")


def load_normals(path, mask=None):
    """Read a normal map, derive its mask if needed and fix its orientation.

    Returns ``(normals, mask)``.
    """
    normals = read_pfm(path)
    if normals.ndim != 3:
        raise PFMError(f"{path}: normal map must be a 3-channel PFM")
    if mask is None:
        mask = mask_from_normals(normals)
    normals = orient_normals(normals, mask)
    return normals, mask
