"""Pinhole camera model with a single focal length and no distortion."""

import json
from dataclasses import asdict, dataclass

import numpy as np

from .exceptions import DomainError
from .validation import check_mask, check_scalar_field


@dataclass(frozen=True)
class CameraIntrinsics:
    """Focal length ``f`` and principal point ``(cu, cv)``, all in pixels."""

    f: float
    cu: float
    cv: float

    def __post_init__(self):
        for name in ("f", "cu", "cv"):
            value = float(getattr(self, name))
            if not np.isfinite(value):
                raise ValueError(f"camera parameter {name} must be finite")
            object.__setattr__(self, name, value)
        if self.f <= 0:
            raise ValueError(f"focal length must be positive, got {self.f}")

    @classmethod
    def centered(cls, f, width, height):
        """Camera with the principal point at the image center."""
        return cls(f, (width - 1) / 2.0, (height - 1) / 2.0)

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(d["f"], d["cu"], d["cv"])
        except KeyError as exc:
            raise ValueError(f"camera description lacks key {exc}") from None

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self):
        return asdict(self)

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    def pixel_grid(self, shape):
        """Centered pixel coordinates ``(u - cu, v - cv)`` for an image shape."""
        height, width = shape[:2]
        uu, vv = np.meshgrid(np.arange(width, dtype=np.float64),
                             np.arange(height, dtype=np.float64))
        return uu - self.cu, vv - self.cv

    def rays(self, shape):
        """Unnormalized viewing rays ``((u-cu)/f, (v-cv)/f, 1)``, shape (H, W, 3)."""
        du, dv = self.pixel_grid(shape)
        return np.stack([du / self.f, dv / self.f, np.ones_like(du)], axis=-1)


@dataclass
class PointCloud:
    """Camera-frame points (N, 3) in mm and their source pixels (N, 2) as (u, v)."""

    points: np.ndarray
    pixels: np.ndarray

    def __len__(self):
        return len(self.points)


def _check_positive_depth(depth, mask):
    with np.errstate(invalid="ignore"):
        bad = mask & ~(depth > 0)
    if bad.any():
        v, u = np.argwhere(bad)[0]
        raise DomainError(
            f"depth must be positive on the mask; pixel (u={u}, v={v}) "
            f"has {depth[v, u]!r}")


def back_project(depth, mask, camera):
    """Lift every masked pixel to a 3-D point in camera coordinates."""
    depth = check_scalar_field(depth, "depth")
    mask = check_mask(mask, shape=depth.shape)
    _check_positive_depth(depth, mask)
    vv, uu = np.nonzero(mask)
    d = depth[vv, uu]
    points = np.column_stack([d * (uu - camera.cu) / camera.f,
                              d * (vv - camera.cv) / camera.f,
                              d])
    return PointCloud(points, np.column_stack([uu, vv]))


def back_project_grid(depth, camera):
    """Per-pixel 3-D points, shape (H, W, 3); NaN wherever depth is NaN."""
    depth = check_scalar_field(depth, "depth")
    return camera.rays(depth.shape) * depth[..., None]


def project(points, camera):
    """Perspective projection of (N, 3) camera-frame points to (N, 2) pixels."""
    points = np.asarray(points, dtype=np.float64)
    z = points[:, 2]
    return np.column_stack([camera.f * points[:, 0] / z + camera.cu,
                            camera.f * points[:, 1] / z + camera.cv])


def _tangent(points, mask, axis):
    """Forward difference of ``points`` along ``axis``, backward as fallback."""
    fwd = np.full(points.shape, np.nan)
    ok_fwd = np.zeros(mask.shape, dtype=bool)
    ok_bwd = np.zeros(mask.shape, dtype=bool)
    if axis == 1:
        diff = points[:, 1:] - points[:, :-1]
        pair = mask[:, 1:] & mask[:, :-1]
        ok_fwd[:, :-1] = pair
        ok_bwd[:, 1:] = pair
        fwd[:, :-1] = diff
        bwd = np.full(points.shape, np.nan)
        bwd[:, 1:] = diff
    else:
        diff = points[1:] - points[:-1]
        pair = mask[1:] & mask[:-1]
        ok_fwd[:-1] = pair
        ok_bwd[1:] = pair
        fwd[:-1] = diff
        bwd = np.full(points.shape, np.nan)
        bwd[1:] = diff
    ok_bwd &= ~ok_fwd
    t = np.where(ok_fwd[..., None], fwd, np.where(ok_bwd[..., None], bwd, 0.0))
    return t, ok_fwd | ok_bwd


def normals_from_depth(depth, mask, camera):
    """Unit normals of the surface seen in a perspective depth map.

    Tangents are finite differences of the back-projected points along ``u``
    and ``v`` (forward where the forward neighbor is in the mask, backward
    otherwise). For a depth map of a plane these tangents lie exactly in the
    plane. The normal is their cross product, which points along the viewing
    ray (``n_z > 0`` for surfaces facing the camera).

    Returns ``(normals, valid)``; ``normals`` is zero where ``valid`` is false.
    """
    depth = check_scalar_field(depth, "depth")
    mask = check_mask(mask, shape=depth.shape)
    _check_positive_depth(depth, mask)
    points = back_project_grid(np.where(mask, depth, np.nan), camera)
    tu, ok_u = _tangent(points, mask, axis=1)
    tv, ok_v = _tangent(points, mask, axis=0)
    n = np.cross(tu, tv)
    norm = np.linalg.norm(n, axis=2)
    valid = mask & ok_u & ok_v & (norm > 0) & np.isfinite(norm)
    out = np.zeros_like(n)
    out[valid] = n[valid] / norm[valid][:, None]
    return out, valid
