"""Synthetic scenes with analytic ground truth and the sensor degradation protocol.

A degraded observation mimics a structured-light depth map fused with a
photometric-stereo normal map: half of the depth pixels are dropped at random,
blob-shaped gaps are cut with thresholded Perlin noise, Gaussian noise is
added to the surviving depths, and the normals are perturbed but kept dense.
"""

import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .camera import CameraIntrinsics
from .exceptions import DomainError
from .gradfield import edge_gradients, persp_loggradient_from_normals
from .grids import write_mask, write_pfm
from .validation import check_mask, check_scalar_field

logger = logging.getLogger(__name__)

SCENE_KINDS = ("sphere", "plane", "sinusoid")
DEFAULT_SCENES = SCENE_KINDS + ("sphere_far",)


@dataclass
class Scene:
    depth_gt: np.ndarray
    normals_gt: np.ndarray
    mask: np.ndarray
    camera: CameraIntrinsics
    name: str = "scene"

    def __post_init__(self):
        if not self.mask.any():
            raise DomainError(f"scene {self.name!r} has an empty mask")
        check_consistency(self.depth_gt, self.normals_gt, self.mask, self.camera)

    @property
    def shape(self):
        return self.mask.shape


def check_consistency(depth, normals, mask, camera, rel_tol=0.1):
    """Check that normals agree with the depth map to stencil accuracy.

    Compares the log-depth gradient implied by the normals with forward
    differences of ``ln depth`` and raises if the median discrepancy exceeds
    ``rel_tol`` times the median gradient magnitude (plus a small floor).
    Catches sign and orientation mistakes, not discretization error.
    """
    g = edge_gradients(persp_loggradient_from_normals(normals, mask, camera), mask)
    with np.errstate(invalid="ignore", divide="ignore"):
        logd = np.log(np.where(mask, depth, np.nan))
    fd = np.full(g.shape, np.nan)
    fd[:, :-1, 0] = logd[:, 1:] - logd[:, :-1]
    fd[:-1, :, 1] = logd[1:] - logd[:-1]
    ok = np.isfinite(g) & np.isfinite(fd)
    if not ok.any():
        return
    err = np.median(np.abs(g[ok] - fd[ok]))
    scale = np.median(np.abs(fd[ok]))
    if err > rel_tol * scale + 1e-9:
        raise DomainError(
            f"normals inconsistent with depth: median log-gradient error "
            f"{err:.3e} vs median magnitude {scale:.3e}")


def _sphere(camera, shape, center=(0.0, 0.0, 1000.0), radius=200.0):
    c = np.asarray(center, dtype=np.float64)
    if c[2] - radius <= 0:
        raise DomainError("sphere must lie entirely in front of the camera")
    r = camera.rays(shape)
    rc = r @ c
    rr = np.sum(r * r, axis=-1)
    disc = rc ** 2 - rr * (c @ c - radius ** 2)
    mask = disc > 0
    if not mask.any():
        raise DomainError("sphere projects outside the image")
    t = np.where(mask, (rc - np.sqrt(np.where(mask, disc, 0.0))) / rr, np.nan)
    depth = t
    points = r * t[..., None]
    # oriented along the viewing ray, i.e. pointing into the sphere
    normals = np.where(mask[..., None], (c - points) / radius, 0.0)
    return depth, normals, mask


def _plane(camera, shape, normal=(0.0, 0.0, 1.0), distance=1000.0):
    n = np.asarray(normal, dtype=np.float64)
    n = n / np.linalg.norm(n)
    if distance <= 0:
        raise DomainError("plane distance must be positive")
    r = camera.rays(shape)
    denom = r @ n
    mask = denom > 1e-9
    if not mask.any():
        raise DomainError("plane is not visible")
    depth = np.where(mask, distance / np.where(mask, denom, 1.0), np.nan)
    normals = np.where(mask[..., None], n, 0.0)
    return depth, normals, mask


def _sinusoid(camera, shape, base=1000.0, amplitude=10.0, period=None):
    h, w = shape
    if period is None:
        period = w / 2.0
    if base - abs(amplitude) <= 0:
        raise DomainError("sinusoid surface must stay in front of the camera")
    uu, vv = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    k = 2.0 * np.pi / period
    su, cu_ = np.sin(k * uu), np.cos(k * uu)
    sv, cv_ = np.sin(k * vv), np.cos(k * vv)
    d = base + amplitude * su * sv
    d_u = amplitude * k * cu_ * sv
    d_v = amplitude * k * su * cv_
    du, dv = camera.pixel_grid(shape)
    f = camera.f
    t_u = np.stack([(du * d_u + d) / f, dv * d_u / f, d_u], axis=-1)
    t_v = np.stack([du * d_v / f, (dv * d_v + d) / f, d_v], axis=-1)
    n = np.cross(t_u, t_v)
    n /= np.linalg.norm(n, axis=-1, keepdims=True)
    return d, n, np.ones(shape, dtype=bool)


_BUILDERS = {"sphere": _sphere, "plane": _plane, "sinusoid": _sinusoid}


def make_scene(kind, camera, width, height, **geometry):
    """Build an analytic scene.

    ``sphere`` takes ``center`` (mm, camera frame) and ``radius``; ``plane``
    takes a unit ``normal`` (oriented along the viewing direction) and its
    ``distance`` from the camera center; ``sinusoid`` takes ``base`` depth,
    ``amplitude`` and ``period`` (pixels) of ``base + A sin(ku) sin(kv)``.
    """
    if kind not in _BUILDERS:
        raise ValueError(f"unknown scene kind {kind!r}; choose from {SCENE_KINDS}")
    depth, normals, mask = _BUILDERS[kind](camera, (height, width), **geometry)
    depth = np.where(mask, depth, np.nan)
    return Scene(depth, normals, mask, camera, name=kind)


def default_scene(kind, size=256, f=None):
    """Desk-scale benchmark scenes on a ``size x size`` image.

    The sphere fills most of the frame at a short focal length so that
    perspective effects are strong. ``sphere_far`` is a small sphere 1.5 m
    away under a long lens, imaged at about 0.4 mm per pixel; this matches the
    pixel footprint and relative depth noise of a lab-scale photometric
    stereo rig.
    """
    if kind == "sphere_far":
        f = f if f is not None else 3750.0 * size / 256.0
        camera = CameraIntrinsics.centered(f, size, size)
        return make_scene("sphere", camera, size, size,
                          center=(0.0, 0.0, 1500.0), radius=32.0)
    f = f if f is not None else 1.2 * size
    camera = CameraIntrinsics.centered(f, size, size)
    if kind == "sphere":
        return make_scene("sphere", camera, size, size,
                          center=(0.0, 0.0, 600.0), radius=200.0)
    if kind == "plane":
        tilt = np.deg2rad(30.0)
        return make_scene("plane", camera, size, size,
                          normal=(np.sin(tilt), 0.0, np.cos(tilt)), distance=800.0)
    if kind == "sinusoid":
        return make_scene("sinusoid", camera, size, size,
                          base=800.0, amplitude=10.0, period=size / 2.0)
    raise ValueError(f"unknown scene kind {kind!r}; choose from {DEFAULT_SCENES}")


def _fade(t):
    return t * t * t * (t * (t * 6.0 - 15.0) + 10.0)


def perlin(width, height, scale, seed):
    """Single-octave 2-D Perlin gradient noise.

    The lattice period is ``scale`` pixels. Gradients are 256 unit directions
    assigned to lattice points through a seeded permutation table; corner
    contributions are blended with the quintic fade ``6t^5 - 15t^4 + 10t^3``.
    The result is exactly zero on lattice points and lies in [-1, 1].
    """
    if scale < 2:
        raise ValueError(f"Perlin scale must be at least 2 pixels, got {scale}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(256)
    angles = 2.0 * np.pi * np.arange(256) / 256.0
    grads = np.column_stack([np.cos(angles), np.sin(angles)])

    x = np.arange(width, dtype=np.float64) / scale
    y = np.arange(height, dtype=np.float64) / scale
    X, Y = np.meshgrid(x, y)
    xi = np.floor(X).astype(np.int64)
    yi = np.floor(Y).astype(np.int64)
    xf = X - xi
    yf = Y - yi

    def corner(dx, dy):
        h = perm[(perm[(xi + dx) & 255] + yi + dy) & 255]
        gvec = grads[h]
        return gvec[..., 0] * (xf - dx) + gvec[..., 1] * (yf - dy)

    su, sv = _fade(xf), _fade(yf)
    n00, n10 = corner(0, 0), corner(1, 0)
    n01, n11 = corner(0, 1), corner(1, 1)
    nx0 = n00 + su * (n10 - n00)
    nx1 = n01 + su * (n11 - n01)
    return nx0 + sv * (nx1 - nx0)


def calibrate_gap_threshold(noise, mask, target_fraction, tol=0.02, n_iter=60):
    """Threshold so that ``noise > threshold`` covers ``target_fraction`` of the mask.

    Bisection on the threshold; raises :class:`DomainError` if the closest
    achievable fraction is further than ``tol`` from the target.
    """
    noise = check_scalar_field(noise, "noise")
    mask = check_mask(mask, shape=noise.shape, nonempty=True)
    values = noise[mask]
    lo, hi = float(values.min()), float(values.max())
    if target_fraction <= 0:
        return hi + 1.0
    if target_fraction >= 1:
        return lo - 1.0

    def frac(t):
        return np.count_nonzero(values > t) / values.size

    lo -= 1.0
    for _ in range(n_iter):
        mid = 0.5 * (lo + hi)
        if frac(mid) > target_fraction:
            lo = mid
        else:
            hi = mid
    threshold = lo if abs(frac(lo) - target_fraction) < abs(frac(hi) - target_fraction) else hi
    achieved = frac(threshold)
    if abs(achieved - target_fraction) > tol:
        raise DomainError(
            f"cannot reach gap fraction {target_fraction:.3f}: best achievable "
            f"{achieved:.3f} (degenerate noise field?)")
    return threshold


@dataclass
class DegradationSpec:
    depth_sigma: float = 1.0
    normal_sigma: float = 0.1
    gap_fraction: float = 0.25
    discard_fraction: float = 0.5
    perlin_scale: float = None
    seed: int = 0

    def __post_init__(self):
        for name in ("gap_fraction", "discard_fraction"):
            value = getattr(self, name)
            if not 0 <= value <= 1:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")
        for name in ("depth_sigma", "normal_sigma"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be non-negative")

    def to_dict(self):
        return asdict(self)


def degrade(scene, spec, return_info=False):
    """Apply the degradation protocol to a scene.

    Returns ``(d_obs, kappa, n_obs)``. ``d_obs`` is NaN off the mask and 0 in
    depth gaps; ``kappa`` is 1 at surviving depth pixels and 0 elsewhere;
    ``n_obs`` is dense and unit length on the mask.
    """
    mask = scene.mask
    h, w = mask.shape
    idx = np.flatnonzero(mask)
    n = idx.size
    rng = np.random.default_rng(spec.seed)

    kappa = np.zeros(mask.shape)
    kappa[mask] = 1.0
    n_discard = int(round(spec.discard_fraction * n))
    discarded = rng.choice(n, size=n_discard, replace=False)
    kappa.ravel()[idx[discarded]] = 0.0

    scale = spec.perlin_scale if spec.perlin_scale is not None else max(2.0, w / 8.0)
    noise_seed = int(rng.integers(2 ** 63 - 1))
    noise = perlin(w, h, scale, noise_seed)
    threshold = calibrate_gap_threshold(noise, mask, spec.gap_fraction)
    gaps = mask & (noise > threshold)
    kappa[gaps] = 0.0

    depth_noise = rng.standard_normal(n)
    d_obs = np.full(mask.shape, np.nan)
    d_obs.ravel()[idx] = scene.depth_gt.ravel()[idx] + spec.depth_sigma * depth_noise
    d_obs[mask & (kappa == 0)] = 0.0

    normal_noise = rng.standard_normal((n, 3))
    n_obs = np.zeros((h, w, 3))
    nv = scene.normals_gt.reshape(-1, 3)[idx]
    if spec.normal_sigma > 0:
        nv = nv + spec.normal_sigma * normal_noise
        nv /= np.linalg.norm(nv, axis=1, keepdims=True)
    n_obs.reshape(-1, 3)[idx] = nv

    if return_info:
        info = {
            "gap_threshold": float(threshold),
            "perlin_scale": float(scale),
            "gap_fraction": float(np.count_nonzero(gaps) / n),
            "discard_fraction": float(n_discard / n),
            "valid_fraction": float(np.count_nonzero(kappa[mask] > 0) / n),
        }
        return d_obs, kappa, n_obs, info
    return d_obs, kappa, n_obs


def save_scene(outdir, scene, d_obs=None, kappa=None, n_obs=None):
    """Write a scene (and optionally its degraded observation) as PFM + JSON."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    write_pfm(scene.depth_gt, out / "depth_gt.pfm")
    write_pfm(scene.normals_gt, out / "normals_gt.pfm")
    write_mask(scene.mask, out / "mask.pfm")
    scene.camera.to_json(out / "camera.json")
    if d_obs is not None:
        write_pfm(d_obs, out / "d_obs.pfm")
        write_pfm(kappa, out / "kappa.pfm")
        write_pfm(n_obs, out / "n_obs.pfm")
