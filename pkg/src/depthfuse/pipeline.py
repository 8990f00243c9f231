"""End-to-end depth/normal fusion methods.

``pg`` and ``ptgv`` are the perspective-aware methods: depth is moved to the
log domain, normals become log-depth gradients, an orthographic-form solver
fuses the two, and the result is exponentiated back to metric depth.
``ortho`` and ``naive`` are baselines: the former ignores perspective
altogether, the latter resamples the data onto an orthographic grid, fuses
there and resamples back.
"""

import enum

import numpy as np
from scipy import ndimage

from .camera import back_project
from .exceptions import DomainError
from .gradfield import (DEFAULT_MIN_COS, edge_gradients,
                        ortho_gradient_from_normals, persp_loggradient_from_normals)
from .solver_ls import LsParams, anchored_mask, fuse_ls
from .solver_tgv import TgvParams, fuse_tgv
from .validation import check_fusion_inputs, check_mask, check_scalar_field

_EXP_MAX = 700.0


class FusionMethod(str, enum.Enum):
    ORTHO = "ortho"
    NAIVE = "naive"
    PG = "pg"
    PTGV = "ptgv"

    @property
    def label(self):
        return {"ortho": "Ortho", "naive": "Naive", "pg": "PG", "ptgv": "PTGV"}[self.value]

    @property
    def needs_camera(self):
        return self is not FusionMethod.ORTHO


def log_transform(d, mask, kappa=None):
    """Natural log of depth on the mask.

    ``d`` must be positive wherever ``kappa > 0`` (everywhere on the mask if
    ``kappa`` is None). Other mask pixels get the mean log-depth of the
    weighted ones as a placeholder; they carry no weight in the fusion.
    """
    d = check_scalar_field(d, "depth")
    mask = check_mask(mask, shape=d.shape, nonempty=True)
    weighted = mask if kappa is None else mask & (np.asarray(kappa) > 0)
    with np.errstate(invalid="ignore"):
        bad = weighted & ~(np.isfinite(d) & (d > 0))
    if bad.any():
        v, u = np.argwhere(bad)[0]
        raise DomainError(
            f"log-depth needs positive depth; pixel (u={u}, v={v}) has {d[v, u]!r}")
    if not weighted.any():
        raise DomainError("no pixel with positive confidence")
    out = np.full(d.shape, np.nan)
    out[weighted] = np.log(d[weighted])
    out[mask & ~weighted] = out[weighted].mean()
    return out


def exp_transform(l, mask):
    l = check_scalar_field(l, "log-depth")
    mask = check_mask(mask, shape=l.shape)
    vals = l[mask]
    if np.any(~np.isfinite(vals)) or np.any(vals > _EXP_MAX):
        v, u = np.argwhere(mask & ~(np.nan_to_num(l, nan=np.inf) <= _EXP_MAX))[0]
        raise DomainError(f"cannot exponentiate log-depth {l[v, u]!r} at (u={u}, v={v})")
    out = np.full(l.shape, np.nan)
    out[mask] = np.exp(vals)
    return out


def _ls_params(params):
    if params is None:
        return LsParams()
    if isinstance(params, TgvParams):
        return params.ls_params()
    return params


def _tgv_params(params):
    if params is None:
        return TgvParams()
    if isinstance(params, LsParams):
        return TgvParams(alpha=params.alpha, beta=params.beta,
                         cg_tol=params.cg_tol, cg_max_iter=params.cg_max_iter)
    return params


def _fuse_anchored(solver, x_obs, g, kappa, mask, params):
    """Run ``solver`` on the anchored part of the mask, fill the rest.

    Pixels cut off from every depth observation (for example a gap blob at
    the silhouette whose grazing normals were rejected) have no determined
    value; they take the value of the nearest solved pixel.
    """
    keep = anchored_mask(g, kappa, mask, _ls_params(params))
    if not keep.any():
        raise DomainError("no pixel is connected to a depth observation")
    x, info = solver(x_obs, g, np.where(keep, kappa, 0.0), keep, params)
    dropped = mask & ~keep
    if dropped.any():
        x = _nearest_fill(np.nan_to_num(x), keep, mask)
        x[~mask] = np.nan
    info = dict(info, filled_pixels=int(dropped.sum()))
    return x, info


def _ls_solver(x_obs, g, kappa, mask, params):
    return fuse_ls(x_obs, g, kappa, mask, params=_ls_params(params), return_info=True)


def _tgv_solver(x_obs, g, kappa, mask, params):
    x, _, info = fuse_tgv(x_obs, g, kappa, mask, params=_tgv_params(params),
                          return_info=True)
    return x, info


def _perspective(solver, d_obs, n_obs, kappa, mask, camera, params, min_cos):
    d_obs, n_obs, kappa, mask = check_fusion_inputs(d_obs, n_obs, kappa, mask)
    l_obs = log_transform(d_obs, mask, kappa)
    g = persp_loggradient_from_normals(n_obs, mask, camera, min_cos)
    l_hat, info = _fuse_anchored(solver, l_obs, edge_gradients(g, mask),
                                 kappa, mask, params)
    return exp_transform(l_hat, mask), info


def fuse_pg(d_obs, n_obs, kappa, mask, camera, params=None, return_info=False,
            min_cos=DEFAULT_MIN_COS):
    """Perspective least-squares fusion in the log-depth domain."""
    d_hat, info = _perspective(_ls_solver, d_obs, n_obs, kappa, mask, camera,
                               params, min_cos)
    return (d_hat, info) if return_info else d_hat


def fuse_ptgv(d_obs, n_obs, kappa, mask, camera, params=None, return_info=False,
              min_cos=DEFAULT_MIN_COS):
    """Perspective TGV fusion in the log-depth domain."""
    d_hat, info = _perspective(_tgv_solver, d_obs, n_obs, kappa, mask, camera,
                               params, min_cos)
    return (d_hat, info) if return_info else d_hat


def _placeholder_fill(d_obs, kappa, mask):
    weighted = mask & (kappa > 0)
    if not weighted.any():
        raise DomainError("no pixel with positive confidence")
    return np.where(weighted, d_obs, np.where(mask, d_obs[weighted].mean(), np.nan))


def fuse_ortho_direct(d_obs, n_obs, kappa, mask, params=None, return_info=False,
                      min_cos=DEFAULT_MIN_COS):
    """Orthographic least-squares fusion applied directly to a perspective map.

    Uses ``-(n_x, n_y) / n_z`` as the per-pixel depth gradient, i.e. treats one
    pixel as one unit of lateral distance. A deliberately perspective-unaware
    baseline.
    """
    d_obs, n_obs, kappa, mask = check_fusion_inputs(d_obs, n_obs, kappa, mask)
    x_obs = _placeholder_fill(d_obs, kappa, mask)
    g = edge_gradients(ortho_gradient_from_normals(n_obs, mask, min_cos), mask)
    d_hat, info = _fuse_anchored(_ls_solver, x_obs, g, kappa, mask, params)
    return (d_hat, info) if return_info else d_hat


def _splat(gx, gy, values, weights, shape):
    """Bilinear splatting of (N, C) values at continuous grid positions.

    Returns the weighted value sums (H, W, C) and weight sums (H, W).
    """
    h, w = shape
    x0 = np.floor(gx).astype(np.int64)
    y0 = np.floor(gy).astype(np.int64)
    fx = gx - x0
    fy = gy - y0
    acc = np.zeros((h * w, values.shape[1]))
    wsum = np.zeros(h * w)
    for dx, dy, b in ((0, 0, (1 - fx) * (1 - fy)), (1, 0, fx * (1 - fy)),
                      (0, 1, (1 - fx) * fy), (1, 1, fx * fy)):
        xi, yi = x0 + dx, y0 + dy
        ok = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h) & (b > 0)
        flat = yi[ok] * w + xi[ok]
        bw = b[ok] * weights[ok]
        wsum += np.bincount(flat, bw, minlength=h * w)
        for c in range(values.shape[1]):
            acc[:, c] += np.bincount(flat, bw * values[ok, c], minlength=h * w)
    return acc.reshape(h, w, -1), wsum.reshape(h, w)


def _nearest_fill(values, known, region):
    """Copy each ``region`` pixel from its nearest ``known`` pixel."""
    if not known.any():
        raise DomainError("nothing to fill from")
    _, (iy, ix) = ndimage.distance_transform_edt(~known, return_indices=True)
    out = values.copy()
    fill = region & ~known
    out[fill] = values[iy[fill], ix[fill]]
    return out


def fuse_naive(d_obs, n_obs, kappa, mask, camera, params=None, return_info=False,
               min_cos=DEFAULT_MIN_COS):
    """Reproject to an orthographic grid, fuse orthographically, reproject back.

    1. Pixels with observed depth are back-projected to 3-D points; they
       carry their depth, confidence and normal.
    2. The points are splatted bilinearly onto a camera-aligned orthographic
       grid of the image size whose square pitch makes the cloud's bounding
       box fit. Splat weights are bilinear weights times confidence; depth and
       normals are weight-normalized, normals renormalized.
    3. Cells inside the object that received nothing (depth gaps, sampling
       holes) are filled from the nearest covered cell and get zero
       confidence.
    4. Orthographic least squares with per-cell gradients
       ``-pitch * (n_x, n_y) / n_z``.
    5. The fused grid is lifted to 3-D, projected into the camera, splatted
       onto the image grid, and image pixels left uncovered are filled from
       the nearest covered pixel.
    """
    d_obs, n_obs, kappa, mask = check_fusion_inputs(d_obs, n_obs, kappa, mask)
    p = _ls_params(params)
    observed = mask & (kappa > 0)
    if np.count_nonzero(observed) < 2:
        raise DomainError("naive fusion needs at least two observed depth pixels")
    h, w = mask.shape

    cloud = back_project(d_obs, observed, camera)
    pts = cloud.points
    uu, vv = cloud.pixels[:, 0], cloud.pixels[:, 1]
    kap = kappa[vv, uu]
    nrm = n_obs[vv, uu]

    lo = pts[:, :2].min(axis=0)
    hi = pts[:, :2].max(axis=0)
    extent = np.maximum(hi - lo, 1e-9)
    pitch = max(extent[0] / max(w - 1, 1), extent[1] / max(h - 1, 1))
    origin = 0.5 * (lo + hi) - pitch * np.array([(w - 1) / 2.0, (h - 1) / 2.0])
    gx = (pts[:, 0] - origin[0]) / pitch
    gy = (pts[:, 1] - origin[1]) / pitch

    vals = np.column_stack([pts[:, 2], kap, nrm])
    acc, wsum = _splat(gx, gy, vals, kap, (h, w))
    covered = wsum > 1e-9
    safe = np.where(covered, wsum, 1.0)[..., None]
    o_depth = np.where(covered, acc[..., 0] / safe[..., 0], 0.0)
    o_kappa = np.where(covered, acc[..., 1] / safe[..., 0], 0.0)
    o_normals = acc[..., 2:] / np.maximum(
        np.linalg.norm(acc[..., 2:], axis=-1, keepdims=True), 1e-300)

    o_mask = ndimage.binary_fill_holes(
        ndimage.binary_closing(covered, iterations=2) | covered)
    o_depth = _nearest_fill(o_depth, covered, o_mask)
    o_normals = np.stack([_nearest_fill(o_normals[..., c], covered, o_mask)
                          for c in range(3)], axis=-1)
    o_kappa = np.where(o_mask, np.clip(o_kappa, 0.0, 1.0), 0.0)

    g = edge_gradients(pitch * ortho_gradient_from_normals(o_normals, o_mask, min_cos),
                       o_mask)
    o_fused, info = _fuse_anchored(_ls_solver, o_depth, g, o_kappa, o_mask, p)

    iy, ix = np.nonzero(o_mask)
    Z = o_fused[iy, ix]
    X = origin[0] + ix * pitch
    Y = origin[1] + iy * pitch
    pu = camera.f * X / Z + camera.cu
    pv = camera.f * Y / Z + camera.cv
    zsum, zw = _splat(pu, pv, Z[:, None], np.ones(Z.size), (h, w))
    hit = mask & (zw > 1e-9)
    if not hit.any():
        raise DomainError("reprojected orthographic map misses the image mask")
    d_hat = np.where(hit, zsum[..., 0] / np.where(hit, zw, 1.0), 0.0)
    d_hat = _nearest_fill(d_hat, hit, mask)
    d_hat[~mask] = np.nan
    info = dict(info, pitch=float(pitch), ortho_pixels=int(o_mask.sum()),
                refilled_pixels=int(np.count_nonzero(mask & ~hit)))
    return (d_hat, info) if return_info else d_hat


def fuse(method, d_obs, n_obs, kappa, mask, camera=None, params=None,
         return_info=False, min_cos=DEFAULT_MIN_COS):
    """Run one of the four fusion methods by name."""
    method = FusionMethod(method)
    if method.needs_camera and camera is None:
        raise ValueError(f"method {method.value!r} requires camera intrinsics")
    if method is FusionMethod.ORTHO:
        return fuse_ortho_direct(d_obs, n_obs, kappa, mask, params, return_info,
                                 min_cos)
    func = {FusionMethod.NAIVE: fuse_naive, FusionMethod.PG: fuse_pg,
            FusionMethod.PTGV: fuse_ptgv}[method]
    return func(d_obs, n_obs, kappa, mask, camera, params, return_info, min_cos)
