"""Normal-to-gradient conversions and the masked forward-difference operator.

Invalid gradient entries are encoded as NaN. Solvers drop every NaN entry
from the gradient-consistency term instead of clamping it.
"""

import numpy as np
from scipy import sparse

from .validation import check_mask, check_scalar_field, check_vector_field


class DifferenceOperator:
    """Forward differences restricted to a domain mask.

    The ``u`` difference at pixel ``(u, v)`` is ``x[v, u+1] - x[v, u]`` and is
    valid only when both pixels are in the mask (and, optionally, in the extra
    ``valid_u`` set). Invalid directions yield 0, so ``D^T D`` is the graph
    Laplacian of the valid edges.
    """

    def __init__(self, mask, valid_u=None, valid_v=None):
        self.mask = check_mask(mask)
        m = self.mask
        vu = np.zeros_like(m)
        vv = np.zeros_like(m)
        vu[:, :-1] = m[:, :-1] & m[:, 1:]
        vv[:-1, :] = m[:-1, :] & m[1:, :]
        if valid_u is not None:
            vu &= check_mask(valid_u, "valid_u", m.shape)
        if valid_v is not None:
            vv &= check_mask(valid_v, "valid_v", m.shape)
        self.valid_u = vu
        self.valid_v = vv
        self.valid = np.stack([vu, vv], axis=-1)

    @property
    def shape(self):
        return self.mask.shape

    @property
    def n_edges(self):
        return int(self.valid.sum())

    def restrict(self, g):
        """Operator with the edges where ``g`` is NaN removed."""
        g = check_vector_field(g, 2, "g", self.shape)
        ok = np.isfinite(g)
        return DifferenceOperator(self.mask, ok[..., 0], ok[..., 1])

    def apply(self, x):
        """Gradient of a scalar field, shape (H, W, 2)."""
        x = check_scalar_field(x, "x", self.shape)
        out = np.zeros(x.shape + (2,))
        out[:, :-1, 0] = np.where(self.valid_u[:, :-1], x[:, 1:] - x[:, :-1], 0.0)
        out[:-1, :, 1] = np.where(self.valid_v[:-1, :], x[1:, :] - x[:-1, :], 0.0)
        return out

    def apply_adjoint(self, q):
        """Exact adjoint of :meth:`apply` (a negative divergence)."""
        q = check_vector_field(q, 2, "q", self.shape)
        qu = np.where(self.valid_u, q[..., 0], 0.0)
        qv = np.where(self.valid_v, q[..., 1], 0.0)
        out = np.zeros(self.shape)
        out[:, :-1] -= qu[:, :-1]
        out[:, 1:] += qu[:, :-1]
        out[:-1, :] -= qv[:-1, :]
        out[1:, :] += qv[:-1, :]
        return out

    def matrix(self):
        """Sparse matrix of :meth:`apply` acting on ``x.ravel()``.

        Row ``2 * k + c`` holds component ``c`` at flat pixel ``k``, matching
        ``apply(x).ravel()``.
        """
        h, w = self.shape
        idx = np.arange(h * w).reshape(h, w)
        rows, cols, vals = [], [], []
        for c, (valid, step) in enumerate(((self.valid_u, 1), (self.valid_v, w))):
            k = idx[valid]
            r = 2 * k + c
            rows += [r, r]
            cols += [k, k + step]
            vals += [-np.ones(k.size), np.ones(k.size)]
        return sparse.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(2 * h * w, h * w))


DEFAULT_MIN_COS = 0.05


def ortho_gradient_from_normals(normals, mask, min_cos=DEFAULT_MIN_COS):
    """Depth gradient under orthographic projection, ``-(n_x, n_y) / n_z``.

    Pixels outside the mask, or whose normal makes an angle with the viewing
    direction ``+z`` whose cosine is below ``min_cos`` (grazing or
    back-facing), are NaN.
    """
    normals = check_vector_field(normals, 3, "normals")
    mask = check_mask(mask, shape=normals.shape)
    nz = np.nan_to_num(normals[..., 2])
    norm = np.linalg.norm(np.nan_to_num(normals), axis=2)
    ok = mask & (nz > 0) & (nz >= min_cos * norm)
    g = np.full(mask.shape + (2,), np.nan)
    g[ok] = -normals[ok][:, :2] / nz[ok][:, None]
    return g


def persp_loggradient_from_normals(normals, mask, camera, min_cos=DEFAULT_MIN_COS):
    """Gradient of log-depth implied by normals under perspective projection.

    ``-(n_x, n_y) / ((u - cu) n_x + (v - cv) n_y + f n_z)`` per pixel. The
    denominator equals ``f |r| cos(angle between n and the viewing ray r)``
    for a unit normal; pixels where that cosine is below ``min_cos`` (the ray
    grazes the surface, or the normal faces away) are NaN, as are pixels
    outside the mask.
    """
    normals = check_vector_field(normals, 3, "normals")
    mask = check_mask(mask, shape=normals.shape)
    du, dv = camera.pixel_grid(mask.shape)
    n = np.nan_to_num(normals)
    denom = du * n[..., 0] + dv * n[..., 1] + camera.f * n[..., 2]
    scale = np.sqrt(du ** 2 + dv ** 2 + camera.f ** 2) * np.linalg.norm(n, axis=2)
    ok = mask & (denom > 0) & (denom >= min_cos * scale)
    g = np.full(mask.shape + (2,), np.nan)
    g[ok] = -normals[ok][:, :2] / denom[ok][:, None]
    return g


def edge_gradients(g, mask):
    """Pair per-pixel gradients with the forward-difference edges.

    The target for the edge from ``p`` to its forward neighbor is the mean of
    the gradient at both ends, which matches the difference quotient to second
    order. Edges with an endpoint outside the mask or a NaN endpoint are NaN.
    """
    g = check_vector_field(g, 2, "g")
    mask = check_mask(mask, shape=g.shape)
    out = np.full(g.shape, np.nan)
    with np.errstate(invalid="ignore"):
        out[:, :-1, 0] = 0.5 * (g[:, :-1, 0] + g[:, 1:, 0])
        out[:-1, :, 1] = 0.5 * (g[:-1, :, 1] + g[1:, :, 1])
    D = DifferenceOperator(mask)
    out[~D.valid] = np.nan
    return out
