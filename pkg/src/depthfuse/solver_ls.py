"""Confidence-weighted least-squares fusion of a scalar field with gradients.

Minimizes::

    alpha * sum kappa (x - x_obs)^2 + beta * sum ||D x - g||^2

over the masked pixels by solving the normal equations
``(alpha K + beta D^T D) x = alpha K x_obs + beta D^T g`` with Jacobi
preconditioned conjugate gradients. The same engine serves depth (orthographic)
and log-depth (perspective) fusion.
"""

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components

from .exceptions import DomainError, SolverError
from .gradfield import DifferenceOperator
from .validation import (check_confidence, check_mask, check_scalar_field,
                         check_vector_field)

DENSE_ORACLE_MAX_PIXELS = 4096


@dataclass
class LsParams:
    alpha: float = 1.0
    beta: float = 1.0
    cg_tol: float = 1e-9
    cg_max_iter: int = 10000

    def __post_init__(self):
        if not (self.alpha >= 0 and self.beta >= 0):
            raise ValueError("alpha and beta must be non-negative")
        if self.alpha + self.beta <= 0:
            raise ValueError("alpha + beta must be positive")
        if not self.cg_tol > 0:
            raise ValueError("cg_tol must be positive")
        if int(self.cg_max_iter) < 1:
            raise ValueError("cg_max_iter must be at least 1")


def _prepare(x_obs, g_obs, kappa, mask, D):
    x_obs = check_scalar_field(x_obs, "x_obs")
    shape = x_obs.shape
    g_obs = check_vector_field(g_obs, 2, "g_obs", shape)
    kappa = check_confidence(kappa, "kappa", shape)
    mask = check_mask(mask, shape=shape, nonempty=True)
    if D is None:
        D = DifferenceOperator(mask)
    elif D.shape != shape or not np.array_equal(D.mask, mask):
        raise ValueError("difference operator was built for a different mask")
    kappa = np.where(mask, kappa, 0.0)
    bad = (kappa > 0) & ~np.isfinite(x_obs)
    if bad.any():
        v, u = np.argwhere(bad)[0]
        raise DomainError(f"x_obs is not finite at weighted pixel (u={u}, v={v})")
    # gaps carry no weight; zero-fill keeps arithmetic finite
    x_obs = np.where(kappa > 0, x_obs, np.where(np.isfinite(x_obs), x_obs, 0.0))
    D = D.restrict(g_obs)
    g_obs = np.where(D.valid, g_obs, 0.0)
    return x_obs, g_obs, kappa, mask, D


def _components(D, kappa, mask, alpha, beta):
    idx = np.flatnonzero(mask)
    if beta > 0:
        Dm = D.matrix()[:, idx]
        adj = (Dm.T @ Dm).tocsr()
    else:
        adj = sparse.identity(idx.size, format="csr")
    n_comp, labels = connected_components(adj, directed=False)
    anchor = np.zeros(n_comp)
    np.add.at(anchor, labels, alpha * kappa.ravel()[idx])
    return idx, labels, anchor


def _check_components(D, kappa, mask, alpha, beta):
    """Raise if some connected piece of the problem has no data anchor."""
    idx, labels, anchor = _components(D, kappa, mask, alpha, beta)
    orphan = np.flatnonzero(anchor <= 0)
    if orphan.size:
        comp = orphan[0]
        members = idx[labels == comp]
        v, u = np.unravel_index(members[0], mask.shape)
        raise SolverError(
            f"singular system: component {comp} ({members.size} pixels, "
            f"containing pixel (u={u}, v={v})) has no pixel with alpha*kappa > 0")


def anchored_mask(g_obs, kappa, mask, params=None):
    """Mask pixels whose connected component contains a data anchor.

    Connectivity follows the edges that survive in the gradient term. The
    remaining pixels make the least-squares system singular; callers drop
    them from the solve and fill them afterwards.
    """
    p = params if params is not None else LsParams()
    mask = check_mask(mask, nonempty=True)
    kappa = np.where(mask, check_confidence(kappa, "kappa", mask.shape), 0.0)
    D = DifferenceOperator(mask).restrict(g_obs)
    idx, labels, anchor = _components(D, kappa, mask, p.alpha, p.beta)
    keep = np.zeros(mask.size, dtype=bool)
    keep[idx[anchor[labels] > 0]] = True
    return keep.reshape(mask.shape)


def _assemble(x_obs, g_obs, kappa, mask, D, alpha, beta):
    idx = np.flatnonzero(mask)
    Dm = D.matrix()[:, idx]
    k = kappa.ravel()[idx]
    A = (alpha * sparse.diags(k) + beta * (Dm.T @ Dm)).tocsr()
    b = alpha * k * x_obs.ravel()[idx] + beta * (Dm.T @ g_obs.ravel())
    return A, b, idx


def conjugate_gradient(A, b, x0, tol=1e-9, max_iter=10000):
    """Jacobi-preconditioned CG for a symmetric positive definite ``A``.

    Stops when ``||b - A x|| <= tol * ||b||``. Returns
    ``(x, n_iter, relative_residual)``.
    """
    x = np.array(x0, dtype=np.float64)
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return np.zeros_like(x), 0, 0.0
    inv_diag = 1.0 / A.diagonal()
    r = b - A @ x
    z = inv_diag * r
    p = z.copy()
    rz = r @ z
    rel = np.linalg.norm(r) / bnorm
    it = 0
    while rel > tol and it < max_iter:
        Ap = A @ p
        step = rz / (p @ Ap)
        x += step * p
        r -= step * Ap
        z = inv_diag * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
        it += 1
        rel = np.linalg.norm(r) / bnorm
    return x, it, rel


def fuse_ls(x_obs, g_obs, kappa, mask, D=None, params=None, return_info=False):
    """Fuse a scalar field with a target gradient field by least squares.

    Parameters
    ----------
    x_obs : (H, W) array
        Observed values; ignored where ``kappa == 0``.
    g_obs : (H, W, 2) array
        Target forward differences. NaN entries are left out of the gradient
        term.
    kappa : (H, W) array
        Confidence in [0, 1].
    mask : (H, W) bool array
        Pixels that take part in the optimization.
    D : DifferenceOperator, optional
        Defaults to ``DifferenceOperator(mask)``.
    params : LsParams, optional
    return_info : bool
        Also return a dict with ``n_iter`` and ``residual``.

    Returns
    -------
    x : (H, W) array, NaN outside the mask.
    """
    p = params if params is not None else LsParams()
    x_obs, g_obs, kappa, mask, D = _prepare(x_obs, g_obs, kappa, mask, D)
    _check_components(D, kappa, mask, p.alpha, p.beta)
    A, b, idx = _assemble(x_obs, g_obs, kappa, mask, D, p.alpha, p.beta)
    x0 = x_obs.ravel()[idx]
    sol, n_iter, rel = conjugate_gradient(A, b, x0, p.cg_tol, p.cg_max_iter)
    if not np.all(np.isfinite(sol)):
        raise SolverError("conjugate gradients produced non-finite values")
    if rel > p.cg_tol:
        raise SolverError(
            f"conjugate gradients did not converge in {n_iter} iterations "
            f"(relative residual {rel:.3e} > {p.cg_tol:.1e})")
    x = np.full(mask.shape, np.nan)
    x.ravel()[idx] = sol
    if return_info:
        return x, {"n_iter": n_iter, "residual": float(rel)}
    return x


def dense_oracle_ls(x_obs, g_obs, kappa, mask, D=None, params=None):
    """Direct dense solve of the same problem; a test oracle for small grids.

    The normal-equations matrix is assembled entry by entry from the pixel
    and edge lists, independently of the sparse path used by :func:`fuse_ls`.
    """
    p = params if params is not None else LsParams()
    x_obs, g_obs, kappa, mask, D = _prepare(x_obs, g_obs, kappa, mask, D)
    n = int(mask.sum())
    if n > DENSE_ORACLE_MAX_PIXELS:
        raise ValueError(
            f"dense oracle limited to {DENSE_ORACLE_MAX_PIXELS} pixels, got {n}")
    h, w = mask.shape
    index = -np.ones((h, w), dtype=int)
    index[mask] = np.arange(n)
    A = np.zeros((n, n))
    b = np.zeros(n)
    for v in range(h):
        for u in range(w):
            if not mask[v, u]:
                continue
            i = index[v, u]
            A[i, i] += p.alpha * kappa[v, u]
            b[i] += p.alpha * kappa[v, u] * x_obs[v, u]
            for c, (dv, du) in enumerate(((0, 1), (1, 0))):
                if not D.valid[v, u, c]:
                    continue
                j = index[v + dv, u + du]
                g = g_obs[v, u, c]
                # beta * (x_j - x_i - g)^2
                A[i, i] += p.beta
                A[j, j] += p.beta
                A[i, j] -= p.beta
                A[j, i] -= p.beta
                b[i] -= p.beta * g
                b[j] += p.beta * g
    try:
        sol = np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"dense oracle: singular system ({exc})") from None
    x = np.full(mask.shape, np.nan)
    x[mask] = sol
    return x


def objective_ls(x, x_obs, g_obs, kappa, mask, D=None, params=None):
    """Value of the least-squares fusion objective at ``x``."""
    p = params if params is not None else LsParams()
    x_obs, g_obs, kappa, mask, D = _prepare(x_obs, g_obs, kappa, mask, D)
    x = np.where(mask, check_scalar_field(x, "x", mask.shape), 0.0)
    data = np.sum(kappa * (x - x_obs) ** 2)
    grad = np.sum((D.apply(x) - g_obs)[D.valid] ** 2)
    return p.alpha * data + p.beta * grad
