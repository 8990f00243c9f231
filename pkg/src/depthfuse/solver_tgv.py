"""Second-order total generalized variation (TGV) fusion.

Minimizes over a scalar field ``x`` and an auxiliary gradient field ``q``::

    alpha  * sum kappa (x - x_obs)^2
  + lambda0 * sum ||grad q||        (per-pixel Frobenius norm of the 2x2 Jacobian)
  + lambda1 * sum ||grad x - q||    (per-pixel Euclidean norm)
  + beta   * sum ||q - g_obs||^2

with the first-order primal-dual method of Chambolle and Pock. The two
non-smooth sums are dualized; the two quadratic terms enter through their
closed-form proximal maps.
"""

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.exceptions import ConvergenceWarning

from .exceptions import SolverError
from .gradfield import DifferenceOperator
from .solver_ls import LsParams, _prepare, fuse_ls

logger = logging.getLogger(__name__)

_OBJECTIVE_EVERY = 50


@dataclass
class TgvParams:
    alpha: float = 1.0
    beta: float = 1.0
    lambda0: float = 1e-3
    lambda1: float = 1e-3
    max_iter: int = 2000
    rel_change_tol: float = 1e-8
    cg_tol: float = 1e-9
    cg_max_iter: int = 10000

    def __post_init__(self):
        LsParams(self.alpha, self.beta, self.cg_tol, self.cg_max_iter)
        for name in ("lambda0", "lambda1"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value >= 0):
                raise ValueError(f"{name} must be finite and non-negative")
        if int(self.max_iter) < 0:
            raise ValueError("max_iter must be non-negative")

    def ls_params(self):
        return LsParams(self.alpha, self.beta, self.cg_tol, self.cg_max_iter)


class _Stencil:
    """Forward differences with per-edge validity, on arrays of shape (H, W, ...)."""

    def __init__(self, D):
        self.fu = D.valid_u.astype(np.float64)
        self.fv = D.valid_v.astype(np.float64)
        self.valid = D.valid.astype(np.float64)

    def _weights(self, ndim):
        extra = (1,) * (ndim - 2)
        return self.fu.reshape(self.fu.shape + extra), self.fv.reshape(self.fv.shape + extra)

    def grad(self, a):
        fu, fv = self._weights(a.ndim)
        out = np.zeros(a.shape + (2,))
        out[:, :-1, ..., 0] = (a[:, 1:] - a[:, :-1]) * fu[:, :-1]
        out[:-1, :, ..., 1] = (a[1:] - a[:-1]) * fv[:-1]
        return out

    def grad_adjoint(self, y):
        yu = y[..., 0]
        yv = y[..., 1]
        fu, fv = self._weights(yu.ndim)
        yu = yu[:, :-1] * fu[:, :-1]
        yv = yv[:-1] * fv[:-1]
        out = np.zeros(y.shape[:-1])
        out[:, :-1] -= yu
        out[:, 1:] += yu
        out[:-1] -= yv
        out[1:] += yv
        return out

    def forward(self, x, q):
        """The stacked operator ``(grad x - q, grad q)``."""
        return self.grad(x) - self.valid * q, self.grad(q)

    def adjoint(self, y1, y2):
        return (self.grad_adjoint(y1),
                -self.valid * y1 + self.grad_adjoint(y2))


def _power_iteration(apply_normal, init, n_iter):
    vec = init
    norm = np.sqrt(sum(np.sum(v * v) for v in vec))
    if norm == 0:
        return 0.0
    vec = tuple(v / norm for v in vec)
    est = 0.0
    for _ in range(n_iter):
        out = apply_normal(vec)
        norm = np.sqrt(sum(np.sum(v * v) for v in out))
        if norm == 0:
            return 0.0
        est = norm
        vec = tuple(v / norm for v in out)
    return float(np.sqrt(est))


def estimate_operator_norm(D, n_iter=50, stacked=False, seed=0):
    """Power-iteration estimate of an operator norm, inflated by 1%.

    With ``stacked=False`` this is the norm of the forward-difference
    gradient ``D``; with ``stacked=True`` it is the norm of the TGV operator
    ``(x, q) -> (D x - q, D q)`` that sets the primal-dual step sizes.
    """
    st = _Stencil(D)
    rng = np.random.default_rng(seed)
    shape = D.shape
    if stacked:
        def normal(vec):
            return st.adjoint(*st.forward(*vec))
        init = (rng.standard_normal(shape), rng.standard_normal(shape + (2,)))
    else:
        def normal(vec):
            return (st.grad_adjoint(st.grad(vec[0])),)
        init = (rng.standard_normal(shape),)
    return 1.01 * _power_iteration(normal, init, n_iter)


def tgv_objective(x, q, x_obs, g_obs, kappa, mask, D=None, params=None):
    """Value of the TGV fusion objective at ``(x, q)``."""
    p = params if params is not None else TgvParams()
    if D is None:
        D = DifferenceOperator(mask)
    x_obs, g0, kappa, mask, _ = _prepare(x_obs, g_obs, kappa, mask, D)
    w = np.isfinite(np.asarray(g_obs, dtype=np.float64)) & D.valid
    return _objective(np.where(mask, x, 0.0), np.where(mask[..., None], q, 0.0),
                      x_obs, np.where(w, g_obs, 0.0), w.astype(np.float64),
                      kappa, _Stencil(D), p)


def _objective(x, q, x_obs, g, w, kappa, st, p):
    r1, r2 = st.forward(x, q)
    return (p.alpha * np.sum(kappa * (x - x_obs) ** 2)
            + p.lambda0 * np.sum(np.sqrt(np.sum(r2 * r2, axis=(-2, -1))))
            + p.lambda1 * np.sum(np.sqrt(np.sum(r1 * r1, axis=-1)))
            + p.beta * np.sum(w * (q - g) ** 2))


def _project_ball(y, radius, axes):
    if radius == 0:
        y[...] = 0.0
        return y
    norm = np.sqrt(np.sum(y * y, axis=axes, keepdims=True))
    y /= np.maximum(1.0, norm / radius)
    return y


def _bbox(mask):
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    return slice(rows[0], rows[-1] + 1), slice(cols[0], cols[-1] + 1)


def fuse_tgv(x_obs, g_obs, kappa, mask, D=None, params=None, return_info=False):
    """Fuse a scalar field with a target gradient field under TGV regularization.

    ``g_obs`` holds per-edge targets as for :func:`~depthfuse.solver_ls.fuse_ls`;
    NaN entries drop out of the ``beta`` term but the corresponding edges stay
    regularized. The iteration starts from the least-squares solution with
    ``q = D x`` and zero duals, and stops when the relative change of ``x``
    falls below ``rel_change_tol`` or after ``max_iter`` iterations.

    Returns ``(x, q)`` (NaN outside the mask), plus an info dict when
    ``return_info`` is set. If the iteration budget runs out, the iterate with
    the lowest objective among the checked ones is returned and a
    ``ConvergenceWarning`` is issued.
    """
    p = params if params is not None else TgvParams()
    x_ls = fuse_ls(x_obs, g_obs, kappa, mask, D, p.ls_params())

    x_obs, _, kappa, mask, _ = _prepare(x_obs, g_obs, kappa, mask, D)
    g_obs = np.asarray(g_obs, dtype=np.float64)
    full_shape = mask.shape
    sl = _bbox(mask)
    mask_c = mask[sl]
    Dc = DifferenceOperator(mask_c)
    st = _Stencil(Dc)
    w_bool = np.isfinite(g_obs[sl]) & Dc.valid
    w = w_bool.astype(np.float64)
    g = np.where(w_bool, g_obs[sl], 0.0)
    kap = kappa[sl]
    xo = x_obs[sl]

    L = estimate_operator_norm(Dc, stacked=True)
    x = np.where(mask_c, x_ls[sl], 0.0)
    q = st.grad(x)
    y1 = np.zeros(q.shape)
    y2 = np.zeros(q.shape + (2,))
    n_iter = 0
    converged = True
    rel_change = 0.0
    best = (_objective(x, q, xo, g, w, kap, st, p), x, q, 0)

    if L > 0 and p.max_iter > 0 and (p.lambda0 > 0 or p.lambda1 > 0):
        tau = sigma = 1.0 / L
        ax = 2.0 * tau * p.alpha * kap
        x_den = 1.0 + ax
        x_num = ax * xo
        bq = 2.0 * tau * p.beta * w
        q_den = 1.0 + bq
        q_num = bq * g
        xbar, qbar = x, q
        xnorm = np.linalg.norm(x)
        converged = False
        for n_iter in range(1, p.max_iter + 1):
            r1, r2 = st.forward(xbar, qbar)
            y1 += sigma * r1
            _project_ball(y1, p.lambda1, -1)
            y2 += sigma * r2
            _project_ball(y2, p.lambda0, (-2, -1))
            ax_, aq_ = st.adjoint(y1, y2)
            x_new = (x - tau * ax_ + x_num) / x_den
            q_new = (q - tau * aq_ + q_num) / q_den
            xbar = 2.0 * x_new - x
            qbar = 2.0 * q_new - q
            change = np.linalg.norm(x_new - x)
            x, q = x_new, q_new
            xnorm = np.linalg.norm(x)
            rel_change = change / xnorm if xnorm > 0 else change
            if not np.isfinite(rel_change):
                raise SolverError(f"TGV iteration produced NaN at iteration {n_iter}")
            if rel_change < p.rel_change_tol:
                converged = True
                break
            if n_iter % _OBJECTIVE_EVERY == 0:
                obj = _objective(x, q, xo, g, w, kap, st, p)
                if obj < best[0]:
                    best = (obj, x, q, n_iter)
        obj = _objective(x, q, xo, g, w, kap, st, p)
        if converged or obj <= best[0]:
            best = (obj, x, q, n_iter)
        if not converged:
            warnings.warn(
                f"TGV fusion stopped after {n_iter} iterations "
                f"(relative change {rel_change:.2e}); returning best iterate "
                f"from iteration {best[3]}", ConvergenceWarning, stacklevel=2)

    objective, x, q, best_iter = best
    x_out = np.full(full_shape, np.nan)
    q_out = np.full(full_shape + (2,), np.nan)
    x_out[sl] = np.where(mask_c, x, np.nan)
    q_out[sl] = np.where(mask_c[..., None], q, np.nan)
    if return_info:
        info = {"n_iter": n_iter, "converged": converged,
                "rel_change": float(rel_change), "objective": float(objective),
                "best_iter": best_iter, "operator_norm": L}
        return x_out, q_out, info
    return x_out, q_out
