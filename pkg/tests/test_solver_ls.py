import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from depthfuse.exceptions import DomainError, SolverError
from depthfuse.gradfield import DifferenceOperator
from depthfuse.solver_ls import (LsParams, anchored_mask, dense_oracle_ls, fuse_ls,
                                 objective_ls)

from conftest import random_mask


def _instance(rng, shape=(12, 12), p_mask=0.85):
    mask = random_mask(rng, shape, p_mask)
    # a small floor keeps every mask component anchored
    kappa = np.clip(rng.random(shape) * (rng.random(shape) < 0.6) + 0.05, 0, 1)
    x_obs = rng.standard_normal(shape)
    g = rng.standard_normal(shape + (2,))
    return x_obs, g, kappa, mask


def _lstsq_oracle(x_obs, g, kappa, mask, alpha, beta):
    """Least-squares solve of the stacked residual system, no normal equations."""
    idx = np.flatnonzero(mask)
    D = DifferenceOperator(mask).restrict(g)
    M = D.matrix()[:, idx].toarray()
    rows = D.valid.ravel()
    k = kappa.ravel()[idx]
    A = np.vstack([np.sqrt(alpha * k)[:, None] * np.eye(idx.size),
                   np.sqrt(beta) * M[rows]])
    b = np.concatenate([np.sqrt(alpha * k) * x_obs.ravel()[idx],
                        np.sqrt(beta) * g.ravel()[rows]])
    sol = np.linalg.lstsq(A, b, rcond=None)[0]
    x = np.full(mask.shape, np.nan)
    x.ravel()[idx] = sol
    return x


def test_data_term_only_returns_observation(rng):
    x_obs = rng.standard_normal((6, 7))
    x = fuse_ls(x_obs, np.zeros((6, 7, 2)), np.ones((6, 7)), np.ones((6, 7), bool),
                params=LsParams(beta=0.0))
    np.testing.assert_array_equal(x, x_obs)


def test_single_anchor_recovers_ramp():
    shape = (12, 12)
    ramp = np.tile(np.arange(12.0), (12, 1))
    g = np.zeros(shape + (2,))
    g[..., 0] = 1.0
    kappa = np.zeros(shape)
    kappa[5, 5] = 1.0
    mask = np.ones(shape, bool)
    x = fuse_ls(ramp, g, kappa, mask)
    np.testing.assert_allclose(x, ramp, rtol=0, atol=1e-7)
    np.testing.assert_allclose(dense_oracle_ls(ramp, g, kappa, mask), ramp, rtol=0, atol=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_cg_matches_dense_oracle(seed):
    rng = np.random.default_rng(seed)
    x_obs, g, kappa, mask = _instance(rng)
    params = LsParams(alpha=rng.uniform(0.1, 5), beta=rng.uniform(0.1, 5))
    x = fuse_ls(x_obs, g, kappa, mask, params=params)
    ref = dense_oracle_ls(x_obs, g, kappa, mask, params=params)
    assert np.nanmax(np.abs(x - ref)) < 1e-6
    np.testing.assert_array_equal(np.isnan(x), ~mask)


@pytest.mark.parametrize("seed", range(5))
def test_dense_oracle_matches_stacked_lstsq(seed):
    rng = np.random.default_rng(100 + seed)
    x_obs, g, kappa, mask = _instance(rng, (8, 9))
    g[rng.random(g.shape) < 0.1] = np.nan
    params = LsParams(alpha=0.7, beta=2.3)
    ref = dense_oracle_ls(x_obs, g, kappa, mask, params=params)
    np.testing.assert_allclose(ref, _lstsq_oracle(x_obs, g, kappa, mask, 0.7, 2.3),
                               rtol=0, atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1))
def test_objective_not_worse_than_observation(seed):
    rng = np.random.default_rng(seed)
    x_obs, g, kappa, mask = _instance(rng, (7, 8))
    x = fuse_ls(x_obs, g, kappa, mask)
    start = np.where(kappa > 0, x_obs, 0.0)
    assert objective_ls(x, x_obs, g, kappa, mask) <= objective_ls(start, x_obs, g, kappa, mask) + 1e-9


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), c=st.floats(-100, 100))
def test_constant_shift_equivariance(seed, c):
    rng = np.random.default_rng(seed)
    x_obs, g, kappa, mask = _instance(rng, (7, 8))
    a = fuse_ls(x_obs, g, kappa, mask)
    b = fuse_ls(x_obs + c, g, kappa, mask)
    np.testing.assert_allclose(b[mask], a[mask] + c, rtol=0, atol=1e-6 * (1 + abs(c)))


def test_gap_values_are_ignored(rng):
    x_obs, g, kappa, mask = _instance(rng, (12, 12), 1.0)
    kappa[3:8, 3:8] = 0.0
    a = fuse_ls(x_obs, g, kappa, mask)
    x2 = x_obs.copy()
    x2[3:8, 3:8] = rng.standard_normal((5, 5)) * 1e3
    b = fuse_ls(x2, g, kappa, mask)
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-7)


def test_nan_gradients_are_dropped():
    shape = (4, 4)
    ramp = np.tile(np.arange(4.0), (4, 1))
    g = np.zeros(shape + (2,))
    g[..., 0] = 1.0
    g[1, 1, 0] = np.nan
    x = fuse_ls(ramp, g, np.ones(shape), np.ones(shape, bool))
    np.testing.assert_allclose(x, ramp, atol=1e-8)


def test_unanchored_component_is_singular():
    mask = np.zeros((5, 7), bool)
    mask[:, :2] = True
    mask[:, 4:] = True
    kappa = np.zeros((5, 7))
    kappa[:, :2] = 1.0
    with pytest.raises(SolverError, match=r"singular system: component 1 \(15 pixels"):
        fuse_ls(np.zeros((5, 7)), np.zeros((5, 7, 2)), kappa, mask)


def test_anchored_mask_marks_reachable_pixels():
    mask = np.ones((3, 6), bool)
    g = np.zeros((3, 6, 2))
    g[:, 2, 0] = np.nan  # cut the grid between columns 2 and 3
    kappa = np.zeros((3, 6))
    kappa[0, 0] = 1.0
    keep = anchored_mask(g, kappa, mask)
    assert keep[:, :3].all() and not keep[:, 3:].any()


def test_cg_non_convergence_reports_residual(rng):
    x_obs, g, kappa, mask = _instance(rng)
    with pytest.raises(SolverError, match="relative residual"):
        fuse_ls(x_obs, g, kappa, mask, params=LsParams(cg_max_iter=1))


def test_nonfinite_observation_with_weight_is_rejected():
    x = np.ones((3, 3))
    x[1, 2] = np.nan
    with pytest.raises(DomainError, match=r"u=2, v=1"):
        fuse_ls(x, np.zeros((3, 3, 2)), np.ones((3, 3)), np.ones((3, 3), bool))


def test_dense_oracle_size_limit():
    with pytest.raises(ValueError, match="4096"):
        dense_oracle_ls(np.zeros((65, 64)), np.zeros((65, 64, 2)), np.ones((65, 64)),
                        np.ones((65, 64), bool))


@pytest.mark.parametrize("kwargs", [dict(alpha=-1), dict(beta=-0.1), dict(alpha=0, beta=0),
                                    dict(cg_tol=0), dict(cg_max_iter=0)])
def test_params_validation(kwargs):
    with pytest.raises(ValueError):
        LsParams(**kwargs)


def test_info_reports_iterations(rng):
    x_obs, g, kappa, mask = _instance(rng)
    _, info = fuse_ls(x_obs, g, kappa, mask, return_info=True)
    assert info["n_iter"] > 0 and info["residual"] <= 1e-9
