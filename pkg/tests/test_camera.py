import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage

from depthfuse.camera import (CameraIntrinsics, back_project, back_project_grid,
                              normals_from_depth, project)
from depthfuse.exceptions import DomainError
from depthfuse.metrics import angular_error
from depthfuse.synth import make_scene


def _single(depth_value, u, v, camera, shape=(12, 16)):
    depth = np.full(shape, np.nan)
    depth[v, u] = depth_value
    mask = np.zeros(shape, dtype=bool)
    mask[v, u] = True
    return back_project(depth, mask, camera)


def test_principal_point_ray():
    cam = CameraIntrinsics(f=50.0, cu=4.0, cv=3.0)
    cloud = _single(5.0, 4, 3, cam)
    np.testing.assert_array_equal(cloud.points, [[0.0, 0.0, 5.0]])
    np.testing.assert_array_equal(cloud.pixels, [[4, 3]])


def test_45_degree_ray():
    cam = CameraIntrinsics(f=10.0, cu=2.0, cv=3.0)
    cloud = _single(2.0, 12, 3, cam, shape=(8, 16))
    np.testing.assert_allclose(cloud.points, [[2.0, 0.0, 2.0]], rtol=0, atol=1e-15)


def test_offset_pixel():
    cam = CameraIntrinsics(f=100.0, cu=5.0, cv=6.0)
    cloud = _single(10.0, 8, 2, cam)
    np.testing.assert_allclose(cloud.points, [[0.3, -0.4, 10.0]], rtol=1e-15)


def test_non_positive_depth_names_pixel(camera):
    depth = np.ones((4, 5))
    depth[2, 3] = -1.0
    with pytest.raises(DomainError, match=r"u=3, v=2"):
        back_project(depth, np.ones((4, 5), bool), camera)


def test_depth_outside_mask_is_ignored(camera):
    depth = np.full((3, 3), -5.0)
    depth[1, 1] = 2.0
    mask = np.zeros((3, 3), bool)
    mask[1, 1] = True
    assert len(back_project(depth, mask, camera)) == 1


@settings(max_examples=60, deadline=None)
@given(f=st.floats(10, 5000), cu=st.floats(-20, 40), cv=st.floats(-20, 40),
       seed=st.integers(0, 2 ** 32 - 1))
def test_project_inverts_back_project(f, cu, cv, seed):
    rng = np.random.default_rng(seed)
    cam = CameraIntrinsics(f, cu, cv)
    depth = rng.uniform(0.5, 3000.0, (6, 7))
    mask = rng.random((6, 7)) < 0.7
    cloud = back_project(depth, mask, cam)
    np.testing.assert_allclose(project(cloud.points, cam), cloud.pixels, rtol=0, atol=1e-12 * max(1.0, abs(cu), abs(cv), 7))


def test_grid_back_projection_matches_cloud(camera, rng):
    depth = rng.uniform(1, 10, (12, 16))
    mask = np.ones_like(depth, bool)
    pts = back_project_grid(depth, camera)
    np.testing.assert_allclose(pts[mask], back_project(depth, mask, camera).points, rtol=1e-15)


def test_camera_validation():
    with pytest.raises(ValueError):
        CameraIntrinsics(0.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        CameraIntrinsics(1.0, np.nan, 1.0)
    with pytest.raises(ValueError, match="cu"):
        CameraIntrinsics.from_dict({"f": 1.0, "cv": 2.0})


def test_camera_json_roundtrip(tmp_path):
    cam = CameraIntrinsics(612.5, 311.25, 255.0)
    cam.to_json(tmp_path / "c.json")
    assert json.loads((tmp_path / "c.json").read_text()) == {"f": 612.5, "cu": 311.25, "cv": 255.0}
    assert CameraIntrinsics.from_json(tmp_path / "c.json") == cam


def test_constant_depth_gives_frontal_normals(camera):
    depth = np.full((12, 16), 10.0)
    mask = np.ones_like(depth, bool)
    n, valid = normals_from_depth(depth, mask, camera)
    assert valid.all()
    np.testing.assert_allclose(n, np.broadcast_to([0.0, 0.0, 1.0], n.shape), atol=1e-15)


def test_normals_are_unit_where_valid(rng, camera):
    depth = rng.uniform(5, 6, (12, 16))
    mask = rng.random((12, 16)) < 0.8
    n, valid = normals_from_depth(depth, mask, camera)
    np.testing.assert_allclose(np.linalg.norm(n[valid], axis=1), 1.0, atol=1e-12)
    assert np.all(n[~valid] == 0)


def test_isolated_pixel_is_invalid(camera):
    mask = np.zeros((12, 16), bool)
    mask[4, 4] = True
    _, valid = normals_from_depth(np.ones((12, 16)), mask, camera)
    assert not valid.any()


def test_plane_normals_are_exact():
    cam = CameraIntrinsics.centered(80.0, 40, 30)
    scene = make_scene("plane", cam, 40, 30, normal=(0.3, -0.2, 0.9), distance=500.0)
    n, valid = normals_from_depth(scene.depth_gt, scene.mask, cam)
    assert valid.all()
    assert np.max(angular_error(n, scene.normals_gt)) < 1e-9


def test_sphere_normals_match_analytic():
    cam = CameraIntrinsics.centered(600.0, 256, 256)
    scene = make_scene("sphere", cam, 256, 256, center=(0, 0, 1000), radius=200)
    n, valid = normals_from_depth(scene.depth_gt, scene.mask, cam)
    interior = ndimage.binary_erosion(scene.mask, iterations=5) & valid
    assert interior.sum() > 10000
    assert np.mean(angular_error(n[interior], scene.normals_gt[interior])) < 0.01


def test_ramp_approaches_orthographic_normal():
    # lateral slope a (mm per mm); base depth grows with f to keep a 0.5 mm footprint
    a, footprint = 0.4, 0.5
    expected = np.array([-a, 0.0, 1.0]) / np.hypot(a, 1.0)
    errors = []
    for f in (1e3, 1e4, 1e6):
        cam = CameraIntrinsics.centered(f, 21, 21)
        du, _ = cam.pixel_grid((21, 21))
        depth = footprint * f + a * footprint * du
        n, valid = normals_from_depth(depth, np.ones((21, 21), bool), cam)
        errors.append(np.max(angular_error(n[valid], expected)))
    assert errors[0] > errors[1] > errors[2]
    assert errors[2] < 1e-3
