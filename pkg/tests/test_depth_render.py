import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from densegrasp import shapes
from densegrasp.depth_render import (CameraModel, DepthImage, add_depth_noise, crop_resize, load_depth_png,
                                     render_depth, rotate_with_padding, save_depth_png)
from densegrasp.errors import CorruptFileError, RenderError
from densegrasp.mesh_scene import Scene
from densegrasp.raycast import ray_triangle_t


def test_empty_scene_is_background(camera):
    img = render_depth(Scene(()), camera, 64, 48)
    assert np.all(img.depth == camera.background_depth)
    assert img.background_depth == 600.0


def test_orthographic_cube_top_exact():
    cam = CameraModel.top_down(500.0, 100, 100, kind="orthographic")
    img = render_depth(Scene.on_table([shapes.cube(30.0)]), cam, 100, 100)
    top = img.depth[40:60, 40:60]
    assert np.all(top == 470.0)
    assert img.depth[0, 0] == 500.0


def test_pinhole_cube_top_center(cube_depth):
    assert cube_depth.depth[240, 320] == pytest.approx(570.0, abs=1e-9)


def test_sphere_center_depth():
    r = 20.0
    cam = CameraModel.top_down(500.0, 101, 101)
    img = render_depth(Scene.on_table([shapes.icosphere(r, 3)]), cam, 101, 101)
    assert img.depth[50, 50] == pytest.approx(500.0 - 2 * r, abs=1.0)


def test_matches_independent_raycast():
    scene = Scene.on_table([shapes.tee(), shapes.cup()], positions=[(-40, 0), (45, 10)],
                           rotations=[np.eye(3), np.eye(3)])
    cam = CameraModel.top_down(450.0, 160, 120, focal=150.0)
    img = render_depth(scene, cam, 160, 120)
    rng = np.random.default_rng(0)
    uu, vv = rng.integers(0, 160, 400), rng.integers(0, 120, 400)
    o, d = cam.rays(uu.astype(float), vv.astype(float))
    corners = np.concatenate([m.corners for m in scene.posed_meshes()])
    t = ray_triangle_t(np.array(o), np.array(d), corners).min(axis=1)
    oracle = np.where(np.isfinite(t), np.minimum(t, cam.background_depth), cam.background_depth)
    np.testing.assert_allclose(img.depth[vv, uu], oracle, atol=1e-6)


def test_depth_bounds(camera):
    scene = Scene.on_table([shapes.dumbbell(), shapes.tee()], positions=[(-50, 0), (50, 0)])
    img = render_depth(scene, camera, 320, 240)
    assert img.depth.max() <= img.background_depth
    assert img.depth.min() >= 600.0 - scene.max_height - 1e-9


def test_camera_below_objects_rejected():
    with pytest.raises(RenderError):
        render_depth(Scene.on_table([shapes.cube(30)]), CameraModel.top_down(20.0), 64, 48)
    with pytest.raises(RenderError):
        render_depth(Scene(()), CameraModel.top_down(-5.0), 64, 48)


def test_render_deterministic(cube_scene, camera):
    a = render_depth(cube_scene, camera, 640, 480)
    b = render_depth(cube_scene, camera, 640, 480)
    assert a.depth.tobytes() == b.depth.tobytes()


def test_noise_identity_and_determinism(cube_depth):
    assert np.array_equal(add_depth_noise(cube_depth, 1.0, 0.0).depth, cube_depth.depth)
    a = add_depth_noise(cube_depth, 1.0, 0.01, seed=4)
    b = add_depth_noise(cube_depth, 1.0, 0.01, seed=4)
    assert a.depth.tobytes() == b.depth.tobytes()
    assert not np.array_equal(a.depth, add_depth_noise(cube_depth, 1.0, 0.01, seed=5).depth)


def test_noise_mean_law_of_large_numbers():
    img = DepthImage(np.full((1000, 1000), 600.0), 600.0, CameraModel.top_down(600.0, 1000, 1000))
    ratio = add_depth_noise(img, 1.0, 0.01, seed=1).depth / img.depth
    assert abs(ratio.mean() - 1.0) < 1e-3
    with pytest.raises(ValueError):
        add_depth_noise(img, 1.0, -0.1)


def test_rotation_identities(cube_depth):
    img = crop_resize(cube_depth, 300)
    assert rotate_with_padding(img, 0).depth is img.depth
    np.testing.assert_allclose(rotate_with_padding(img, 360).depth, img.depth, atol=1e-3)
    twice = rotate_with_padding(rotate_with_padding(img, 180), 180)
    np.testing.assert_allclose(twice.depth, img.depth, atol=1e-3)


def test_rotation_180_is_flip(cube_depth):
    img = crop_resize(cube_depth, 300)
    np.testing.assert_allclose(rotate_with_padding(img, 180).depth, img.depth[::-1, ::-1], atol=1e-9)


@settings(max_examples=20, deadline=None)
@given(st.floats(-360, 360))
def test_adaptive_padding_adds_no_new_extremes(angle):
    scene = Scene.on_table([shapes.box(60, 20, 25)])
    img = crop_resize(render_depth(scene, CameraModel.top_down(600.0), 640, 480), 300)
    out = rotate_with_padding(img, angle)
    assert out.depth.max() <= img.background_depth + 1e-9
    assert out.depth.min() >= img.depth.min() - 1e-9
    black = rotate_with_padding(img, angle, "black")
    assert black.depth.min() >= 0.0


def test_rotated_camera_projects_consistently(cube_scene, camera):
    img = crop_resize(render_depth(cube_scene, camera, 640, 480), 300)
    rot = rotate_with_padding(img, 37.0)
    p = np.array([10.0, -5.0, 30.0])
    u0, v0, z0 = img.camera.project(p)
    u1, v1, z1 = rot.camera.project(p)
    c = img.center
    a = np.deg2rad(37.0)
    expect = c + np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]]) @ (np.array([u0, v0]) - c)
    np.testing.assert_allclose([u1, v1], expect, atol=1e-9)
    assert z1 == pytest.approx(z0)


def test_crop_resize_identity_and_constant():
    cam = CameraModel.top_down(600.0, 300, 300)
    d = np.random.default_rng(0).uniform(500, 600, (300, 300))
    out = crop_resize(DepthImage(d, 600.0, cam), 300)
    assert np.array_equal(out.depth, d)
    const = DepthImage(np.full((600, 600), 550.0), 600.0, CameraModel.top_down(600.0, 600, 600))
    assert np.all(crop_resize(const, 300).depth == 550.0)
    with pytest.raises(ValueError):
        crop_resize(DepthImage(np.full((100, 100), 1.0), 1.0, cam), 300)


def test_crop_resize_preserves_area(cube_depth):
    full = cube_depth.depth[:, 80:560]
    out = crop_resize(cube_depth, 300).depth
    mid = 585.0
    expected = (full < mid).sum() * (300 / 480) ** 2
    assert (out < mid).sum() == pytest.approx(expected, rel=0.03)


def test_crop_camera_tracks_geometry(cube_scene, camera):
    img = crop_resize(render_depth(cube_scene, camera, 640, 480), 300)
    u, v, z = img.camera.project(np.array([0.0, 0.0, 30.0]))
    assert (u, v) == pytest.approx((149.5, 149.5))
    assert img.depth[150, 150] == pytest.approx(z, abs=1e-9)


def test_png_round_trip(tmp_path, cube_depth):
    path = tmp_path / "d.png"
    save_depth_png(cube_depth, path)
    back = load_depth_png(path)
    assert np.abs(back - cube_depth.depth).max() <= 0.05 + 1e-9
    with Image.open(path) as im:
        assert im.mode.startswith("I")


def test_truncated_png_raises(tmp_path, cube_depth):
    save_depth_png(cube_depth, tmp_path / "d.png")
    data = (tmp_path / "d.png").read_bytes()
    (tmp_path / "t.png").write_bytes(data[: len(data) // 2])
    with pytest.raises(CorruptFileError):
        load_depth_png(tmp_path / "t.png")
