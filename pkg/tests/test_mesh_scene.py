import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from densegrasp import shapes
from densegrasp.errors import DegenerateMeshError, MeshParseError, PlacementFailure
from densegrasp.mesh_scene import (Scene, SceneConfig, load_mesh, mesh_volume, parse_obj, randomize_scene,
                                   scale_to_volume, write_obj)
from densegrasp.raycast import ray_triangle_t

UNIT_CUBE_OBJ = """\
v 0 0 0
v 10 0 0
v 10 10 0
v 0 10 0
v 0 0 10
v 10 0 10
v 10 10 10
v 0 10 10
f 1 3 2
f 1 4 3
f 5 6 7
f 5 7 8
f 1 2 6
f 1 6 5
f 2 3 7
f 2 7 6
f 3 4 8
f 3 8 7
f 4 1 5
f 4 5 8
"""


def _voxel_volume_cm3(mesh, h=0.5):
    """Count voxel centres inside the mesh by ray parity along +z."""
    lo, hi = mesh.bounds
    xs = np.arange(lo[0] + h / 2, hi[0], h)
    ys = np.arange(lo[1] + h / 2, hi[1], h)
    gx, gy = np.meshgrid(xs, ys)
    origins = np.stack([gx.ravel(), gy.ravel(), np.full(gx.size, lo[2] - 1.0)], axis=1)
    dirs = np.tile([0.0, 0.0, 1.0], (len(origins), 1))
    t = ray_triangle_t(origins, dirs, mesh.corners)
    zs = np.arange(lo[2] + h / 2, hi[2], h) - (lo[2] - 1.0)
    count = 0
    for row in t:
        hits = np.sort(row[np.isfinite(row)])
        for a, b in zip(hits[0::2], hits[1::2]):
            count += int(((zs >= a) & (zs <= b)).sum())
    return count * h ** 3 / 1000.0


def test_unit_cube_obj_volume(tmp_path):
    path = tmp_path / "cube.obj"
    path.write_text(UNIT_CUBE_OBJ)
    mesh = load_mesh(path, "cuboidal")
    assert len(mesh.vertices) == 8 and len(mesh.triangles) == 12
    assert mesh.signed_volume_mm3 == pytest.approx(1000.0, rel=1e-12)
    assert mesh_volume(mesh) == pytest.approx(1.0)


def test_inward_winding_is_fixed(tmp_path):
    mesh = parse_obj(UNIT_CUBE_OBJ).flipped()
    assert mesh.signed_volume_mm3 < 0
    path = tmp_path / "inward.obj"
    write_obj(mesh, path)
    assert load_mesh(path).signed_volume_mm3 == pytest.approx(1000.0)


def test_face_index_out_of_range():
    with pytest.raises(MeshParseError):
        parse_obj(UNIT_CUBE_OBJ + "f 1 2 9\n")


def test_malformed_vertex():
    with pytest.raises(MeshParseError):
        parse_obj("v 1 2 x\n")


def test_open_mesh_is_degenerate(tmp_path):
    text = "\n".join(UNIT_CUBE_OBJ.splitlines()[:-2]) + "\n"
    path = tmp_path / "open.obj"
    path.write_text(text)
    with pytest.raises(DegenerateMeshError):
        load_mesh(path)


def test_missing_file_is_parse_error(tmp_path):
    with pytest.raises(MeshParseError):
        load_mesh(tmp_path / "nope.obj")


def test_icosphere_volume_close_to_sphere():
    r = 20.0
    vol = mesh_volume(shapes.icosphere(r, 3))
    assert vol == pytest.approx(4.0 / 3.0 * np.pi * r ** 3 / 1000.0, rel=0.05)


def test_volume_matches_voxel_count():
    mesh = scale_to_volume(shapes.icosphere(20.0, 2), 20.0)
    assert mesh_volume(mesh) == pytest.approx(_voxel_volume_cm3(mesh), rel=0.02)


@pytest.mark.parametrize("edge, vol", [(10.0, 1.0), (30.0, 27.0)])
def test_cube_volumes(edge, vol):
    assert mesh_volume(shapes.cube(edge)) == pytest.approx(vol)


def test_scale_cube_to_27_and_1000():
    c = scale_to_volume(shapes.cube(10.0), 27.0)
    assert np.ptp(c.vertices, axis=0) == pytest.approx([30.0] * 3)
    c = scale_to_volume(shapes.cube(10.0), 1000.0)
    assert np.ptp(c.vertices, axis=0) == pytest.approx([100.0] * 3)


def test_scale_to_current_volume_is_identity():
    m = shapes.tee()
    out = scale_to_volume(m, mesh_volume(m))
    np.testing.assert_allclose(out.vertices, m.vertices, atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(range(7)), st.floats(0.5, 2000.0))
def test_scale_to_volume_exact(k, target):
    mesh = shapes.default_pool()[k]
    assert mesh_volume(scale_to_volume(mesh, target)) == pytest.approx(target, rel=1e-6)


def test_scale_rejects_nonpositive_target():
    with pytest.raises(ValueError):
        scale_to_volume(shapes.cube(), 0.0)


def test_scene_config_validation_and_json():
    with pytest.raises(ValueError):
        SceneConfig(volume_range_cm3=(10, 5))
    with pytest.raises(ValueError):
        SceneConfig(noise_std=-1)
    with pytest.raises(ValueError):
        SceneConfig(min_grasps_per_scene=0)
    cfg = SceneConfig(seed=3, table_extent_mm=(400, 500))
    assert SceneConfig.from_json(cfg.to_json()) == cfg
    assert set(cfg.to_dict()) == {"seed", "volume_range_cm3", "camera_distance_range", "table_extent_mm",
                                  "noise_mean", "noise_std", "min_grasps_per_scene"}


def _scene_arrays(scene):
    return [o.posed().vertices for o in scene.objects]


def test_randomize_scene_deterministic():
    cfg = SceneConfig(seed=11, table_extent_mm=(400, 400))
    a = randomize_scene(cfg, shapes.default_pool(), 2)
    b = randomize_scene(cfg, shapes.default_pool(), 2)
    for x, y in zip(_scene_arrays(a), _scene_arrays(b)):
        assert x.tobytes() == y.tobytes()


def test_single_cube_rests_on_table():
    scene = randomize_scene(SceneConfig(seed=5), [shapes.cube()], 1)
    (v,) = _scene_arrays(scene)
    assert v[:, 2].min() == pytest.approx(0.0, abs=1e-6)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31), st.integers(1, 2))
def test_posed_objects_rest_inside_table(seed, count):
    cfg = SceneConfig(seed=seed, table_extent_mm=(400, 400))
    scene = randomize_scene(cfg, shapes.default_pool(), count)
    for v in _scene_arrays(scene):
        assert abs(v[:, 2].min()) <= 1e-6
        assert np.all(np.abs(v[:, :2]) <= 200.0 + 1e-9)


def test_placement_failure_on_tiny_table():
    cfg = SceneConfig(seed=1, table_extent_mm=(20, 20))
    with pytest.raises(PlacementFailure):
        randomize_scene(cfg, [shapes.cube()], 1)


def test_sampled_volumes_are_uniform():
    cfg = SceneConfig(table_extent_mm=(400, 400))
    vols = []
    for s in range(1000):
        scene = randomize_scene(SceneConfig(**{**cfg.to_dict(), "seed": s}), [shapes.cube()], 1)
        vols.append(mesh_volume(scene.objects[0].mesh))
    res = stats.kstest(vols, stats.uniform(loc=27.0, scale=973.0).cdf)
    assert res.pvalue > 0.01


def test_on_table_places_at_positions():
    scene = Scene.on_table([shapes.cube(), shapes.cube()], positions=[(50, 0), (-50, 0)])
    cents = [m.vertices.mean(axis=0) for m in scene.posed_meshes()]
    assert cents[0][:2] == pytest.approx([50, 0]) and cents[1][:2] == pytest.approx([-50, 0])
    assert scene.max_height == pytest.approx(30.0)
