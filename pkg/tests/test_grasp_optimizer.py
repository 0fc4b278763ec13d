import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from densegrasp.depth_render import CameraModel, DepthImage, crop_resize, render_depth, rotate_with_padding
from densegrasp.errors import NoExecutableGrasp, OpenContactError
from densegrasp.grasp_optimizer import (OptimizerConfig, antipodal_check_2d, bin_to_image, detect_edges,
                                        find_contacts, image_to_bin, refine_direction, select_best, width_filter)
from densegrasp.grasp_sampler import GripperModel
from densegrasp.label_gen import POSITIVE, AffordanceMap, OrientationBin
from densegrasp.pipeline import empty_map

W, H = 300, 200


def _image(depth):
    h, w = depth.shape
    return DepthImage(depth, 600.0, CameraModel.top_down(600.0, w, h, kind="orthographic"))


def _bars(specs, w=W, h=H):
    """Depth image with flat 30 mm bars; spec = (centre u, centre v, width across, length, angle deg)."""
    d = np.full((h, w), 600.0)
    vv, uu = np.mgrid[0:h, 0:w]
    for cu, cv, width, length, ang in specs:
        a = np.deg2rad(ang)
        across = (uu - cu) * np.cos(a) + (vv - cv) * np.sin(a)
        along = -(uu - cu) * np.sin(a) + (vv - cv) * np.cos(a)
        d[(across >= -width / 2) & (across < width / 2) & (np.abs(along) < length / 2)] = 570.0
    return _image(d)


def _maps(blobs, w=W, h=H):
    """16 maps, positive pixels (bin, u, v, score) and background elsewhere."""
    maps = [empty_map(k, h, w) for k in range(16)]
    for b, u, v, s in blobs:
        m = maps[b]
        m.classes[v, u] = POSITIVE
        q = np.where(np.isnan(m.quality), np.nan, m.quality)
        q[v, u] = s
        maps[b] = AffordanceMap(m.classes, OrientationBin(b), q)
    return maps


def test_constant_image_has_no_edges():
    assert not detect_edges(np.full((20, 20), 600.0)).mask.any()


def test_step_edge_direction():
    d = np.full((10, 20), 600.0)
    d[:, :10] = 570.0  # nearer object on the left
    e = detect_edges(d)
    cols = np.unique(np.nonzero(e.mask)[1])
    assert cols.tolist() == [9, 10]
    np.testing.assert_allclose(e.direction[e.mask], 0.0)  # towards the farther side, along +u


def test_cube_edges_follow_projected_outline(cube_scene, camera):
    img = crop_resize(render_depth(cube_scene, camera, 640, 480), 300)
    e = detect_edges(img)
    corners = img.camera.project(np.array([[-15, -15, 30], [15, -15, 30], [15, 15, 30], [-15, 15, 30.0]]))
    lo, hi = corners[:, :2].min(axis=0), corners[:, :2].max(axis=0)
    vv, uu = np.nonzero(e.mask)
    # distance of each edge pixel to the projected square outline
    dx = np.maximum(np.maximum(lo[0] - uu, uu - hi[0]), 0)
    dy = np.maximum(np.maximum(lo[1] - vv, vv - hi[1]), 0)
    outside = np.hypot(dx, dy)
    inside = np.minimum(np.minimum(uu - lo[0], hi[0] - uu), np.minimum(vv - lo[1], hi[1] - vv))
    dist = np.where(outside > 0, outside, np.abs(inside))
    assert e.mask.sum() > 100
    assert dist.max() <= 1.0


def test_bar_contacts():
    img = _bars([(149.5, 100, 20, 120, 0.0)])  # columns 140..159
    c1, c2 = find_contacts((149.5, 100), 0.0, detect_edges(img))
    assert 149.5 - c1[0] == pytest.approx(10, abs=0.5)
    assert c2[0] - 149.5 == pytest.approx(10, abs=0.5)


def test_offset_centre_contacts_stay_collinear():
    img = _bars([(150, 99.5, 20, 120, 90.0)])  # bar along u, rows 90..109
    e = detect_edges(img)
    centre = np.array([150.0, 102.5])
    c1, c2 = find_contacts(centre, 90.0, e)
    assert c1[0] == pytest.approx(150.0, abs=1.0) and c2[0] == pytest.approx(150.0, abs=1.0)
    assert (centre[1] - c1[1], c2[1] - centre[1]) == pytest.approx((13.0, 7.0), abs=0.5)


def test_empty_table_is_open_contact():
    with pytest.raises(OpenContactError):
        find_contacts((50, 50), 0.0, detect_edges(_bars([])))


@pytest.mark.parametrize("span, ok", [(20.0, True), (90.0, False), (85.0, False), (84.9, True)])
def test_width_filter(span, ok):
    img = _image(np.full((H, W), 570.0))
    assert width_filter((100.0, 100.0), (100.0 + span, 100.0), img, GripperModel(max_width=85.0)) == ok


def test_antipodal_2d_examples():
    assert antipodal_check_2d((0, 0), (10, 0), (-1.0, 0.0), (1.0, 0.0), 0.0)
    assert not antipodal_check_2d((0, 0), (10, 0), (-1.0, 0.0), (0.0, 1.0), 0.3)


@pytest.mark.parametrize("mu", [0.2, 0.5, 1.0])
def test_wedge_boundary(mu):
    a = np.arctan(mu)
    c1, c2 = (0.0, 0.0), (10.0, 0.0)
    for margin, expect in ((0.0, False), (1e-6, False), (-1e-6, True)):
        t = a + margin
        n1 = np.array([np.cos(np.pi - t), np.sin(np.pi - t)])
        n2 = np.array([np.cos(-t), np.sin(-t)])
        assert antipodal_check_2d(c1, c2, n1, n2, mu) == expect


@settings(max_examples=200)
@given(st.floats(0, 360), st.floats(-60, 60), st.floats(-60, 60), st.floats(-20, 20))
def test_refinement_bounded(theta0, d1, d2, offset):
    axis = np.deg2rad(theta0 + offset)
    n1 = -np.array([np.cos(axis + np.deg2rad(d1)), np.sin(axis + np.deg2rad(d1))])
    n2 = np.array([np.cos(axis + np.deg2rad(d2)), np.sin(axis + np.deg2rad(d2))])
    theta, refined = refine_direction(n1, n2, theta0 % 360.0)
    delta = (theta - theta0 + 180.0) % 360.0 - 180.0
    if refined:
        assert abs(delta) <= 11.25 + 1e-6
    else:
        assert theta == theta0 % 360.0


@settings(max_examples=100)
@given(st.floats(0, 299), st.floats(0, 199), st.integers(0, 15))
def test_bin_coordinate_round_trip(u, v, k):
    back = bin_to_image(image_to_bin((u, v), k, W, H), k, W, H)
    np.testing.assert_allclose(back, (u, v), atol=1e-9)


@pytest.mark.parametrize("k", [1, 3, 6, 11])
def test_bin_coordinates_match_rotated_image(k):
    d = np.full((H, W), 600.0)
    d[60:63, 200:203] = 500.0
    rot = rotate_with_padding(_image(d), -k * 22.5)
    v, u = np.unravel_index(np.argmin(rot.depth), rot.depth.shape)
    np.testing.assert_allclose(bin_to_image((u, v), k, W, H), (201, 61), atol=1.0)


def test_select_on_rotated_bar_refines_across():
    img = _bars([(150, 100, 20, 120, 8.0)])
    g = select_best(_maps([(0, 150, 100, 0.9)]), img, mu=0.5)
    assert g.valid and g.refined
    np.testing.assert_allclose(g.center_px, (150, 100))
    assert g.theta_initial == 0.0
    assert g.theta_refined == pytest.approx(8.0, abs=1.5)
    assert g.width_mm == pytest.approx(20.0, abs=1.0)
    assert width_filter(g.contact_px1, g.contact_px2, img)


def test_wide_candidate_skipped_for_next():
    img = _bars([(65, 100, 90, 150, 0.0), (210, 100, 20, 150, 0.0)])
    g = select_best(_maps([(0, 65, 100, 0.9), (0, 210, 100, 0.6)]), img, mu=0.5)
    assert g.center_px[0] == pytest.approx(210) and g.score == 0.6
    with pytest.raises(NoExecutableGrasp):
        select_best(_maps([(0, 65, 100, 0.9), (0, 210, 100, 0.6)]), img, top_k=1)


def test_rotated_bin_candidate_maps_back():
    img = _bars([(150, 100, 20, 120, 90.0)])
    b = 4  # 90 degrees
    u, v = np.round(image_to_bin((150.0, 100.0), b, W, H)).astype(int)
    g = select_best(_maps([(b, u, v, 0.8)]), img)
    np.testing.assert_allclose(g.center_px, (150, 100), atol=1.0)
    assert g.theta_refined == pytest.approx(90.0, abs=1.0)


def test_all_background_raises():
    with pytest.raises(NoExecutableGrasp):
        select_best(_maps([]), _bars([(150, 100, 20, 120, 0.0)]))
    with pytest.raises(ValueError):
        select_best(_maps([])[:3], _bars([]))


def test_returned_grasp_passes_checks_post_hoc():
    img = _bars([(150, 100, 24, 120, 20.0)])
    g = select_best(_maps([(1, *np.round(image_to_bin((150.0, 100.0), 1, W, H)).astype(int), 0.7)]), img,
                    config=OptimizerConfig())
    e = detect_edges(img, 5.0, 5)
    c1, c2 = find_contacts(g.center_px, g.theta_refined, e)
    np.testing.assert_allclose(c1, g.contact_px1)
    assert width_filter(g.contact_px1, g.contact_px2, img)
