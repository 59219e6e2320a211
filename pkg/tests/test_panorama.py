import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from panoaug.camera import DistortionCoeffs, Intrinsics
from panoaug.panorama import (
    Extrinsics,
    FrameMismatchError,
    PanoramaCanvas,
    Rig,
    RigCamera,
    build_canvas,
    load_rig,
    panorama_pixel_to_ray,
    project_ray_to_camera,
    rig_from_dict,
    rotation_from_extrinsics,
    save_rig,
    stitch,
    stitch_labels,
    valid_theta_span,
)
from panoaug.synthetic import solid_frame, solid_label_frame, three_camera_rig


def test_rotation_is_orthonormal():
    R = rotation_from_extrinsics(Extrinsics(30, -12, 7))
    assert np.allclose(R @ R.T, np.eye(3)) and np.linalg.det(R) == pytest.approx(1.0)


def test_yaw_and_pitch_signs():
    # optical axis of a camera yawed +40 points right (+x); pitched +15 points down (+y)
    assert rotation_from_extrinsics(Extrinsics(yaw=40))[:, 2][0] > 0
    assert rotation_from_extrinsics(Extrinsics(pitch=15))[:, 2][1] > 0


def test_extrinsics_range():
    with pytest.raises(ValueError):
        Extrinsics(yaw=-180)
    Extrinsics(yaw=180)


def test_ray_through_principal_point():
    intr = Intrinsics.from_hfov(101, 51, 90)
    assert project_ray_to_camera((0, 0, 1), intr, None, Extrinsics()) == pytest.approx((50.0, 25.0))
    assert project_ray_to_camera((0, 0, -1), intr, None, Extrinsics()) is None
    yawed = (math.sin(math.radians(20)), 0.0, math.cos(math.radians(20)))
    assert project_ray_to_camera(yawed, intr, None, Extrinsics(yaw=20)) == pytest.approx((50.0, 25.0))


@settings(max_examples=60, deadline=None)
@given(st.floats(-1.2, 1.2), st.floats(-0.5, 0.5))
def test_cylinder_column_is_azimuth(theta, h):
    canvas = PanoramaCanvas(100.0, -1.5, 1.5, -1.0, 1.0)
    u = canvas.column_of(theta)
    v = (h - canvas.h_min) * 100.0
    ray = panorama_pixel_to_ray(canvas, u, v)
    assert math.atan2(ray[0], ray[2]) == pytest.approx(theta, abs=1e-12)
    assert ray[1] / math.hypot(ray[0], ray[2]) == pytest.approx(h, abs=1e-12)


def test_canvas_size_floor_plus_one():
    c = PanoramaCanvas(10.0, 0.0, 1.05, 0.0, 0.2)
    assert (c.width, c.height) == (11, 3)


def test_rig_file_round_trip(tmp_path):
    rig = three_camera_rig(64, 36, distortion=DistortionCoeffs(k1=-0.1, p2=0.002))
    save_rig(rig, tmp_path / "rig.yaml")
    back = load_rig(tmp_path / "rig.yaml")
    assert back == rig


def test_rig_file_missing_key():
    with pytest.raises(ValueError):
        rig_from_dict({"cameras": [{"id": "a", "fx": 1}]})


def test_frame_count_mismatch():
    rig = three_camera_rig(64, 36)
    frames = [solid_frame(c.intrinsics, (1, 2, 3)) for c in rig.cameras[:2]]
    with pytest.raises(FrameMismatchError):
        build_canvas(rig, frames)


def _solid_rig(pitch=15.0):
    rig = three_camera_rig(160, 90, center_pitch_deg=pitch)
    colors = [(255, 0, 0), (0, 255, 0), (0, 0, 255)]
    return rig, [solid_frame(c.intrinsics, col) for c, col in zip(rig.cameras, colors)]


def test_contributions_partition_valid_region():
    rig, frames = _solid_rig()
    canvas = build_canvas(rig, frames)
    pano = stitch(rig, frames, canvas)
    stack = np.stack([m.bits for m in pano.contributions.values()]).astype(int)
    assert np.array_equal(stack.sum(axis=0), pano.mask.bits.astype(int))
    # every deposited pixel carries its winner's solid colour
    for k, m in enumerate(pano.contributions.values()):
        assert (pano.raster.data[m.bits] == frames[k].raster.data[0, 0]).all()
    # azimuth order of the wedges: left, front, right
    mid = canvas.height // 2
    row = pano.winners[mid][pano.winners[mid] >= 0]
    assert list(dict.fromkeys(row.tolist())) == [0, 1, 2]


def test_wide_rig_covers_half_circle():
    rig, frames = _solid_rig()
    canvas = build_canvas(rig, frames)
    pano = stitch(rig, frames, canvas)
    assert math.degrees(valid_theta_span(pano.mask, canvas)) >= 180.0


def test_label_stitch_shares_winners():
    rig, frames = _solid_rig()
    lframes = [solid_label_frame(c.intrinsics, k) for k, c in enumerate(rig.cameras)]
    canvas = build_canvas(rig, frames)
    pano = stitch(rig, frames, canvas)
    lpano = stitch_labels(rig, lframes, canvas)
    assert np.array_equal(lpano.winners, pano.winners)
    expect = np.where(pano.winners >= 0, pano.winners, 255)
    assert np.array_equal(lpano.raster.data, expect)


def test_single_camera_unwrap():
    intr = Intrinsics.from_hfov(80, 60, 90)
    rig = Rig((RigCamera("front", intr, DistortionCoeffs(), Extrinsics()),))
    frames = [solid_frame(intr, (9, 9, 9))]
    canvas = build_canvas(rig, frames)
    pano = stitch(rig, frames, canvas)
    # column footprints: the 90 deg field plus at most one column width
    span = math.degrees(valid_theta_span(pano.mask, canvas))
    assert 90.0 <= span <= 90.0 + math.degrees(1.0 / canvas.pixels_per_radian) + 1e-9
    assert pano.contributions["front"] == pano.mask
