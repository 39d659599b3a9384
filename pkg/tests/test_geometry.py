import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from panodepth.geometry import (
    INVALID_DEPTH,
    RigConfig,
    angle_matrix,
    angular_disparity,
    default_max_disparity,
    depth_to_disparity,
    disparity_to_depth,
    lonlat_to_pixel,
    pixel_to_lonlat,
)

RIG = RigConfig(baseline=0.26, width=512, height=256)


def test_center_maps_to_zero_angles():
    assert pixel_to_lonlat(256, 128, RIG) == (0.0, 0.0)


def test_corners():
    assert pixel_to_lonlat(0, 0, RIG) == (-math.pi, -math.pi / 2)
    assert pixel_to_lonlat(512, 256, RIG) == (math.pi, math.pi / 2)


def test_inverse_examples():
    assert lonlat_to_pixel(0.0, 0.0, RIG) == (256.0, 128.0)
    assert lonlat_to_pixel(-math.pi, 0.0, RIG) == (0.0, 128.0)


def test_out_of_range_coordinates_raise():
    with pytest.raises(ValueError):
        pixel_to_lonlat(-1, 0, RIG)
    with pytest.raises(ValueError):
        pixel_to_lonlat(0, 257, RIG)
    with pytest.raises(ValueError):
        lonlat_to_pixel(0.0, 2.0, RIG)


def test_round_trip_random_pixels():
    rng = np.random.default_rng(0)
    x = rng.uniform(0, RIG.width, 1000)
    y = rng.uniform(0, RIG.height, 1000)
    xb, yb = lonlat_to_pixel(*pixel_to_lonlat(x, y, RIG), RIG)
    np.testing.assert_allclose(xb, x, rtol=0, atol=1e-9)
    np.testing.assert_allclose(yb, y, rtol=0, atol=1e-9)


@given(st.floats(0, 1), st.floats(0, 1), st.integers(2, 4096), st.integers(2, 2048))
def test_round_trip_property(fx, fy, w, h):
    rig = RigConfig(1.0, w, h)
    x, y = lonlat_to_pixel(*pixel_to_lonlat(fx * w, fy * h, rig), rig)
    assert abs(x - fx * w) <= 1e-9 * max(1.0, w)
    assert abs(y - fy * h) <= 1e-9 * max(1.0, h)


def test_angle_matrix_three_rows():
    m = angle_matrix(RigConfig(1.0, 4, 3))
    np.testing.assert_allclose(m.values[:, 0], [0.0, 1.0, 0.0], atol=1e-15)
    assert np.all(m.values[1] == 1.0)


@pytest.mark.parametrize("h", [2, 3, 8, 9, 64, 257])
def test_angle_matrix_mirror_and_constant_rows(h):
    m = angle_matrix(RigConfig(1.0, 16, h))
    assert np.array_equal(m.values, m.values[::-1])
    assert np.all(m.values == m.values[:, :1])
    assert np.all((m.values >= 0) & (m.values <= 1))


def test_angle_matrix_endpoints():
    rig = RigConfig(1.0, 8, 5, fov_h=2.0)
    m = angle_matrix(rig)
    assert m.lat[0] == -1.0 and m.lat[-1] == 1.0 and m.lat[2] == 0.0
    assert m.values[0, 0] == math.cos(1.0)


def test_angular_disparity():
    assert angular_disparity(0.2, 0.1) == pytest.approx(0.1)
    assert angular_disparity(0.7, 0.7) == 0.0
    assert angular_disparity(-0.1, 0.1) == pytest.approx(0.2)


def test_disparity_to_depth_examples():
    assert disparity_to_depth(0.1, 1.0, RigConfig(1.0, 8, 4)) == pytest.approx(10.0)
    assert disparity_to_depth(0.013, 0.5, RigConfig(0.26, 8, 4)) == pytest.approx(10.0)
    assert disparity_to_depth(0.0, 0.7, RIG) == INVALID_DEPTH
    assert disparity_to_depth(1e-7, 0.7, RIG) == INVALID_DEPTH


def test_depth_to_disparity_examples():
    assert depth_to_disparity(10.0, 1.0, RigConfig(1.0, 8, 4)) == pytest.approx(0.1)
    assert depth_to_disparity(3.0, 0.0, RIG) == 0.0
    with pytest.raises(ValueError):
        depth_to_disparity(0.0, 1.0, RIG)
    with pytest.raises(ValueError):
        depth_to_disparity(-1.0, 1.0, RIG)


def test_depth_disparity_round_trip():
    rng = np.random.default_rng(1)
    depth = rng.uniform(0.3, 50.0, 10000)
    cos_lat = rng.uniform(0.05, 1.0, 10000)
    back = disparity_to_depth(depth_to_disparity(depth, cos_lat, RIG), cos_lat, RIG)
    assert np.max(np.abs(back - depth) / depth) < 1e-9


def test_depth_monotone_in_disparity():
    d = np.linspace(0.01, 0.5, 200)
    depth = disparity_to_depth(d, 0.8, RIG)
    assert np.all(np.diff(depth) < 0)


def test_rig_validation():
    with pytest.raises(ValueError):
        RigConfig(-0.1, 8, 4)
    with pytest.raises(ValueError):
        RigConfig(0.1, 1, 4)
    with pytest.raises(ValueError):
        RigConfig(0.1, 8, 4, fov_h=4.0)
    assert RigConfig(0.0, 8, 4).baseline == 0.0


def test_default_max_disparity_is_capped():
    assert default_max_disparity(RIG) == pytest.approx(0.52)
    assert default_max_disparity(RigConfig(5.0, 8, 4)) == pytest.approx(math.pi / 4)
