import math

import numpy as np
import pytest

from panodepth.errors import DataError
from panodepth.geometry import RigConfig
from panodepth.panorama_io import Panorama
from panodepth.scenegen import SceneParams, generate_scene, render_stereo_sample
from panodepth.sgm import (
    CostVolume,
    SgmParams,
    aggregate,
    census_transform,
    matching_cost,
    refine,
    sgm_depth,
    wta_disparity,
)

RIG = RigConfig(0.26, 64, 64)
# one disparity level per image row
ROW_STEP = SgmParams(num_disp=9, max_disparity=8 * math.pi / 64)


def textured(seed, h=64, w=64):
    return np.random.default_rng(seed).uniform(0, 1, (h, w))


@pytest.mark.parametrize("cost", ["census", "sad"])
def test_identical_images_zero_plane(cost):
    img = textured(0)
    vol = matching_cost(img, img, SgmParams(cost=cost, num_disp=9, max_disparity=0.3), RIG)
    assert np.all(vol.costs[:, :, 0] == 0)
    assert np.all(vol.costs >= 0)


def brute_census(gray, r=2):
    """Boolean census descriptors via explicit neighbor loops (rows clamp, columns wrap)."""
    h, w = gray.shape
    bits = []
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            if dy or dx:
                ys = np.clip(np.arange(h) + dy, 0, h - 1)
                xs = (np.arange(w) + dx) % w
                bits.append(gray[ys][:, xs] < gray)
    return np.stack(bits, axis=-1)


def brute_costs(top, bottom, kind, num_disp):
    h, w = top.shape
    out = np.full((h, w, num_disp), np.inf)
    if kind == "census":
        ct, cb = brute_census(top), brute_census(bottom)
    for d in range(num_disp):
        for y in range(d, h):
            if kind == "census":
                out[y, :, d] = np.sum(ct[y] != cb[y - d], axis=-1)
            else:
                diff = np.abs(top - np.roll(bottom, d, axis=0))
                ys = np.clip(np.arange(y - 2, y + 3), 0, h - 1)
                win = diff[ys]
                out[y, :, d] = sum(np.roll(win, s, axis=1) for s in range(-2, 3)).sum(axis=0)
    return out


@pytest.mark.parametrize("cost", ["census", "sad"])
def test_shifted_pair_argmin(cost):
    top = textured(1)
    for k in (2, 5):
        bottom = np.empty_like(top)
        bottom[:-k] = top[k:]
        bottom[-k:] = top[-k:]
        params = SgmParams(cost=cost, num_disp=9, max_disparity=8 * math.pi / 64)
        vol = matching_cost(top, bottom, params, RIG)
        inner = slice(12, -12)
        ref = brute_costs(top, bottom, cost, 9)[inner]
        np.testing.assert_allclose(vol.costs[inner], ref, atol=1e-4)
        assert np.all(np.abs(vol.costs[inner][:, :, k]) < 1e-6)
        # ties go to the smaller level; census ties are common at local extrema
        best = np.argmin(np.round(ref, 6), axis=-1)
        assert np.array_equal(np.argmin(vol.costs[inner], axis=-1), best)
        unique = np.sum(np.round(ref, 6) == 0, axis=-1) == 1
        assert np.all(best[unique] == k)
        assert unique.mean() > 0.9


def test_out_of_range_rows_get_sentinel():
    img = textured(2)
    vol = matching_cost(img, img, ROW_STEP, RIG)
    for d in range(1, 9):
        assert np.all(vol.costs[:d, :, d] == 48.0)
        assert np.all(vol.costs[d:, :, d] < 48.0)


def test_cost_errors():
    with pytest.raises(DataError):
        matching_cost(textured(0), textured(0, 32, 64), ROW_STEP, RIG)
    with pytest.raises(DataError):
        matching_cost(textured(0, 3, 3), textured(0, 3, 3), ROW_STEP, RigConfig(0.26, 3, 3))
    with pytest.raises(ValueError):
        SgmParams(census_window=4)
    with pytest.raises(ValueError):
        SgmParams(p1=10, p2=5)
    with pytest.raises(ValueError):
        SgmParams(max_disparity=1.0).resolved(RIG)


def test_census_bits():
    gray = np.array([[0.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.0]])
    desc = census_transform(gray, 3)
    assert int(desc[1, 1]) == 0xFF
    assert int(desc[0, 0]) == 0


def test_zero_penalties_scale_costs_exactly():
    rng = np.random.default_rng(3)
    vol = CostVolume(rng.uniform(0, 20, (12, 16, 6)).astype(np.float32), 0.01)
    for n in (4, 8):
        agg = aggregate(vol, SgmParams(p1=0, p2=0, num_paths=n))
        np.testing.assert_array_equal(agg.costs, n * vol.costs.astype(np.float64))


def test_three_pixel_column_recurrence():
    costs = np.array([[1, 3], [4, 0], [2, 2]], dtype=np.float32)[:, None, :]
    agg = aggregate(CostVolume(costs, 0.1), SgmParams(p1=1, p2=5), paths=[(1, 0)])
    # L0 = (1,3); L1 = (4+1-1, 0+2-1); L2 = (2+2-1, 2+1-1)
    np.testing.assert_array_equal(agg.costs[:, 0, :], [[1, 3], [4, 1], [3, 2]])


def test_uniform_volume_stays_uniform():
    vol = CostVolume(np.full((6, 10, 5), 7.0, dtype=np.float32), 0.01)
    agg = aggregate(vol, SgmParams())
    assert np.all(agg.costs == agg.costs[..., :1])


def test_seam_choice_irrelevant():
    rng = np.random.default_rng(4)
    vol = CostVolume(rng.uniform(0, 30, (8, 24, 7)).astype(np.float32), 0.01)
    a = aggregate(vol, SgmParams(), seam=0).costs
    b = aggregate(vol, SgmParams(), seam=17).costs
    assert np.max(np.abs(a - b)) <= 1e-6 * max(1.0, np.max(np.abs(a)))


def test_wta_examples():
    c = np.full((1, 1, 8), 10.0)
    c[0, 0, 3] = 0.0
    assert wta_disparity(CostVolume(c, 0.01), SgmParams()).data[0, 0] == pytest.approx(0.03)
    c[0, 0, 2:5] = (4, 1, 4)
    assert wta_disparity(CostVolume(c, 0.01), SgmParams()).data[0, 0] == pytest.approx(0.03)
    c[0, 0, 2:5] = (4, 1, 2)
    lo, mid, hi = 4.0, 1.0, 2.0
    vertex = (lo - hi) / (2 * (lo + hi - 2 * mid))
    assert vertex == 0.25
    assert wta_disparity(CostVolume(c, 0.01), SgmParams()).data[0, 0] == pytest.approx(0.0325, rel=1e-6)


def test_wta_ties_and_uniqueness():
    c = np.full((1, 2, 6), 10.0)
    c[0, 0, [1, 4]] = 1.0
    c[0, 1, [1, 4]] = (1.0, 5.0)
    d = wta_disparity(CostVolume(c, 0.1), SgmParams()).data[0]
    assert d[0] == 0.0  # two equal far minima: ambiguous
    assert d[1] == pytest.approx(0.1)


def test_refine_examples():
    p = SgmParams()
    const = Panorama(np.full((5, 6), 0.2, dtype=np.float32), "disparity")
    np.testing.assert_array_equal(refine(const, p).data, const.data)
    salt = const.data.copy()
    salt[2, 3] = 0.9
    np.testing.assert_array_equal(refine(Panorama(salt, "disparity"), p).data, const.data)
    empty = Panorama(np.zeros((5, 6), dtype=np.float32), "disparity")
    assert np.all(refine(empty, p).data == 0)
    holes = const.data.copy()
    holes[1, 1] = 0
    out = refine(Panorama(holes, "disparity"), p).data
    assert out[1, 1] == 0 and out[1, 2] == pytest.approx(0.2)


def test_refine_wraps_columns():
    d = np.full((3, 6), 0.1, dtype=np.float32)
    d[:, 0] = 0.5
    d[:, 5] = 0.5
    # column 0 sees columns 5 and 1 through the wrap: two of three are 0.5
    assert refine(Panorama(d, "disparity"), SgmParams()).data[1, 0] == pytest.approx(0.5)


def test_baseline_zero_pair_gives_zero_disparity():
    rig = RigConfig(0.0, 64, 32)
    img = Panorama(np.random.default_rng(5).uniform(0, 1, (32, 64, 3)), "rgb")
    disp, depth = sgm_depth(img, img, rig, SgmParams(max_disparity=0.2))
    assert np.all(disp.data == 0)
    assert np.all(depth.data == 0)


def test_noise_pair_mostly_invalid():
    rng = np.random.default_rng(6)
    rig = RigConfig(0.26, 128, 64)
    top = Panorama(rng.uniform(0, 1, (64, 128, 3)), "rgb")
    bottom = Panorama(rng.uniform(0, 1, (64, 128, 3)), "rgb")
    disp, _ = sgm_depth(top, bottom, rig)
    assert np.mean(disp.data == 0) > 0.2


def test_rendered_scene_accuracy_and_range():
    # a larger room keeps the first-order disparity model accurate
    hall = SceneParams(room_width=(6.0, 10.0), room_depth=(6.0, 10.0), room_height=(3.6, 4.4))
    rig = RigConfig(0.26, 512, 256)
    s = render_stereo_sample(generate_scene(1, hall), rig)
    params = SgmParams().resolved(rig)
    disp, depth = sgm_depth(s.top_rgb, s.bottom_rgb, rig)
    assert np.all(disp.data >= 0) and np.all(disp.data <= params.max_disparity + 1e-6)
    step = params.max_disparity / (params.num_disp - 1)
    margin = int(np.ceil(params.max_disparity / rig.rad_per_row)) + 3
    d, gt = disp.data[margin:-margin], s.gt_disparity.data[margin:-margin]
    valid = d > 0
    assert valid.mean() > 0.9
    assert np.mean(np.abs(d[valid] - gt[valid]) <= step) > 0.85
    assert np.all((depth.data > 0) == (disp.data > 0))


def test_roll_equivariance():
    rig = RigConfig(0.26, 128, 64)
    s = render_stereo_sample(generate_scene(8), rig)
    shift = 32
    roll = lambda p: Panorama(np.roll(p.data, shift, axis=1), p.kind)
    base, _ = sgm_depth(s.top_rgb, s.bottom_rgb, rig)
    rolled, _ = sgm_depth(roll(s.top_rgb), roll(s.bottom_rgb), rig)
    assert np.max(np.abs(rolled.data - np.roll(base.data, shift, axis=1))) <= 1e-6
