import numpy as np
import pytest

from panodepth.errors import DataError
from panodepth.fusion import fuse, median_valid
from panodepth.metrics import compute_metrics
from panodepth.panorama_io import Panorama


def pano(x):
    return Panorama(np.asarray(x, dtype=np.float32), "depth")


def test_anchor_and_literal_modes():
    net = pano([[1.0, 2.0, 3.0]])
    sgm = pano([[3.0, 4.0, 5.0]])
    fused, report = fuse(net, sgm)
    assert report.scale == 2.0 and report.mode == "anchor_to_sgm"
    assert median_valid(fused) == 4.0
    _, literal = fuse(net, sgm, mode="literal")
    assert literal.scale == 0.5 and literal.mode == "paper_literal"


def test_median_lower_middle_and_cap():
    assert median_valid(np.array([4.0, 1.0, 3.0, 2.0])) == 2.0
    assert median_valid(np.array([0.0, 1.0, 30.0, 2.0, 3.0])) == 2.0
    with pytest.raises(DataError):
        median_valid(np.array([0.0, 25.0]))


def test_invalid_network_pixels_stay_invalid():
    net = pano([[0.0, 2.0, 4.0]])
    sgm = pano([[0.0, 0.0, 6.0]])
    fused, report = fuse(net, sgm)
    assert fused.data[0, 0] == 0.0
    # SGM holes do not mask the output
    assert fused.data[0, 1] > 0
    assert (report.valid_network, report.valid_sgm) == (2, 1)


def test_fused_median_matches_anchor():
    rng = np.random.default_rng(0)
    net = rng.uniform(0.5, 8.0, (32, 64))
    sgm = rng.uniform(0.5, 12.0, (32, 64))
    sgm[rng.random((32, 64)) < 0.3] = 0.0
    fused, report = fuse(pano(net), pano(sgm))
    # exact scalar identity in double precision
    assert report.median_network * report.scale == pytest.approx(report.median_sgm, rel=1e-12)
    # the fused raster is stored as float32
    valid = (net > 0) & (net <= 20)
    fused_med = float(np.sort(fused.data[valid].astype(np.float64))[(valid.sum() - 1) // 2])
    assert fused_med == pytest.approx(report.median_sgm, rel=1e-7)


@pytest.mark.parametrize("k", [0.25, 0.5, 2.0, 3.0])
def test_scale_repair_exact(k):
    gt = np.random.default_rng(1).uniform(1.0, 6.0, (16, 32)).astype(np.float32)
    fused, _ = fuse(pano(k * gt), pano(gt))
    assert compute_metrics(fused, gt).abs_rel < 1e-6


def test_errors():
    with pytest.raises(DataError):
        fuse(pano([[1.0]]), pano([[1.0, 2.0]]))
    with pytest.raises(ValueError):
        fuse(pano([[1.0]]), pano([[1.0]]), mode="inverse")


def test_report_text():
    _, report = fuse(pano([[1.0, 2.0, 3.0]]), pano([[3.0, 4.0, 5.0]]))
    text = report.to_text()
    assert "scale=2.0\n" in text and "mode=anchor_to_sgm\n" in text
