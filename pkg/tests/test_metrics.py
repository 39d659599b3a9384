import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from panodepth.errors import DataError
from panodepth.metrics import COLUMNS, compute_metrics, valid_mask


def naive(pred, gt, cap=20.0):
    """Per-pixel loops with no shared code."""
    n = 0
    s_abs = s_sq = s_se = s_log = 0.0
    hits = [0, 0, 0]
    for p, g in zip(np.ravel(pred).tolist(), np.ravel(gt).tolist()):
        if not (0 < g <= cap and 0 < p <= cap):
            continue
        n += 1
        s_abs += abs(p - g) / g
        s_sq += (p - g) ** 2 / g
        s_se += (p - g) ** 2
        s_log += (math.log(p) - math.log(g)) ** 2
        ratio = max(p / g, g / p)
        for k in range(3):
            if ratio < 1.25 ** (k + 1):
                hits[k] += 1
    return [s_abs / n, s_sq / n, math.sqrt(s_se / n), math.sqrt(s_log / n)] + [h / n for h in hits]


def test_matches_naive_reference():
    rng = np.random.default_rng(0)
    for _ in range(100):
        gt = rng.uniform(0.3, 25.0, (16, 32))
        pred = gt * rng.lognormal(0, 0.3, (16, 32))
        pred[rng.random((16, 32)) < 0.05] = 0.0
        report = compute_metrics(pred, gt)
        np.testing.assert_allclose([getattr(report, c) for c in COLUMNS], naive(pred, gt), rtol=1e-6, atol=1e-12)


def test_identity():
    gt = np.random.default_rng(1).uniform(1, 10, (4, 8))
    r = compute_metrics(gt, gt)
    assert (r.abs_rel, r.sq_rel, r.rmse, r.rmse_log, r.acc_1, r.acc_2, r.acc_3) == (0, 0, 0, 0, 1, 1, 1)
    assert r.valid_pixel_count == 32


def test_single_pixel_example():
    r = compute_metrics(np.array([[2.0]]), np.array([[1.0]]))
    assert (r.abs_rel, r.sq_rel, r.rmse) == (1.0, 1.0, 1.0)
    assert r.rmse_log == pytest.approx(0.6931471805599453)
    assert (r.acc_1, r.acc_2, r.acc_3) == (0.0, 0.0, 0.0)


def test_ratio_boundary_is_strict():
    gt = np.random.default_rng(2).uniform(1, 10, (16, 32))
    r = compute_metrics(1.25 * gt, gt)
    assert r.abs_rel == pytest.approx(0.25)
    assert (r.acc_1, r.acc_2, r.acc_3) == (0.0, 1.0, 1.0)
    under = compute_metrics(gt, 1.25 * gt, cap=1e9)
    assert (under.acc_1, under.acc_2) == (0.0, 1.0)


def test_valid_mask():
    gt = np.array([[25.0, 5.0, 5.0, 20.0]])
    pred = np.array([[5.0, 0.0, 5.0, 20.0]])
    assert valid_mask(gt, pred).tolist() == [[False, False, True, True]]
    with pytest.raises(DataError):
        compute_metrics(np.zeros((2, 2)), np.ones((2, 2)))
    with pytest.raises(DataError):
        valid_mask(np.ones((2, 2)), np.ones((2, 3)))


def test_text_outputs():
    r = compute_metrics(np.array([[2.0]]), np.array([[1.0]]))
    assert "abs_rel=1.0\n" in r.to_text()
    lines = r.table("net").splitlines()
    assert len(lines) == 2 and "Abs Rel" in lines[0] and lines[1].startswith("net")


positive = st.floats(0.05, 30.0, allow_nan=False)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (4, 6), elements=positive), arrays(np.float64, (4, 6), elements=positive))
def test_monotone_accuracy_and_jensen(pred, gt):
    if not valid_mask(gt, pred).any():
        return
    r = compute_metrics(pred, gt)
    assert r.acc_1 <= r.acc_2 <= r.acc_3
    m = valid_mask(gt, pred)
    assert r.rmse >= np.mean(np.abs(pred[m] - gt[m])) - 1e-12
    assert min(r.abs_rel, r.sq_rel, r.rmse, r.rmse_log) >= 0
