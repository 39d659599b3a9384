"""Training objectives: multi-scale supervised smooth-L1 and the unsupervised
photometric + edge-aware smoothness objective for a vertical panorama rig.

Every loss here is a single fused op with a hand-written backward so the
network graph stays small.  Predictions are (N, 1, h, w) tensors of angular
disparity; views are (N, 3, H, W) arrays in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from panodepth import autodiff as ad
from panodepth.autodiff import Tensor
from panodepth.errors import DataError
from panodepth.geometry import RigConfig

NUM_SCALES = 4


def scale_weights(num_scales: int = NUM_SCALES) -> list:
    """1 / 4^(S - i) for i = 1..S, coarsest first."""
    return [1.0 / 4.0 ** (num_scales - i) for i in range(1, num_scales + 1)]


@dataclass
class LossBreakdown:
    """A total loss plus the per-scale numbers it was assembled from.

    ``components`` maps a term name (``smooth_l1`` or ``rect``/``smooth``) to
    one float per scale, coarsest first.
    """

    total: Tensor
    per_scale: list
    components: dict
    weights: list
    lambda_smooth: float = 0.0

    @property
    def value(self) -> float:
        return float(self.total.data)

    def recombined(self) -> float:
        if "smooth_l1" in self.components:
            terms = self.components["smooth_l1"]
        else:
            terms = [r + self.lambda_smooth * s
                     for r, s in zip(self.components["rect"], self.components["smooth"])]
        return float(sum(w * t for w, t in zip(self.weights, terms)))


def _array(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def area_downsample(arr: np.ndarray, height: int, width: int) -> np.ndarray:
    """Block-average the last two axes down to (height, width)."""
    arr = np.asarray(arr)
    h, w = arr.shape[-2:]
    if h % height or w % width:
        raise DataError(f"cannot area-downsample {h}x{w} to {height}x{width}")
    fy, fx = h // height, w // width
    if fy == 1 and fx == 1:
        return arr
    blocks = arr.reshape(arr.shape[:-2] + (height, fy, width, fx))
    return blocks.mean(axis=(-3, -1))


def downsample_valid(gt: np.ndarray, height: int, width: int) -> np.ndarray:
    """Area average over valid (> 0) pixels only; blocks with none stay 0."""
    gt = np.asarray(gt, dtype=np.float64)
    valid = (gt > 0).astype(np.float64)
    total = area_downsample(gt * valid, height, width)
    count = area_downsample(valid, height, width)
    return np.where(count > 0, total / np.maximum(count, 1e-12), 0.0)


def smooth_l1(pred: Tensor, gt) -> Tensor:
    """Mean over valid pixels (gt > 0) of d^2 if d <= 1 else d, with d = |pred - gt|."""
    pred = ad.as_tensor(pred)
    g = np.asarray(_array(gt), dtype=pred.dtype)
    if g.shape != pred.shape:
        raise DataError(f"prediction {pred.shape} and ground truth {g.shape} differ")
    valid = g > 0
    n = int(valid.sum())
    if n == 0:
        raise DataError("smooth_l1: no valid ground-truth pixels")
    diff = pred.data - g
    delta = np.abs(diff)
    quad = delta <= 1.0
    per_px = np.where(quad, delta * delta, delta)
    out = np.asarray(per_px[valid].sum() / n, dtype=pred.dtype)

    def backward(gr):
        slope = np.where(quad, 2.0 * diff, np.sign(diff))
        return ((gr / n) * slope * valid).astype(pred.dtype),

    return ad.make_op(out, (pred,), backward)


def multiscale_supervised(preds, gt) -> LossBreakdown:
    """Weighted smooth-L1 over the four output scales against valid-area-averaged gt."""
    if len(preds) != NUM_SCALES:
        raise DataError(f"expected {NUM_SCALES} prediction scales, got {len(preds)}")
    gt = np.asarray(_array(gt), dtype=np.float64)
    if gt.ndim == 3:
        gt = gt[:, None]
    weights = scale_weights()
    terms, values = [], []
    for w, pred in zip(weights, preds):
        if pred.shape[:2] != gt.shape[:2]:
            raise DataError(f"prediction {pred.shape} does not match ground truth {gt.shape}")
        target = downsample_valid(gt, pred.shape[2], pred.shape[3])
        term = smooth_l1(pred, target)
        values.append(float(term.data))
        terms.append(ad.scale(term, w))
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return LossBreakdown(total, [w * v for w, v in zip(weights, values)],
                         {"smooth_l1": values}, weights)


def warp_vertical(source, disparity, rig: RigConfig) -> Tensor:
    """Resample ``source`` along columns at row ``y - disparity * h / fov_h``.

    With the bottom camera below the top one, a scene point seen at row y in
    the top panorama appears ``disparity`` radians higher (smaller row) in
    the bottom panorama, so warping the bottom view with the top-view
    disparity reconstructs the top view.  Bilinear weights in y, rows
    clamped at the poles; gradients reach both inputs.

    Args:
        source: (N, C, H, W) tensor or array.
        disparity: (N, 1, H, W) tensor of radians, all >= 0.
        rig: supplies ``fov_h``; the row pitch follows the tensor height.
    """
    source = ad.as_tensor(source)
    disparity = ad.as_tensor(disparity)
    n, c, h, w = source.shape
    if disparity.shape != (n, 1, h, w):
        raise DataError(f"disparity {disparity.shape} does not align with source {source.shape}")
    if np.any(disparity.data < 0):
        raise ValueError("warp_vertical needs non-negative disparity")
    rows_per_rad = h / rig.fov_h
    pos = np.arange(h, dtype=np.float64)[:, None] - disparity.data[:, 0].astype(np.float64) * rows_per_rad
    inside = (pos >= 0.0) & (pos <= h - 1.0)
    pos = np.clip(pos, 0.0, h - 1.0)
    y0 = np.minimum(np.floor(pos).astype(np.int64), h - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    dtype = np.result_type(source.dtype, disparity.dtype)
    frac = (pos - y0).astype(dtype)[:, None]
    idx0 = np.broadcast_to(y0[:, None], (n, c, h, w))
    idx1 = np.broadcast_to(y1[:, None], (n, c, h, w))
    s0 = np.take_along_axis(source.data, idx0, axis=2)
    s1 = np.take_along_axis(source.data, idx1, axis=2)
    out = (1 - frac) * s0 + frac * s1

    def backward(g):
        gs = gd = None
        if source.requires_grad:
            # Scatter back along columns with one bincount over flat indices.
            base = (np.arange(n * c)[:, None, None] * h).reshape(n, c, 1, 1)
            cols = np.arange(w)
            flat0 = ((base + idx0) * w + cols).ravel()
            flat1 = ((base + idx1) * w + cols).ravel()
            size = n * c * h * w
            acc = np.bincount(flat0, weights=((1 - frac) * g).ravel(), minlength=size)
            acc += np.bincount(flat1, weights=(frac * g).ravel(), minlength=size)
            gs = acc.reshape(source.shape).astype(source.dtype)
        if disparity.requires_grad:
            slope = (s1 - s0) * g
            gd = (-rows_per_rad * slope.sum(axis=1, keepdims=True) * inside[:, None]).astype(disparity.dtype)
        return gs, gd

    return ad.make_op(out.astype(dtype), (source, disparity), backward)


def mean_abs_diff(a, b) -> Tensor:
    """Mean of |a - b| as a scalar tensor; either side may be a plain array."""
    a, b = ad.as_tensor(a), ad.as_tensor(b)
    if a.shape != b.shape:
        raise DataError(f"shape mismatch: {a.shape} vs {b.shape}")
    diff = a.data - b.data
    n = diff.size
    out = np.asarray(np.abs(diff).mean(), dtype=diff.dtype)

    def backward(g):
        s = (g / n) * np.sign(diff)
        return s.astype(a.dtype), (-s).astype(b.dtype)

    return ad.make_op(out, (a, b), backward)


def reconstruction_loss(target_view, source_view, disparity, rig: RigConfig) -> Tensor:
    """L1 photometric error between ``target_view`` and the warped ``source_view``."""
    target = ad.as_tensor(target_view)
    if target.shape != ad.as_tensor(source_view).shape:
        raise DataError("target and source views differ in shape")
    return mean_abs_diff(target, warp_vertical(source_view, disparity, rig))


def smoothness_loss(disparity, rgb) -> Tensor:
    """Edge-aware first-order smoothness.

    mean |dx d| * exp(-|dx I|) + mean |dy d| * exp(-|dy I|), where |.| on the
    image is the mean absolute difference over channels.  Horizontal
    differences wrap; vertical ones skip the last row.
    """
    d = ad.as_tensor(disparity)
    img = np.asarray(_array(rgb), dtype=np.float64)
    if img.ndim != 4 or img.shape[0] != d.shape[0] or img.shape[2:] != d.shape[2:]:
        raise DataError(f"image {img.shape} does not align with disparity {d.shape}")
    wx = np.exp(-np.abs(np.roll(img, -1, axis=3) - img).mean(axis=1, keepdims=True))
    wy = np.exp(-np.abs(img[:, :, 1:] - img[:, :, :-1]).mean(axis=1, keepdims=True))
    dd = d.data.astype(np.float64)
    gx = np.roll(dd, -1, axis=3) - dd
    gy = dd[:, :, 1:] - dd[:, :, :-1]
    nx, ny = gx.size, max(gy.size, 1)
    value = (np.abs(gx) * wx).sum() / nx + (np.abs(gy) * wy).sum() / ny
    out = np.asarray(value, dtype=d.dtype)

    def backward(g):
        sx = g * np.sign(gx) * wx / nx
        sy = g * np.sign(gy) * wy / ny
        grad = np.roll(sx, 1, axis=3) - sx
        grad[:, :, 1:] += sy
        grad[:, :, :-1] -= sy
        return grad.astype(d.dtype),

    return ad.make_op(out, (d,), backward)


def unsupervised_loss(preds, top_view, bottom_view, rig: RigConfig, lambda_smooth: float = 1.0) -> LossBreakdown:
    """Per scale: warp bottom toward top with the predicted top disparity,
    L1 photometric error plus ``lambda_smooth`` times edge-aware smoothness."""
    if len(preds) != NUM_SCALES:
        raise DataError(f"expected {NUM_SCALES} prediction scales, got {len(preds)}")
    top = np.asarray(_array(top_view))
    bottom = np.asarray(_array(bottom_view))
    if top.shape != bottom.shape or top.ndim != 4:
        raise DataError(f"views must be matching (N, C, H, W) arrays, got {top.shape} and {bottom.shape}")
    weights = scale_weights()
    rects, smooths, terms = [], [], []
    for w, pred in zip(weights, preds):
        if pred.shape[0] != top.shape[0]:
            raise DataError("batch size of predictions and views differ")
        h, wd = pred.shape[2:]
        t = area_downsample(top, h, wd).astype(pred.dtype)
        b = area_downsample(bottom, h, wd).astype(pred.dtype)
        rect = reconstruction_loss(t, b, pred, rig)
        smooth = smoothness_loss(pred, t)
        rects.append(float(rect.data))
        smooths.append(float(smooth.data))
        terms.append(ad.scale(rect + ad.scale(smooth, lambda_smooth), w))
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    per_scale = [w * (r + lambda_smooth * s) for w, r, s in zip(weights, rects, smooths)]
    return LossBreakdown(total, per_scale, {"rect": rects, "smooth": smooths}, weights, lambda_smooth)
