"""Semi-Global Matching along longitude columns of a vertical panorama pair.

The pipeline is the classic four steps: matching cost, multi-path cost
aggregation, winner-take-all disparity with sub-level refinement, and median
filtering.  Disparity levels are angular: level ``d`` compares the top pixel
at latitude ``lat`` with the bottom pixel at ``lat - d * step``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.ndimage import uniform_filter

from panodepth.errors import DataError
from panodepth.geometry import RigConfig, angle_matrix, default_max_disparity, disparity_to_depth
from panodepth.panorama_io import Panorama

LUMA = (0.299, 0.587, 0.114)
PATHS_4 = ((0, 1), (0, -1), (1, 0), (-1, 0))
PATHS_8 = PATHS_4 + ((1, 1), (1, -1), (-1, 1), (-1, -1))


@dataclass(frozen=True)
class SgmParams:
    cost: str = "census"
    census_window: int = 5
    sad_window: int = 5
    p1: float = 8.0
    p2: float = 96.0
    num_paths: int = 8
    max_disparity: Optional[float] = None  # radians; None derives it from the rig
    num_disp: int = 64
    uniqueness: float = 0.95
    median_window: int = 3

    def __post_init__(self):
        if self.cost not in ("census", "sad"):
            raise ValueError(f"unknown cost {self.cost!r}")
        for name in ("census_window", "sad_window", "median_window"):
            v = getattr(self, name)
            if v < 1 or v % 2 == 0:
                raise ValueError(f"{name} must be a positive odd integer")
        if not (0 <= self.p1 <= self.p2):
            raise ValueError("penalties must satisfy 0 <= p1 <= p2")
        if self.num_paths not in (4, 8):
            raise ValueError("num_paths must be 4 or 8")
        if self.num_disp < 2:
            raise ValueError("num_disp must be >= 2")

    def resolved(self, rig: RigConfig) -> "SgmParams":
        """Fill in ``max_disparity`` from the rig and check it against fov_h/4."""
        max_disp = self.max_disparity
        if max_disp is None:
            max_disp = default_max_disparity(rig)
        if not 0 < max_disp <= rig.fov_h / 4.0 + 1e-12:
            raise ValueError(f"max_disparity {max_disp} outside (0, fov_h/4]")
        return replace(self, max_disparity=max_disp)


@dataclass
class CostVolume:
    """(H, W, D) matching costs; level d means ``d * step`` radians."""

    costs: np.ndarray
    step: float

    @property
    def height(self):
        return self.costs.shape[0]

    @property
    def width(self):
        return self.costs.shape[1]

    @property
    def num_disp(self):
        return self.costs.shape[2]


def to_gray(image) -> np.ndarray:
    data = image.data if isinstance(image, Panorama) else np.asarray(image)
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 3:
        data = data @ np.asarray(LUMA)
    return data


def census_transform(gray: np.ndarray, window: int) -> np.ndarray:
    """Census bit string per pixel (neighbor darker than center -> 1).

    Columns wrap around the panorama; rows are edge-clamped.
    """
    r = window // 2
    if window * window - 1 > 63:
        raise ValueError("census window too large for 64-bit descriptors")
    padded = np.pad(gray, ((r, r), (0, 0)), mode="edge")
    h, w = gray.shape
    desc = np.zeros((h, w), dtype=np.uint64)
    for dy in range(-r, r + 1):
        rows = padded[r + dy:r + dy + h]
        for dx in range(-r, r + 1):
            if dy == 0 and dx == 0:
                continue
            neighbor = np.roll(rows, -dx, axis=1)
            desc = (desc << np.uint64(1)) | (neighbor < gray).astype(np.uint64)
    return desc


def _sample_rows(img: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Linear interpolation of ``img`` at fractional (clamped) row positions."""
    h = img.shape[0]
    ys = np.clip(rows, 0.0, h - 1.0)
    y0 = np.floor(ys).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    wgt = (ys - y0)[:, None]
    return (1.0 - wgt) * img[y0] + wgt * img[y1]


def matching_cost(top, bottom, params: SgmParams, rig: RigConfig) -> CostVolume:
    """Build the (H, W, D) cost volume between two grayscale panoramas."""
    top = to_gray(top)
    bottom = to_gray(bottom)
    if top.shape != bottom.shape:
        raise DataError(f"image shapes differ: {top.shape} vs {bottom.shape}")
    if top.shape != (rig.height, rig.width):
        raise DataError(f"images are {top.shape}, rig expects {(rig.height, rig.width)}")
    params = params.resolved(rig)
    h, w = top.shape
    window = params.census_window if params.cost == "census" else params.sad_window
    if window > h or window > w:
        raise DataError(f"window {window} larger than image {h}x{w}")
    step = params.max_disparity / (params.num_disp - 1)
    rows_per_level = step / rig.rad_per_row
    y = np.arange(h, dtype=np.float64)
    costs = np.empty((h, w, params.num_disp), dtype=np.float32)

    if params.cost == "census":
        bits = window * window - 1
        sentinel = 2.0 * bits
        ct = census_transform(top, window)
        cb = census_transform(bottom, window)
        # Hamming cost at every whole-row shift, then linear in between.
        max_shift = int(np.ceil((params.num_disp - 1) * rows_per_level)) + 1
        by_row = np.full((max_shift + 1, h, w), sentinel, dtype=np.float64)
        for r in range(min(max_shift + 1, h)):
            by_row[r, r:] = np.bitwise_count(ct[r:] ^ cb[:h - r])
        for d in range(params.num_disp):
            s = d * rows_per_level
            r0 = int(np.floor(s))
            frac = s - r0
            plane = by_row[r0] if frac == 0.0 else (1.0 - frac) * by_row[r0] + frac * by_row[r0 + 1]
            plane = plane.astype(np.float32)
            plane[y - s < 0.0] = sentinel
            costs[:, :, d] = plane
    else:
        sentinel = 2.0 * window * window
        for d in range(params.num_disp):
            src = y - d * rows_per_level
            diff = np.abs(top - _sample_rows(bottom, src))
            sad = uniform_filter(diff, size=window, mode=("nearest", "wrap")) * (window * window)
            sad[src < 0.0] = sentinel
            costs[:, :, d] = sad
    return CostVolume(costs, step)


def _path_step(prev: np.ndarray, cost: np.ndarray, p1: float, p2: float) -> np.ndarray:
    m = prev.min(axis=-1, keepdims=True)
    best = prev.copy()
    np.minimum(best[..., 1:], prev[..., :-1] + p1, out=best[..., 1:])
    np.minimum(best[..., :-1], prev[..., 1:] + p1, out=best[..., :-1])
    np.minimum(best, m + p2, out=best)
    return cost + (best - m)


def _aggregate_path(c: np.ndarray, dy: int, dx: int, p1, p2, seam: int, max_laps: int = 32) -> np.ndarray:
    h, w, _ = c.shape
    out = np.empty_like(c)
    if dy == 0:
        # Cyclic rows: warm-up laps from the seam until the state there stops
        # changing, then a recorded lap.  A converged state makes the result
        # independent of the seam column.
        cols = [(seam + dx * k) % w for k in range(w)]
        prev = c[:, cols[0], :]
        for col in cols[1:]:
            prev = _path_step(prev, c[:, col, :], p1, p2)
        for _ in range(max_laps):
            start = prev
            for col in cols:
                prev = _path_step(prev, c[:, col, :], p1, p2)
            if np.array_equal(prev, start):
                break
        for col in cols:
            prev = _path_step(prev, c[:, col, :], p1, p2)
            out[:, col, :] = prev
        return out
    rows = range(h) if dy > 0 else range(h - 1, -1, -1)
    prev = None
    for y in rows:
        if prev is None:
            prev = c[y]
        else:
            if dx:
                prev = np.roll(prev, dx, axis=0)
            prev = _path_step(prev, c[y], p1, p2)
        out[y] = prev
    return out


def aggregate(volume: CostVolume, params: SgmParams, paths=None, seam: int = 0) -> CostVolume:
    """Sum of SGM path costs.

    ``paths`` is a sequence of (dy, dx) unit steps; by default the 4 or 8
    standard directions.  Horizontal paths wrap around the panorama,
    vertical paths stop at the poles, and diagonal paths wrap horizontally.
    """
    if paths is None:
        paths = PATHS_8 if params.num_paths == 8 else PATHS_4
    c = volume.costs
    if np.any(c < 0):
        raise ValueError("costs must be non-negative")
    # float64 keeps the sum of float32 path costs exact for up to 8 paths
    total = np.zeros(c.shape, dtype=np.float64)
    for dy, dx in paths:
        total += _aggregate_path(c, dy, dx, params.p1, params.p2, seam % volume.width)
    return CostVolume(total, volume.step)


def wta_disparity(agg: CostVolume, params: SgmParams) -> Panorama:
    """Winner-take-all disparity in radians with parabolic sub-level refinement.

    Pixels whose best cost is not clearly below the best cost outside the
    winner's +-1 neighborhood (``best >= uniqueness * second``) become 0.
    """
    c = agg.costs.astype(np.float64)
    h, w, nd = c.shape
    idx = np.argmin(c, axis=-1)
    best = np.take_along_axis(c, idx[..., None], axis=-1)[..., 0]
    interior = (idx > 0) & (idx < nd - 1)
    lo = np.take_along_axis(c, np.clip(idx - 1, 0, nd - 1)[..., None], axis=-1)[..., 0]
    hi = np.take_along_axis(c, np.clip(idx + 1, 0, nd - 1)[..., None], axis=-1)[..., 0]
    denom = 2.0 * (lo + hi - 2.0 * best)
    ok = interior & (denom > 0)
    offset = np.where(ok, (lo - hi) / np.where(ok, denom, 1.0), 0.0)
    levels = np.arange(nd)[None, None, :]
    far = np.abs(levels - idx[..., None]) > 1
    second = np.where(far, c, np.inf).min(axis=-1)
    unique = best < params.uniqueness * second
    disp = np.where(unique, (idx + offset) * agg.step, 0.0)
    return Panorama(np.maximum(disp, 0.0).astype(np.float32), "disparity")


def refine(disp: Panorama, params: SgmParams) -> Panorama:
    """Median filter over valid (> 0) neighbors; invalid pixels stay invalid.

    Columns wrap, rows clamp; with an even number of valid neighbors the
    lower middle value is taken.
    """
    d = disp.data.astype(np.float64)
    r = params.median_window // 2
    if r == 0:
        return Panorama(disp.data.copy(), "disparity")
    vals = np.where(d > 0, d, np.nan)
    padded = np.pad(vals, ((r, r), (0, 0)), mode="edge")
    h, w = d.shape
    stack = np.stack([np.roll(padded[r + dy:r + dy + h], -dx, axis=1)
                      for dy in range(-r, r + 1) for dx in range(-r, r + 1)], axis=-1)
    stack.sort(axis=-1)
    count = np.sum(~np.isnan(stack), axis=-1)
    pick = np.maximum((count - 1) // 2, 0)
    med = np.take_along_axis(stack, pick[..., None], axis=-1)[..., 0]
    out = np.where((d > 0) & (count > 0), med, 0.0)
    return Panorama(out.astype(np.float32), "disparity")


def sgm_depth(top, bottom, rig: RigConfig, params: SgmParams = SgmParams(), seam: int = 0):
    """Full pipeline; returns ``(disparity, depth)`` panoramas (0 = invalid)."""
    volume = matching_cost(top, bottom, params, rig)
    agg = aggregate(volume, params, seam=seam)
    disp = refine(wta_disparity(agg, params), params)
    depth = disparity_to_depth(disp.data, angle_matrix(rig).values, rig)
    return disp, Panorama(depth.astype(np.float32), "depth")
