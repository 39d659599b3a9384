"""Spherical geometry for a vertically displaced equirectangular stereo rig.

Conventions:
  - pixel x grows to the right, y grows downward;
  - longitude = x * fov_w / w - fov_w / 2 (no half-pixel offset);
  - latitude  = y * fov_h / h - fov_h / 2, so the top row looks "up" (-pi/2);
  - the second camera of the rig sits ``baseline`` meters further along +y
    (downward), so corresponding points share a column and only their
    latitude differs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

INVALID_DEPTH = 0.0
DISPARITY_EPS = 1e-6
_RANGE_SLACK = 1e-12


@dataclass(frozen=True)
class RigConfig:
    """Vertical stereo rig and panorama raster description.

    ``baseline`` may be zero to describe the degenerate rig used in sanity
    checks; every other field must be strictly valid.
    """

    baseline: float
    width: int
    height: int
    fov_w: float = 2.0 * math.pi
    fov_h: float = math.pi

    def __post_init__(self):
        if not (self.baseline >= 0.0 and math.isfinite(self.baseline)):
            raise ValueError(f"baseline must be >= 0, got {self.baseline}")
        if self.width < 2 or self.height < 2:
            raise ValueError(f"panorama must be at least 2x2, got {self.width}x{self.height}")
        if not 0.0 < self.fov_w <= 2.0 * math.pi + _RANGE_SLACK:
            raise ValueError(f"fov_w out of range: {self.fov_w}")
        if not 0.0 < self.fov_h <= math.pi + _RANGE_SLACK:
            raise ValueError(f"fov_h out of range: {self.fov_h}")

    @property
    def rad_per_row(self) -> float:
        return self.fov_h / self.height

    @property
    def rad_per_col(self) -> float:
        return self.fov_w / self.width

    def with_size(self, width: int, height: int) -> "RigConfig":
        return RigConfig(self.baseline, width, height, self.fov_w, self.fov_h)


@dataclass(frozen=True)
class AngleMatrix:
    """Per-pixel cos(latitude) factors plus the row/column angle lookups.

    Attributes:
        values: (H, W) array of cos(latitude).
        lon: (W,) longitude of each column in radians.
        lat: (H,) latitude of each row in radians, spanning
            [-fov_h/2, +fov_h/2] inclusive so the first and last rows hold
            cos(fov_h/2).
    """

    values: np.ndarray
    lon: np.ndarray
    lat: np.ndarray


def _check_range(name, value, lo, hi):
    arr = np.asarray(value, dtype=np.float64)
    slack = _RANGE_SLACK * max(1.0, abs(lo), abs(hi))
    if not np.all(np.isfinite(arr)) or np.any(arr < lo - slack) or np.any(arr > hi + slack):
        raise ValueError(f"{name} outside [{lo}, {hi}]")


def pixel_to_lonlat(x, y, rig: RigConfig):
    """Map continuous pixel coordinates to (longitude, latitude) in radians.

    Accepts scalars or arrays; 0 <= x <= width and 0 <= y <= height.
    """
    _check_range("x", x, 0.0, rig.width)
    _check_range("y", y, 0.0, rig.height)
    lon = np.asarray(x, dtype=np.float64) * rig.fov_w / rig.width - rig.fov_w / 2.0
    lat = np.asarray(y, dtype=np.float64) * rig.fov_h / rig.height - rig.fov_h / 2.0
    if lon.ndim == 0 and lat.ndim == 0:
        return float(lon), float(lat)
    return lon, lat


def lonlat_to_pixel(lon, lat, rig: RigConfig):
    """Inverse of :func:`pixel_to_lonlat`."""
    _check_range("longitude", lon, -rig.fov_w / 2.0, rig.fov_w / 2.0)
    _check_range("latitude", lat, -rig.fov_h / 2.0, rig.fov_h / 2.0)
    x = (np.asarray(lon, dtype=np.float64) + rig.fov_w / 2.0) * rig.width / rig.fov_w
    y = (np.asarray(lat, dtype=np.float64) + rig.fov_h / 2.0) * rig.height / rig.fov_h
    if x.ndim == 0 and y.ndim == 0:
        return float(x), float(y)
    return x, y


def angle_matrix(rig: RigConfig) -> AngleMatrix:
    """Build the cos(latitude) matrix used to turn angular disparity into depth.

    Rows run from latitude -fov_h/2 (first row) to +fov_h/2 (last row), the
    middle row of an odd-height raster sits exactly on the equator, and the
    matrix is an exact vertical mirror of itself.
    """
    h, w = rig.height, rig.width
    t = 2.0 * np.arange(h, dtype=np.float64) / (h - 1) - 1.0
    lat = 0.5 * rig.fov_h * t
    half = (h + 1) // 2
    lat[h - half:] = -lat[:half][::-1]
    col = np.cos(lat)
    values = np.repeat(col[:, None], w, axis=1)
    lon = np.arange(w, dtype=np.float64) * rig.fov_w / w - rig.fov_w / 2.0
    return AngleMatrix(values=values, lon=lon, lat=lat)


def angular_disparity(lat_a, lat_b):
    """Absolute latitude difference between two corresponding points."""
    d = np.abs(np.asarray(lat_a, dtype=np.float64) - np.asarray(lat_b, dtype=np.float64))
    return float(d) if d.ndim == 0 else d


def disparity_to_depth(disparity, cos_lat, rig: RigConfig, eps: float = DISPARITY_EPS):
    """depth = baseline * cos_lat / disparity.

    Disparities below ``eps`` (including the 0 invalid marker) map to the
    invalid depth 0.0 instead of infinity.
    """
    disp = np.asarray(disparity, dtype=np.float64)
    c = np.asarray(cos_lat, dtype=np.float64)
    if np.any(c < -_RANGE_SLACK) or np.any(c > 1.0 + _RANGE_SLACK):
        raise ValueError("cos_lat must lie in [0, 1]")
    ok = disp >= eps
    depth = np.where(ok, rig.baseline * c / np.where(ok, disp, 1.0), INVALID_DEPTH)
    return float(depth) if depth.ndim == 0 else depth


def depth_to_disparity(depth, cos_lat, rig: RigConfig):
    """disparity = baseline * cos_lat / depth, for strictly positive depth."""
    d = np.asarray(depth, dtype=np.float64)
    if np.any(~(d > 0.0)):
        raise ValueError("depth must be > 0")
    disp = rig.baseline * np.asarray(cos_lat, dtype=np.float64) / d
    return float(disp) if disp.ndim == 0 else disp


def default_max_disparity(rig: RigConfig, min_depth: float = 0.5) -> float:
    """Largest disparity worth searching: baseline / min_depth, capped at fov_h/4."""
    return min(rig.baseline / min_depth, rig.fov_h / 4.0)
