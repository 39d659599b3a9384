"""Median-anchor fusion: rescale network depth so that its median agrees with
the (metric but sparse) SGM depth."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from panodepth.errors import DataError
from panodepth.panorama_io import Panorama

MODES = ("anchor_to_sgm", "paper_literal")
_ALIASES = {"anchor": "anchor_to_sgm", "literal": "paper_literal"}


@dataclass(frozen=True)
class FusionReport:
    median_network: float
    median_sgm: float
    scale: float
    valid_network: int
    valid_sgm: int
    mode: str

    def to_text(self) -> str:
        """key=value lines, one per field."""
        return "".join(f"{k}={v!r}\n" if isinstance(v, float) else f"{k}={v}\n"
                       for k, v in self.__dict__.items())


def _data(depth) -> np.ndarray:
    return np.asarray(depth.data if isinstance(depth, Panorama) else depth, dtype=np.float64)


def median_valid(depth, cap: float = 20.0) -> float:
    """Median of pixels with 0 < depth <= cap; lower middle value for even counts.

    >>> median_valid(np.array([1.0, 2.0, 3.0, 4.0]))
    2.0
    """
    d = _data(depth)
    vals = np.sort(d[(d > 0) & (d <= cap)])
    if vals.size == 0:
        raise DataError("no valid depth values below the cap")
    return float(vals[(vals.size - 1) // 2])


def fuse(network_depth, sgm_depth, cap: float = 20.0, mode: str = "anchor_to_sgm"):
    """Scale the whole network depth map by a single median ratio.

    In ``anchor_to_sgm`` mode the factor is median_sgm / median_network, so
    the fused median equals the SGM median.  ``paper_literal`` applies the
    reciprocal.  Invalid network pixels stay 0; SGM holes do not mask the
    output since SGM only contributes the anchor value.

    Returns:
        (fused depth Panorama, FusionReport)
    """
    mode = _ALIASES.get(mode, mode)
    if mode not in MODES:
        raise ValueError(f"unknown fusion mode {mode!r}")
    net = _data(network_depth)
    sgm = _data(sgm_depth)
    if net.shape != sgm.shape:
        raise DataError(f"network depth {net.shape} and SGM depth {sgm.shape} differ in shape")
    m_net = median_valid(net, cap)
    m_sgm = median_valid(sgm, cap)
    scale = m_sgm / m_net if mode == "anchor_to_sgm" else m_net / m_sgm
    fused = np.where(net > 0, net * scale, 0.0)
    report = FusionReport(m_net, m_sgm, scale,
                          int(np.count_nonzero((net > 0) & (net <= cap))),
                          int(np.count_nonzero((sgm > 0) & (sgm <= cap))), mode)
    return Panorama(fused.astype(np.float32), "depth"), report
