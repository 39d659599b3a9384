"""Standard depth-estimation error metrics over a capped valid mask."""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from panodepth.errors import DataError
from panodepth.panorama_io import Panorama

DEFAULT_CAP = 20.0
COLUMNS = ("abs_rel", "sq_rel", "rmse", "rmse_log", "acc_1", "acc_2", "acc_3")
_HEADERS = ("Abs Rel", "Sq Rel", "RMSE", "RMSE log", "d<1.25", "d<1.25^2", "d<1.25^3")


@dataclass(frozen=True)
class MetricsReport:
    abs_rel: float
    sq_rel: float
    rmse: float
    rmse_log: float
    acc_1: float
    acc_2: float
    acc_3: float
    valid_pixel_count: int

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def to_text(self) -> str:
        """key=value lines for diffing."""
        return "".join(f"{k}={v!r}\n" for k, v in self.as_dict().items())

    def table(self, label: str = "") -> str:
        """Two-line aligned table, error columns first, then accuracies."""
        width = max(len(label), 5)
        head = " " * width + "".join(f"{h:>10}" for h in _HEADERS)
        row = f"{label:<{width}}" + "".join(f"{getattr(self, c):>10.4f}" for c in COLUMNS)
        return f"{head}\n{row}\n"


def _data(x) -> np.ndarray:
    return np.asarray(x.data if isinstance(x, Panorama) else x, dtype=np.float64)


def valid_mask(gt, pred, cap: float = DEFAULT_CAP) -> np.ndarray:
    """True where both maps lie in (0, cap]."""
    g, p = _data(gt), _data(pred)
    if g.shape != p.shape:
        raise DataError(f"prediction {p.shape} and ground truth {g.shape} differ in shape")
    return (g > 0) & (g <= cap) & (p > 0) & (p <= cap)


def compute_metrics(pred, gt, cap: float = DEFAULT_CAP) -> MetricsReport:
    """Abs Rel, Sq Rel, RMSE, RMSE log and the three threshold accuracies.

    Accuracy uses the symmetric ratio max(p/g, g/p) with a strict ``<``
    against 1.25, 1.25^2 and 1.25^3.
    """
    mask = valid_mask(gt, pred, cap)
    n = int(mask.sum())
    if n == 0:
        raise DataError("no pixels are valid in both maps")
    p = _data(pred)[mask]
    g = _data(gt)[mask]
    diff = p - g

    def within(t):
        # max(p/g, g/p) < t, cross-multiplied so p == t * g lands exactly on the boundary
        return float(np.mean((p < t * g) & (g < t * p)))

    return MetricsReport(
        abs_rel=float(np.mean(np.abs(diff) / g)),
        sq_rel=float(np.mean(diff ** 2 / g)),
        rmse=float(np.sqrt(np.mean(diff ** 2))),
        rmse_log=float(np.sqrt(np.mean((np.log(p) - np.log(g)) ** 2))),
        acc_1=within(1.25),
        acc_2=within(1.25 ** 2),
        acc_3=within(1.25 ** 3),
        valid_pixel_count=n,
    )
