"""Panoramic depth estimation for vertically stacked equirectangular rigs."""

from panodepth.errors import DataError, NumericError, PanoDepthError
from panodepth.geometry import RigConfig

__all__ = ["DataError", "NumericError", "PanoDepthError", "RigConfig"]
__version__ = "0.1.0"
