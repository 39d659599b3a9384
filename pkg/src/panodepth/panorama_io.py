"""Lossless file formats: PPM (P6) images, PFM (Pf) float maps, model
checkpoints and ``key = value`` run configuration files."""

from __future__ import annotations

import math
import os
import re
from dataclasses import dataclass, fields, replace

import numpy as np

from panodepth.errors import DataError

KINDS = ("rgb", "gray", "depth", "disparity")
PHASES = ("untrained", "unsupervised", "supervised", "fused")
CHECKPOINT_MAGIC = "panodepth-checkpoint"
CHECKPOINT_VERSION = 1


class FormatError(DataError):
    """A file does not follow the expected layout."""


@dataclass
class Panorama:
    """An equirectangular raster.

    ``data`` has shape (H, W) for single-channel maps and (H, W, 3) for RGB.
    Color and gray values live in [0, 1]; depth and disparity maps use 0 as
    the invalid marker.
    """

    data: np.ndarray
    kind: str = "depth"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown panorama kind {self.kind!r}")
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim == 3 and self.data.shape[2] == 1:
            self.data = self.data[:, :, 0]
        expected = 3 if self.kind == "rgb" else 1
        if self.channels != expected:
            raise ValueError(f"{self.kind} panorama needs {expected} channel(s), got {self.channels}")
        if self.kind in ("rgb", "gray") and self.data.size and (self.data.min() < 0.0 or self.data.max() > 1.0):
            raise ValueError("color values must lie in [0, 1]")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.data.ndim == 2 else self.data.shape[2]


# -- PPM -----------------------------------------------------------------------

_WS = b" \t\r\n"


def _header_tokens(buf: bytes, count: int, start: int):
    """Read ``count`` whitespace-separated ASCII tokens, skipping # comments.

    Returns the tokens and the offset just past the single whitespace byte
    that terminates the last one.
    """
    tokens = []
    pos = start
    n = len(buf)
    while len(tokens) < count:
        while pos < n and buf[pos] in _WS:
            pos += 1
        if pos < n and buf[pos] == ord("#"):
            while pos < n and buf[pos] not in b"\r\n":
                pos += 1
            continue
        begin = pos
        while pos < n and buf[pos] not in _WS and buf[pos] != ord("#"):
            pos += 1
        if begin == pos:
            raise FormatError(f"unexpected end of header at byte {pos}")
        tok = buf[begin:pos]
        if not tok.isdigit():
            raise FormatError(f"expected an integer at byte {begin}, got {tok[:16]!r}")
        tokens.append(int(tok))
    if pos >= n or buf[pos] not in _WS:
        raise FormatError(f"missing whitespace after header at byte {pos}")
    return tokens, pos + 1


def read_ppm(path) -> Panorama:
    """Read a binary P6 PPM with maxval 255 into an RGB panorama."""
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:2] != b"P6":
        raise FormatError(f"{path}: bad magic {buf[:2]!r} at byte 0, expected b'P6'")
    (width, height, maxval), offset = _header_tokens(buf, 3, 2)
    if maxval != 255:
        raise FormatError(f"{path}: unsupported maxval {maxval} (only 255)")
    if width < 1 or height < 1:
        raise FormatError(f"{path}: empty image {width}x{height}")
    expected = width * height * 3
    actual = len(buf) - offset
    if actual != expected:
        raise FormatError(
            f"{path}: payload at byte {offset} has {actual} bytes, expected {expected}")
    raw = np.frombuffer(buf, dtype=np.uint8, count=expected, offset=offset)
    data = raw.reshape(height, width, 3).astype(np.float32) / np.float32(255.0)
    return Panorama(data, "rgb")


def write_ppm(pano: Panorama, path) -> None:
    data = pano.data if pano.channels == 3 else np.repeat(pano.data[:, :, None], 3, axis=2)
    raw = np.rint(np.clip(data, 0.0, 1.0) * 255.0).astype(np.uint8)
    header = b"P6\n%d %d\n255\n" % (pano.width, pano.height)
    with open(path, "wb") as f:
        f.write(header)
        f.write(raw.tobytes())


# -- PFM -----------------------------------------------------------------------

def read_pfm(path, kind: str = "depth") -> Panorama:
    """Read a grayscale ``Pf`` float map (rows stored bottom to top)."""
    with open(path, "rb") as f:
        buf = f.read()
    lines = []
    pos = 0
    for _ in range(3):
        end = buf.find(b"\n", pos)
        if end < 0:
            raise FormatError(f"{path}: truncated header at byte {pos}")
        lines.append((pos, buf[pos:end].strip()))
        pos = end + 1
    (_, magic), (dim_at, dims), (scale_at, scale_tok) = lines
    if magic == b"PF":
        raise FormatError(f"{path}: color PFM ('PF') is not supported")
    if magic != b"Pf":
        raise FormatError(f"{path}: bad magic {magic!r} at byte 0")
    parts = dims.split()
    if len(parts) != 2 or not all(p.isdigit() for p in parts):
        raise FormatError(f"{path}: bad dimensions {dims!r} at byte {dim_at}")
    width, height = int(parts[0]), int(parts[1])
    try:
        scale = float(scale_tok)
    except ValueError:
        raise FormatError(f"{path}: bad scale {scale_tok!r} at byte {scale_at}") from None
    if scale == 0.0 or not math.isfinite(scale):
        raise FormatError(f"{path}: scale must be finite and non-zero at byte {scale_at}")
    dtype = np.dtype("<f4") if scale < 0 else np.dtype(">f4")
    expected = width * height * 4
    actual = len(buf) - pos
    if actual != expected:
        raise FormatError(f"{path}: payload at byte {pos} has {actual} bytes, expected {expected}")
    data = np.frombuffer(buf, dtype=dtype, offset=pos).reshape(height, width)
    return Panorama(np.flipud(data).astype(np.float32), kind)


def write_pfm(pano: Panorama, path) -> None:
    """Write a single-channel map as little-endian ``Pf``."""
    if pano.channels != 1:
        raise ValueError("PFM writer only handles single-channel maps")
    if np.isnan(pano.data).any():
        raise ValueError("refusing to write NaN values to PFM")
    payload = np.flipud(pano.data).astype("<f4").tobytes()
    with open(path, "wb") as f:
        f.write(b"Pf\n%d %d\n-1.0\n" % (pano.width, pano.height))
        f.write(payload)


def write_pgm_visualization(depth: Panorama, path, cap: float = 20.0) -> None:
    """Tone-mapped 8-bit view of a depth map: near is dark, far is light.

    Invalid pixels are written black.
    """
    d = depth.data.astype(np.float64)
    valid = (d > 0) & (d <= cap)
    out = np.zeros(d.shape, dtype=np.uint8)
    if valid.any():
        lo, hi = d[valid].min(), d[valid].max()
        span = hi - lo if hi > lo else 1.0
        out[valid] = np.rint(40.0 + 215.0 * (d[valid] - lo) / span).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (d.shape[1], d.shape[0]))
        f.write(out.tobytes())


# -- checkpoints ---------------------------------------------------------------

_NAME_RE = re.compile(r"^[A-Za-z0-9_.\-]+$")


def save_checkpoint(params: dict, meta: dict, path) -> None:
    """Write an ASCII manifest, a blank line, then raw little-endian f32 data.

    ``params`` maps unique tensor names to arrays (order preserved);
    ``meta`` must carry a ``phase`` entry, other entries are stored as text.
    """
    phase = meta.get("phase", "untrained")
    if phase not in PHASES:
        raise ValueError(f"unknown training phase {phase!r}")
    lines = [f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}", f"phase {phase}"]
    for key, value in meta.items():
        if key == "phase":
            continue
        text = str(value)
        if not _NAME_RE.match(str(key)) or "\n" in text:
            raise ValueError(f"meta entry {key!r} cannot be stored")
        lines.append(f"meta {key} {text}")
    chunks = []
    for name, arr in params.items():
        if not _NAME_RE.match(name):
            raise ValueError(f"bad tensor name {name!r}")
        arr = np.asarray(arr)
        shape = " ".join(str(s) for s in arr.shape)
        lines.append(f"tensor {name} {shape}".rstrip())
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    header = ("\n".join(lines) + "\n\n").encode("ascii")
    with open(path, "wb") as f:
        f.write(header)
        for c in chunks:
            f.write(c)


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`; returns ``(params, meta)``."""
    with open(path, "rb") as f:
        buf = f.read()
    end = buf.find(b"\n\n")
    if end < 0:
        raise FormatError(f"{path}: manifest is not terminated by a blank line")
    try:
        header = buf[:end].decode("ascii").split("\n")
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path}: non-ASCII manifest at byte {exc.start}") from None
    first = header[0].split()
    if len(first) != 2 or first[0] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint (byte 0)")
    if first[1] != str(CHECKPOINT_VERSION):
        raise FormatError(f"{path}: checkpoint version {first[1]} != {CHECKPOINT_VERSION}")
    meta = {}
    manifest = []
    for lineno, line in enumerate(header[1:], start=2):
        kind, _, rest = line.partition(" ")
        if kind == "phase":
            meta["phase"] = rest
        elif kind == "meta":
            key, _, value = rest.partition(" ")
            meta[key] = value
        elif kind == "tensor":
            parts = rest.split()
            try:
                shape = tuple(int(p) for p in parts[1:])
            except ValueError:
                raise FormatError(f"{path}: bad tensor shape on manifest line {lineno}") from None
            if not parts or parts[0] in dict(manifest):
                raise FormatError(f"{path}: missing or duplicate tensor name on manifest line {lineno}")
            manifest.append((parts[0], shape))
        else:
            raise FormatError(f"{path}: unknown manifest entry on line {lineno}: {line!r}")
    if meta.get("phase") not in PHASES:
        raise FormatError(f"{path}: missing or unknown phase tag")
    offset = end + 2
    counts = [int(np.prod(shape, dtype=np.int64)) for _, shape in manifest]
    expected = 4 * sum(counts)
    actual = len(buf) - offset
    if actual != expected:
        raise FormatError(
            f"{path}: payload length mismatch, manifest needs {expected} bytes, found {actual}")
    params = {}
    for (name, shape), n in zip(manifest, counts):
        arr = np.frombuffer(buf, dtype="<f4", count=n, offset=offset).reshape(shape)
        params[name] = arr.astype(np.float32)
        offset += 4 * n
    return params, meta


# -- run configuration ---------------------------------------------------------

@dataclass(frozen=True)
class RunConfig:
    """Training hyperparameters; defaults follow the reference setup."""

    learning_rate: float = 1e-4
    batch_size: int = 2
    epochs: int = 20
    lambda_smooth: float = 1.0
    depth_cap: float = 20.0
    seed: int = 0
    regimen: str = "fused"
    plateau_tol: float = 0.01
    plateau_patience: int = 3

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if self.regimen not in ("supervised", "unsupervised", "fused"):
            raise ValueError(f"unknown regimen {self.regimen!r}")

    def replace(self, **changes) -> "RunConfig":
        return replace(self, **changes)


def parse_config(path) -> RunConfig:
    """Parse a UTF-8 ``key = value`` file; ``#`` starts a comment."""
    types = {f.name: f.type for f in fields(RunConfig)}
    casts = {"float": float, "int": int, "str": str}
    values = {}
    with open(path, encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = (s.strip() for s in line.partition("="))
            if not sep or not key:
                raise DataError(f"{path}:{lineno}: expected 'key = value'")
            if key not in types:
                raise DataError(f"{path}:{lineno}: unknown key {key!r}")
            try:
                values[key] = casts[types[key]](value)
            except ValueError:
                raise DataError(f"{path}:{lineno}: cannot parse {value!r} for {key}") from None
    try:
        return RunConfig(**values)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None


def write_config(config: RunConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for fl in fields(RunConfig):
            f.write(f"{fl.name} = {getattr(config, fl.name)}\n")


def ensure_dir(path) -> str:
    os.makedirs(path, exist_ok=True)
    return str(path)
