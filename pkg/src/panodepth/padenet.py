"""A desk-scale PADENet: VGG-style encoder, scene-understanding block
(global, pixel-wise and anisotropic ASPP branches) and a bilinear decoder
with skip connections that emits angular disparity at four scales."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from panodepth import autodiff as ad
from panodepth.autodiff import Tensor


@dataclass(frozen=True)
class PadeNetConfig:
    height: int = 64
    width: int = 128
    channels: tuple = (16, 32, 64, 128)
    aspp_dilations: tuple = ((2, 1), (4, 2), (8, 2))  # (horizontal, vertical)
    su_channels: int = 128
    d_max: float = 0.5

    def __post_init__(self):
        if len(self.channels) != 4:
            raise ValueError("the encoder has exactly four stages")
        if self.height % 16 or self.width % 16 or self.height < 16 or self.width < 16:
            raise ValueError(f"input {self.height}x{self.width} must be a positive multiple of 16")
        dil = tuple(tuple(d) for d in self.aspp_dilations)
        if len(dil) != 3:
            raise ValueError("ASPP needs exactly three branches")
        if len({d[0] for d in dil}) != 3 or len({d[1] for d in dil}) != 2:
            raise ValueError("ASPP branches need three distinct horizontal and two distinct vertical rates")
        if any(min(d) < 1 for d in dil):
            raise ValueError("dilation rates must be >= 1")
        if self.su_channels < 4 or self.d_max <= 0:
            raise ValueError("invalid su_channels or d_max")

    @property
    def branch_channels(self) -> int:
        return self.su_channels // 4

    def to_meta(self) -> dict:
        d = asdict(self)
        return {
            "model.height": d["height"],
            "model.width": d["width"],
            "model.channels": ",".join(str(c) for c in self.channels),
            "model.aspp_dilations": ";".join(f"{a},{b}" for a, b in self.aspp_dilations),
            "model.su_channels": self.su_channels,
            "model.d_max": repr(float(self.d_max)),
        }

    @classmethod
    def from_meta(cls, meta: dict) -> "PadeNetConfig":
        try:
            return cls(
                height=int(meta["model.height"]),
                width=int(meta["model.width"]),
                channels=tuple(int(c) for c in meta["model.channels"].split(",")),
                aspp_dilations=tuple(tuple(int(v) for v in p.split(","))
                                     for p in meta["model.aspp_dilations"].split(";")),
                su_channels=int(meta["model.su_channels"]),
                d_max=float(meta["model.d_max"]),
            )
        except (KeyError, ValueError) as exc:
            raise ValueError(f"checkpoint lacks a usable model config: {exc}") from None


def parameter_shapes(config: PadeNetConfig) -> dict:
    """Ordered name -> shape map; the whole model is determined by the config."""
    shapes = {}

    def conv(name, cin, cout, k=3):
        shapes[f"{name}.weight"] = (cout, cin, k, k)
        shapes[f"{name}.bias"] = (cout,)

    cin = 3
    for s, c in enumerate(config.channels, start=1):
        conv(f"enc{s}.conv1", cin, c)
        conv(f"enc{s}.conv2", c, c)
        cin = c
    b = config.branch_channels
    shapes["su.global.fc.weight"] = (b, cin)
    shapes["su.global.fc.bias"] = (b,)
    conv("su.pixel", cin, b, k=1)
    for i in range(len(config.aspp_dilations)):
        conv(f"su.aspp{i + 1}", cin, b)
    conv("su.fuse", (2 + len(config.aspp_dilations)) * b, config.su_channels, k=1)
    prev = config.su_channels
    for stage, skip in enumerate(reversed(config.channels), start=1):
        conv(f"dec{stage}.conv", prev + skip, skip)
        conv(f"dec{stage}.head", skip, 1)
        prev = skip
    return shapes


class PadeNetModel:
    """Parameters plus the forward pass."""

    def __init__(self, config: PadeNetConfig, params: dict):
        self.config = config
        self.params = params

    def parameters(self):
        return list(self.params.values())

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def state_dict(self) -> dict:
        return {k: p.data.copy() for k, p in self.params.items()}

    def load_state_dict(self, state: dict) -> None:
        unknown = [k for k in state if k not in self.params]
        if unknown:
            raise ValueError(f"unknown tensor(s) in state: {', '.join(unknown[:5])}")
        missing = [k for k in self.params if k not in state]
        if missing:
            raise ValueError(f"state lacks tensor(s): {', '.join(missing[:5])}")
        for k, arr in state.items():
            if tuple(arr.shape) != self.params[k].shape:
                raise ValueError(f"shape mismatch for {k}: {arr.shape} vs {self.params[k].shape}")
            self.params[k].data = np.array(arr, dtype=self.params[k].dtype)

    def forward(self, rgb) -> list:
        return forward(self, rgb)

    __call__ = forward


def build(config: PadeNetConfig = PadeNetConfig(), seed: int = 0, dtype=np.float32) -> PadeNetModel:
    """He-uniform weights (bound sqrt(6 / fan_in)) from a seeded PCG64 stream; zero biases."""
    rng = np.random.Generator(np.random.PCG64(seed))
    params = {}
    for name, shape in parameter_shapes(config).items():
        if name.endswith(".bias"):
            arr = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[1:]))
            bound = np.sqrt(6.0 / fan_in)
            arr = rng.uniform(-bound, bound, size=shape)
        params[name] = Tensor(arr.astype(dtype), requires_grad=True, name=name)
    return PadeNetModel(config, params)


def _conv(model, name, x, dilation=(1, 1)):
    p = model.params
    return ad.conv2d(x, p[f"{name}.weight"], p[f"{name}.bias"], dilation=dilation)


def encoder(model: PadeNetModel, x: Tensor):
    """Returns the pooled bottleneck and the pre-pooling features of each stage."""
    skips = []
    for s in range(1, 5):
        x = ad.relu(_conv(model, f"enc{s}.conv1", x))
        x = ad.relu(_conv(model, f"enc{s}.conv2", x))
        skips.append(x)
        x = ad.maxpool2(x)
    return x, skips


def scene_understanding(model: PadeNetModel, features: Tensor) -> Tensor:
    """Global (pool, FC, tile), pixel (1x1) and dilated branches, fused by 1x1 conv."""
    p = model.params
    n, c, h, w = features.shape
    g = ad.relu(ad.fully_connected(ad.global_avg_pool(features), p["su.global.fc.weight"], p["su.global.fc.bias"]))
    branches = [ad.tile_spatial(g, h, w), ad.relu(_conv(model, "su.pixel", features))]
    for i, dil in enumerate(model.config.aspp_dilations, start=1):
        branches.append(ad.relu(_conv(model, f"su.aspp{i}", features, dilation=tuple(dil))))
    return ad.relu(_conv(model, "su.fuse", ad.concat_channels(branches)))


def forward(model: PadeNetModel, rgb) -> list:
    """Disparity maps (radians) from coarse (H/8) to full resolution."""
    x = rgb if isinstance(rgb, Tensor) else Tensor(np.asarray(rgb, dtype=np.float32))
    cfg = model.config
    if x.ndim != 4 or x.shape[1] != 3 or x.shape[2:] != (cfg.height, cfg.width):
        raise ValueError(f"expected input (N, 3, {cfg.height}, {cfg.width}), got {x.shape}")
    x = x - 0.5
    bottleneck, skips = encoder(model, x)
    y = scene_understanding(model, bottleneck)
    outputs = []
    for stage, skip in enumerate(reversed(skips), start=1):
        y = ad.bilinear_upsample(y, 2)
        y = ad.relu(_conv(model, f"dec{stage}.conv", ad.concat_channels([y, skip])))
        outputs.append(ad.sigmoid(_conv(model, f"dec{stage}.head", y)) * cfg.d_max)
    return outputs
