"""Finite-difference checks for every differentiable op, the losses and a
tiny end-to-end network.

Each check maps a seed to the largest per-coordinate relative error of
:func:`panodepth.autodiff.grad_check`.  Inputs are small random tensors; the
weights on op outputs are random too, so no coordinate of the gradient is
trivially zero.
"""

from __future__ import annotations

import numpy as np

from panodepth import autodiff as ad
from panodepth import losses, padenet
from panodepth.geometry import RigConfig

TOLERANCE = 1e-3
SEEDS = (0, 1, 2, 3, 4)
EPS = 1e-5
_RIG = RigConfig(0.26, 8, 8)


def _weighted(out, rng):
    """Scalar probe: sum(out * fixed random weights)."""
    w = ad.Tensor(rng.normal(size=out.shape).astype(out.dtype))
    return ad.total(ad.mul(out, w))


def _away_from_zero(rng, shape, margin=0.05):
    """Normal samples with |x| >= margin so ReLU kinks stay out of reach."""
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin, x)


def _distinct(rng, shape):
    """Values with no near-ties, so max-pooling picks a stable winner."""
    x = rng.permutation(int(np.prod(shape))).reshape(shape).astype(np.float64)
    return x / x.size + rng.normal(scale=1e-4, size=shape)


def _check(fn, inputs, seed, precision, eps=EPS):
    return ad.grad_check(fn, inputs, eps=eps, precision=precision, seed=seed)


def _probe(seed):
    """A fresh generator for the output weights, so repeated calls agree."""
    return np.random.default_rng(seed + 1000)


def _simple(op, *shapes, gen=None):
    def check(seed, precision=32):
        rng = np.random.default_rng(seed)
        inputs = [(gen or (lambda r, s: r.normal(size=s)))(rng, s) for s in shapes]
        return _check(lambda *xs: _weighted(op(*xs), _probe(seed)), inputs, seed, precision)
    return check


def _conv(dilation=(1, 1), stride=1, k=3):
    def op(x, w, b):
        return ad.conv2d(x, w, b, stride=stride, dilation=dilation)
    return _simple(op, (2, 3, 6, 8), (4, 3, k, k), (4,))


def _e2e_config():
    return padenet.PadeNetConfig(height=16, width=32, channels=(4, 8, 8, 8), su_channels=8, d_max=0.5)


def _twin_models(cfg, seed):
    """float32 and float64 copies of the same weights, keyed by dtype."""
    m32 = padenet.build(cfg, seed=seed, dtype=np.float32)
    m64 = padenet.PadeNetModel(cfg, {k: ad.Tensor(p.data.astype(np.float64), requires_grad=True, name=k)
                                     for k, p in m32.params.items()})
    return {np.dtype(np.float32): m32, np.dtype(np.float64): m64}


def check_network(seed, precision=32):
    """Whole tiny network: gradient of a weighted sum of all four outputs
    with respect to a sample of parameters and the input image."""
    cfg = _e2e_config()
    models = _twin_models(cfg, seed)
    names = list(models[np.dtype(np.float64)].params)
    rng = np.random.default_rng(seed)
    rgb = rng.random((1, 3, cfg.height, cfg.width))
    picks = [names[i] for i in sorted(rng.choice(len(names), size=4, replace=False))]
    initial = [models[np.dtype(np.float64)].params[n].data.copy() for n in picks]

    def fn(x, *ps):
        model = models[x.dtype]
        for n, p in zip(picks, ps):
            model.params[n] = p
        total = None
        for k, o in enumerate(padenet.forward(model, x)):
            term = _weighted(o, _probe(seed + k))
            total = term if total is None else ad.add(total, term)
        return total

    return ad.grad_check(fn, [rgb] + initial, eps=EPS, precision=precision, max_coords=24, seed=seed)


def check_scene_understanding(seed, precision=32):
    cfg = _e2e_config()
    models = _twin_models(cfg, seed)
    rng = np.random.default_rng(seed)
    feats = np.abs(rng.normal(size=(2, cfg.channels[-1], 2, 4)))
    return ad.grad_check(lambda f: _weighted(padenet.scene_understanding(models[f.dtype], f), _probe(seed)),
                         [feats], eps=EPS, precision=precision, seed=seed)


def _loss_check(fn, *shapes, positive=False):
    def check(seed, precision=32):
        rng = np.random.default_rng(seed)
        inputs = [rng.random(s) * 0.3 + 0.02 if positive else rng.normal(size=s) for s in shapes]
        return _check(fn(rng), inputs, seed, precision)
    return check


def _smooth_l1(rng):
    gt = rng.random((2, 1, 4, 8)) * 3.0
    gt[0, 0, 0, :2] = 0.0
    return lambda p: losses.smooth_l1(p, gt)


def _warp(rng):
    src = rng.random((2, 3, 8, 8))
    w = rng.normal(size=(2, 3, 8, 8))
    return lambda d: ad.total(ad.mul(losses.warp_vertical(src, d, _RIG), ad.Tensor(w.astype(d.dtype))))


def _warp_source(rng):
    d = rng.random((2, 1, 8, 8)) * 0.3 + 0.02
    w = rng.normal(size=(2, 3, 8, 8))
    return lambda s: ad.total(ad.mul(losses.warp_vertical(s, d, _RIG), ad.Tensor(w.astype(s.dtype))))


def _reconstruction(rng):
    target, source = rng.random((2, 3, 8, 8)), rng.random((2, 3, 8, 8))
    return lambda d: losses.reconstruction_loss(target, source, d, _RIG)


def _smoothness(rng):
    img = rng.random((2, 3, 8, 8))
    return lambda d: losses.smoothness_loss(d, img)


def _multiscale(rng):
    gt = rng.random((1, 1, 16, 32)) * 0.4 + 0.01

    def fn(*preds):
        return losses.multiscale_supervised(list(preds), gt).total
    return fn


def _unsupervised(rng):
    top, bottom = rng.random((1, 3, 16, 32)), rng.random((1, 3, 16, 32))
    rig = RigConfig(0.26, 32, 16)

    def fn(*preds):
        return losses.unsupervised_loss(list(preds), top, bottom, rig, 1.0).total
    return fn


_SCALES = [(1, 1, 2, 4), (1, 1, 4, 8), (1, 1, 8, 16), (1, 1, 16, 32)]

CHECKS = {
    "add": _simple(ad.add, (2, 3, 4, 4), (1, 3, 1, 4)),
    "mul": _simple(ad.mul, (2, 3, 4, 4), (2, 3, 4, 4)),
    "scale": _simple(lambda x: ad.scale(x, -1.7), (2, 3, 4, 4)),
    "relu": _simple(ad.relu, (2, 3, 4, 4), gen=_away_from_zero),
    "sigmoid": _simple(ad.sigmoid, (2, 3, 4, 4)),
    "mean": _simple(lambda x: ad.scale(ad.mean(x), 3.0), (2, 3, 4, 4)),
    "concat_channels": _simple(lambda a, b: ad.concat_channels([a, b]), (2, 3, 4, 4), (2, 2, 4, 4)),
    "conv2d": _conv(),
    "conv2d_dilated": _conv(dilation=(4, 2)),
    "conv2d_stride2": _conv(stride=2),
    "conv2d_1x1": _conv(k=1),
    "maxpool2": _simple(ad.maxpool2, (2, 3, 4, 8), gen=_distinct),
    "bilinear_upsample": _simple(lambda x: ad.bilinear_upsample(x, 2), (2, 3, 4, 4)),
    "global_avg_pool": _simple(ad.global_avg_pool, (2, 3, 4, 4)),
    "fully_connected": _simple(ad.fully_connected, (2, 5), (3, 5), (3,)),
    "tile_spatial": _simple(lambda v: ad.tile_spatial(v, 3, 4), (2, 5)),
    "smooth_l1": _loss_check(_smooth_l1, (2, 1, 4, 8)),
    "warp_vertical": _loss_check(_warp, (2, 1, 8, 8), positive=True),
    "warp_vertical_source": _loss_check(_warp_source, (2, 3, 8, 8)),
    "reconstruction_loss": _loss_check(_reconstruction, (2, 1, 8, 8), positive=True),
    "smoothness_loss": _loss_check(_smoothness, (2, 1, 8, 8)),
    "multiscale_supervised": _loss_check(_multiscale, *_SCALES, positive=True),
    "unsupervised_loss": _loss_check(_unsupervised, *_SCALES, positive=True),
    "scene_understanding": check_scene_understanding,
    "network": check_network,
}


def run_suite(names=None, seeds=SEEDS, precision: int = 32) -> dict:
    """Worst error over ``seeds`` for each named check."""
    names = list(CHECKS) if names is None else list(names)
    unknown = [n for n in names if n not in CHECKS]
    if unknown:
        raise KeyError(f"unknown gradient check(s): {', '.join(unknown)}")
    return {n: max(CHECKS[n](s, precision) for s in seeds) for n in names}
