"""Small reverse-mode autodiff: exactly the tensor kernels the depth network
needs, each with a hand-written backward, plus Adam and a finite-difference
gradient checker.

Tensors are NCHW.  Horizontal indices are cyclic everywhere (the panorama
wraps in longitude); vertical borders are zero-padded for convolution and
clamped for interpolation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from panodepth.errors import NumericError


class Tensor:
    """An array with an optional gradient buffer and the op that produced it."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into ``.grad`` of every leaf that requires it."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a gradient needs a scalar tensor")
            grad = np.ones_like(self.data)
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.astype(node.dtype, copy=True) if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for p, pg in zip(node._parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                key = id(p)
                grads[key] = pg if key not in grads else grads[key] + pg
            node._parents = ()
            node._backward = None

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, scale(other, -1.0) if isinstance(other, Tensor) else -other)

    def __rsub__(self, other):
        return add(scale(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, Tensor) else scale(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a tensor is not supported")
        return scale(self, 1.0 / other)


def as_tensor(x, dtype=None) -> Tensor:
    """Wrap ``x``; float32/float64 arrays keep their dtype, anything else becomes float32."""
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def make_op(data, parents, backward) -> Tensor:
    """Wrap an op result; ``backward(g)`` returns one gradient per parent."""
    if not np.all(np.isfinite(data)):
        raise NumericError("non-finite values in forward pass")
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# -- elementwise ---------------------------------------------------------------

def add(a, b) -> Tensor:
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        return make_op(a.data + np.asarray(b, dtype=a.dtype), (a,), lambda g: (g,))
    try:
        out = a.data + b.data
    except ValueError:
        raise ValueError(f"cannot add shapes {a.shape} and {b.shape}") from None
    return make_op(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data * b.data
    except ValueError:
        raise ValueError(f"cannot multiply shapes {a.shape} and {b.shape}") from None
    return make_op(out, (a, b), lambda g: (_unbroadcast(g * b.data, a.shape),
                                           _unbroadcast(g * a.data, b.shape)))


def scale(a: Tensor, c: float) -> Tensor:
    c = a.dtype.type(c)
    return make_op(a.data * c, (a,), lambda g: (g * c,))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_op(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        y = 1.0 / (1.0 + np.exp(-x.data))
    y = y.astype(x.dtype)
    return make_op(y, (x,), lambda g: (g * y * (1 - y),))


def total(x: Tensor) -> Tensor:
    """Sum of all elements as a scalar tensor."""
    return make_op(np.asarray(x.data.sum(), dtype=x.dtype), (x,),
                   lambda g: (np.broadcast_to(g, x.shape).astype(x.dtype),))


def mean(x: Tensor) -> Tensor:
    n = x.data.size
    return make_op(np.asarray(x.data.mean(), dtype=x.dtype), (x,),
                   lambda g: (np.full(x.shape, g / n, dtype=x.dtype),))


def concat_channels(tensors) -> Tensor:
    tensors = list(tensors)
    base = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != 4 or t.shape[0] != base[0] or t.shape[2:] != base[2:]:
            raise ValueError(f"cannot concatenate {t.shape} with {base}")
    splits = np.cumsum([t.shape[1] for t in tensors])[:-1]
    out = np.concatenate([t.data for t in tensors], axis=1)
    return make_op(out, tensors, lambda g: tuple(np.split(g, splits, axis=1)))


# -- convolution ---------------------------------------------------------------

def _wrap_cols(width, pad):
    return np.arange(-pad, width + pad) % width


def _fold_wrap(gp, width, pad):
    """Adjoint of horizontal wrap padding: fold padded columns back mod W."""
    wp = gp.shape[-1]
    start = (-pad) % width
    k = -(-(start + wp) // width)
    buf = np.zeros(gp.shape[:-1] + (k * width,), dtype=gp.dtype)
    buf[..., start:start + wp] = gp
    return buf.reshape(gp.shape[:-1] + (k, width)).sum(axis=-2)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor = None, stride: int = 1, dilation=(1, 1)) -> Tensor:
    """2-D convolution with "same"-style padding: circular horizontally, zeros
    vertically.

    Args:
        x: (N, C, H, W) input.
        weight: (Co, C, kh, kw) kernel with odd kh, kw.
        bias: optional (Co,) bias.
        stride: shared vertical/horizontal stride.
        dilation: (horizontal, vertical) dilation rates.
    """
    dh, dv = dilation
    if dh < 1 or dv < 1:
        raise ValueError("dilation must be >= 1")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError("conv2d expects 4-D input and weight")
    n, c, h, w = x.shape
    co, ci, kh, kw = weight.shape
    if ci != c:
        raise ValueError(f"weight expects {ci} input channels, got {c}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError("kernel size must be odd")
    if bias is not None and bias.shape != (co,):
        raise ValueError(f"bias shape {bias.shape} != ({co},)")
    dtype = np.result_type(x.dtype, weight.dtype)
    ph, pw = dv * (kh - 1) // 2, dh * (kw - 1) // 2
    hp, wp = h + 2 * ph, w + 2 * pw
    # Channels-last padded input flattened over (n, row, col).  Every kernel
    # tap is then a constant offset into the flat array, so the convolution
    # is a sum of contiguous (L, C) @ (C, Co) products evaluated on the padded
    # grid; the rows that straddle padding are cropped afterwards.
    length = n * hp * wp
    flat = np.zeros((length + dv * (kh - 1) * wp + dh * (kw - 1), c), dtype=dtype)
    flat[:length].reshape(n, hp, wp, c)[:, ph:ph + h] = x.data.transpose(0, 2, 3, 1)[:, :, _wrap_cols(w, pw)]
    wk = np.ascontiguousarray(weight.data.transpose(2, 3, 1, 0), dtype=dtype)
    taps = [(i, j, i * dv * wp + j * dh) for i in range(kh) for j in range(kw)]
    acc = np.zeros((length, co), dtype=dtype)
    for i, j, s in taps:
        acc += flat[s:s + length] @ wk[i, j]
    out = acc.reshape(n, hp, wp, co)[:, :h:stride, :w:stride]
    if bias is not None:
        out = out + bias.data
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))

    def backward(g):
        gacc = np.zeros((length, co), dtype=dtype)
        gacc.reshape(n, hp, wp, co)[:, :h:stride, :w:stride] = g.transpose(0, 2, 3, 1)
        gw = gb = gx = None
        if weight.requires_grad:
            gwk = np.empty_like(wk)
            for i, j, s in taps:
                gwk[i, j] = flat[s:s + length].T @ gacc
            gw = np.ascontiguousarray(gwk.transpose(3, 2, 0, 1))
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        if x.requires_grad:
            gflat = np.zeros_like(flat)
            for i, j, s in taps:
                gflat[s:s + length] += gacc @ wk[i, j].T
            gv = gflat[:length].reshape(n, hp, wp, c)[:, ph:ph + h]
            gx = np.ascontiguousarray(_fold_wrap(gv.transpose(0, 3, 1, 2), w, pw))
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_op(out, parents, backward)


def maxpool2(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; gradient goes to the first maximum."""
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"maxpool2 needs even spatial dims, got {h}x{w}")
    blocks = x.data.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    idx = np.argmax(blocks, axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        gb = np.zeros(blocks.shape, dtype=g.dtype)
        np.put_along_axis(gb, idx[..., None], g[..., None], axis=-1)
        return (gb.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w),)

    return make_op(out, (x,), backward)


def _interp_matrix(n_in, factor, wrap, dtype):
    """Linear interpolation weights (n_in * factor, n_in), half-pixel centers."""
    n_out = n_in * factor
    src = (np.arange(n_out) + 0.5) / factor - 0.5
    if not wrap:
        src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.int64)
    frac = src - i0
    i1 = i0 + 1
    if wrap:
        i0 %= n_in
        i1 %= n_in
    else:
        i1 = np.minimum(i1, n_in - 1)
    m = np.zeros((n_out, n_in), dtype=np.float64)
    np.add.at(m, (np.arange(n_out), i0), 1.0 - frac)
    np.add.at(m, (np.arange(n_out), i1), frac)
    return m.astype(dtype)


def bilinear_upsample(x: Tensor, factor: int = 2) -> Tensor:
    """Bilinear upsampling (align_corners=False); columns wrap, rows clamp."""
    if int(factor) != factor or factor < 2:
        raise ValueError("factor must be an integer >= 2")
    n, c, h, w = x.shape
    av = _interp_matrix(h, factor, False, x.dtype)
    ah = _interp_matrix(w, factor, True, x.dtype)
    out = av @ x.data @ ah.T
    return make_op(out, (x,), lambda g: (av.T @ g @ ah,))


def global_avg_pool(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    return make_op(x.data.mean(axis=(2, 3)), (x,),
                   lambda g: (np.broadcast_to(g[:, :, None, None] / (h * w), x.shape).astype(x.dtype),))


def fully_connected(x: Tensor, weight: Tensor, bias: Tensor = None) -> Tensor:
    """(N, Cin) @ (Cout, Cin).T + (Cout,)."""
    if x.ndim != 2 or weight.ndim != 2 or weight.shape[1] != x.shape[1]:
        raise ValueError(f"fully_connected shape mismatch: {x.shape} vs {weight.shape}")
    out = x.data @ weight.data.T
    if bias is not None:
        if bias.shape != (weight.shape[0],):
            raise ValueError("bias shape mismatch")
        out = out + bias.data

    def backward(g):
        return g @ weight.data, g.T @ x.data, (g.sum(axis=0) if bias is not None else None)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_op(out, parents, backward)


def tile_spatial(v: Tensor, height: int, width: int) -> Tensor:
    """Broadcast (N, C) to (N, C, H, W)."""
    if v.ndim != 2:
        raise ValueError("tile_spatial expects (N, C)")
    out = np.ascontiguousarray(np.broadcast_to(v.data[:, :, None, None], v.shape + (height, width)))
    return make_op(out, (v,), lambda g: (g.sum(axis=(2, 3)),))


# -- optimizer -----------------------------------------------------------------

@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, **kw):
        return cls([np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params], **kw)


def adam_step(params, grads, state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update, applied in place to ``params``."""
    if lr < 0:
        raise ValueError("learning rate must be >= 0")
    for g in grads:
        if g is not None and not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient passed to Adam")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = np.zeros_like(p.data)
        if m.shape != p.shape or g.shape != p.shape:
            raise ValueError(f"Adam shape mismatch for {p.name}")
        dt = p.dtype.type
        m *= dt(b1)
        m += dt(1.0 - b1) * g
        v *= dt(b2)
        v += dt(1.0 - b2) * g * g
        mhat = m / dt(c1)
        vhat = v / dt(c2)
        p.data -= dt(lr) * mhat / (np.sqrt(vhat) + dt(state.eps))


class Adam:
    """Convenience wrapper reading gradients from ``param.grad``."""

    def __init__(self, params, lr=1e-4, **kw):
        self.params = list(params)
        self.lr = lr
        self.state = AdamState.for_params(self.params, **kw)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        adam_step(self.params, [p.grad for p in self.params], self.state, self.lr)


# -- gradient checking ---------------------------------------------------------

def grad_check(fn, inputs, eps=1e-3, precision=64, max_coords=None, seed=0) -> float:
    """Largest per-coordinate relative error between backprop and central differences.

    ``fn`` maps tensors (one per entry of ``inputs``) to a scalar tensor.
    The analytic gradient is computed at ``precision`` bits (32 or 64); the
    finite differences always run in float64.  Relative error is
    ``|a - n| / max(1e-8, |a|, |n|)``, so a flipped sign scores 2.  ``max_coords`` limits the number of
    randomly chosen coordinates probed per input.
    """
    dtype = {32: np.float32, 64: np.float64}[precision]
    arrays = [np.asarray(a.data if isinstance(a, Tensor) else a, dtype=np.float64) for a in inputs]
    tensors = [Tensor(a.astype(dtype), requires_grad=True) for a in arrays]
    out = fn(*tensors)
    if out.data.size != 1:
        raise ValueError("grad_check needs a scalar-valued function")
    out.backward()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k, (arr, t) in enumerate(zip(arrays, tensors)):
        analytic = np.zeros(arr.shape) if t.grad is None else t.grad.astype(np.float64)
        coords = np.arange(arr.size)
        if max_coords is not None and arr.size > max_coords:
            coords = np.sort(rng.choice(arr.size, size=max_coords, replace=False))
        for flat in coords:
            idx = np.unravel_index(flat, arr.shape)
            vals = []
            for delta in (eps, -eps):
                probe = [a.copy() for a in arrays]
                probe[k][idx] += delta
                vals.append(float(fn(*[Tensor(p) for p in probe]).data))
            numeric = (vals[0] - vals[1]) / (2 * eps)
            a = analytic[idx]
            err = abs(a - numeric) / max(1e-8, abs(a), abs(numeric))
            worst = max(worst, err)
    return worst
