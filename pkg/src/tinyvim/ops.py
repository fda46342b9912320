"""Differentiable op set needed by the backbone.

All ops are pure: inputs are never modified. Feature maps use NCHW layout.
"""

from __future__ import annotations

import numpy as np
from scipy import special

from .tensor import Tensor, add_macs, make_op

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x), dtype=dtype)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# ----------------------------------------------------------------------------
# elementwise arithmetic
# ----------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    out = a.data + b.data
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return make_op(out, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    out = a.data - b.data
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return make_op(out, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    if not isinstance(b, Tensor) and np.isscalar(b):
        a = as_tensor(a)
        s = float(b)
        return make_op(a.data * a.dtype.type(s), (a,), lambda g: (g * s,), "scale")
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    ad, bd = a.data, b.data

    def bw(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return make_op(ad * bd, (a, b), bw, "mul")


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return make_op(out, (x,), lambda g: (g * out,), "exp")


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = x.shape
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return make_op(np.asarray(out), (x,), bw, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


# ----------------------------------------------------------------------------
# shape manipulation
# ----------------------------------------------------------------------------


def reshape(x: Tensor, shape) -> Tensor:
    src = x.shape
    return make_op(x.data.reshape(shape), (x,), lambda g: (g.reshape(src),), "reshape")


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = np.ascontiguousarray(np.transpose(x.data, axes))
    return make_op(out, (x,), lambda g: (np.transpose(g, inv),), "transpose")


def getitem(x: Tensor, index) -> Tensor:
    shape, dtype = x.shape, x.dtype

    def bw(g):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, index, g)
        return (full,)

    return make_op(np.array(x.data[index]), (x,), bw, "getitem")


def take(x: Tensor, indices: np.ndarray, axis: int) -> Tensor:
    """Gather along ``axis``; repeated indices accumulate in the backward pass."""
    indices = np.asarray(indices)
    shape, dtype = x.shape, x.dtype

    def bw(g):
        full = np.zeros(shape, dtype=dtype)
        sl = [slice(None)] * len(shape)
        sl[axis] = indices
        np.add.at(full, tuple(sl), g)
        return (full,)

    return make_op(np.take(x.data, indices, axis=axis), (x,), bw, "take")


def concat(tensors, axis: int = 1) -> Tensor:
    tensors = [t for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)
    out = np.concatenate([t.data for t in tensors], axis=axis)

    def bw(g):
        parts = []
        for i in range(len(tensors)):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(bounds[i], bounds[i + 1])
            parts.append(np.ascontiguousarray(g[tuple(sl)]))
        return parts

    return make_op(out, tensors, bw, "concat")


def split(x: Tensor, sizes, axis: int = 1) -> list[Tensor]:
    bounds = np.cumsum([0] + list(sizes))
    if bounds[-1] != x.shape[axis]:
        raise ValueError(f"split sizes {sizes} do not cover axis of length {x.shape[axis]}")
    out = []
    for i in range(len(sizes)):
        sl = [slice(None)] * x.ndim
        sl[axis] = slice(int(bounds[i]), int(bounds[i + 1]))
        out.append(getitem(x, tuple(sl)))
    return out


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    out = np.stack([t.data for t in tensors], axis=axis)

    def bw(g):
        return [np.ascontiguousarray(np.take(g, i, axis=axis)) for i in range(len(tensors))]

    return make_op(out, tensors, bw, "stack")


# ----------------------------------------------------------------------------
# activations
# ----------------------------------------------------------------------------


def gelu(x: Tensor) -> Tensor:
    """Exact GeLU, x * Phi(x)."""
    xd = x.data
    cdf = 0.5 * (1.0 + special.erf(xd / _SQRT2))
    out = xd * cdf

    def bw(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * xd * xd)
        return (g * (cdf + xd * pdf),)

    return make_op(out, (x,), bw, "gelu")


def silu(x: Tensor) -> Tensor:
    xd = x.data
    s = special.expit(xd)
    return make_op(xd * s, (x,), lambda g: (g * (s + xd * s * (1.0 - s)),), "silu")


def softplus(x: Tensor) -> Tensor:
    xd = x.data
    out = np.logaddexp(0.0, xd).astype(xd.dtype)
    return make_op(out, (x,), lambda g: (g * special.expit(xd),), "softplus")


# ----------------------------------------------------------------------------
# linear maps and convolution
# ----------------------------------------------------------------------------


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w.T + b`` over the last axis; ``w`` is (out, in)."""
    if x.shape[-1] != w.shape[1]:
        raise ValueError(f"linear: input features {x.shape[-1]} != weight in-dim {w.shape[1]}")
    xd, wd = x.data, w.data
    out = xd @ wd.T
    if b is not None:
        if b.shape != (w.shape[0],):
            raise ValueError(f"linear: bias shape {b.shape} != ({w.shape[0]},)")
        out = out + b.data
    add_macs(xd.size // xd.shape[-1] * wd.size)

    def bw(g):
        gx = g @ wd
        gw = g.reshape(-1, g.shape[-1]).T @ xd.reshape(-1, xd.shape[-1])
        gb = g.reshape(-1, g.shape[-1]).sum(axis=0) if b is not None else None
        return gx, gw, gb

    parents = (x, w, b) if b is not None else (x, w)
    return make_op(out, parents, bw if b is not None else (lambda g: bw(g)[:2]), "linear")


def _pair(v):
    return (v, v) if isinstance(v, int) else tuple(v)


def _batched_outer(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """sum_n a[n, g] @ b[n, g].T for (N, G, M, P) and (N, G, K, P) -> (G, M, K)."""
    n, g, m, p = a.shape
    k = b.shape[2]
    a2 = a.transpose(1, 2, 0, 3).reshape(g, m, n * p)
    b2 = b.transpose(1, 2, 0, 3).reshape(g, k, n * p)
    return np.matmul(a2, b2.transpose(0, 2, 1))


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, pad: int = 0,
           groups: int = 1) -> Tensor:
    """Grouped 2D cross-correlation, NCHW input and (O, C/groups, kh, kw) weight."""
    if stride <= 0:
        raise ValueError(f"conv2d: stride must be positive, got {stride}")
    if pad < 0:
        raise ValueError(f"conv2d: pad must be non-negative, got {pad}")
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError("conv2d: expected 4D input and weight")
    n, c, h, wid = x.shape
    o, cg, kh, kw = w.shape
    if c % groups or o % groups or cg != c // groups:
        raise ValueError(f"conv2d: channels {c}->{o} incompatible with groups={groups} and weight {w.shape}")
    if b is not None and b.shape != (o,):
        raise ValueError(f"conv2d: bias shape {b.shape} != ({o},)")
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wid + 2 * pad - kw) // stride + 1
    if ho <= 0 or wo <= 0:
        raise ValueError("conv2d: kernel larger than padded input")
    add_macs(n * o * ho * wo * cg * kh * kw)
    xd, wd = x.data, w.data
    xp = np.pad(xd, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else xd
    hs = stride * (ho - 1) + 1
    ws = stride * (wo - 1) + 1

    def window(arr, u, v):
        return arr[:, :, u:u + hs:stride, v:v + ws:stride]

    depthwise = groups == c == o
    if depthwise:
        out = np.zeros((n, c, ho, wo), dtype=xd.dtype)
        for u in range(kh):
            for v in range(kw):
                out += wd[None, :, 0, u, v, None, None] * window(xp, u, v)
    elif kh == kw == 1 and stride == 1 and pad == 0:
        cols = xd.reshape(n, groups, cg, h * wid)
        out = np.matmul(wd.reshape(groups, o // groups, cg), cols).reshape(n, o, ho, wo)
    else:
        cols = np.empty((n, c, kh, kw, ho, wo), dtype=xd.dtype)
        for u in range(kh):
            for v in range(kw):
                cols[:, :, u, v] = window(xp, u, v)
        cols = cols.reshape(n, groups, cg * kh * kw, ho * wo)
        out = np.matmul(wd.reshape(groups, o // groups, cg * kh * kw), cols).reshape(n, o, ho, wo)
    if b is not None:
        out = out + b.data[None, :, None, None]

    def bw(g):
        gxp = np.zeros_like(xp)
        if depthwise:
            gw = np.empty_like(wd)
            for u in range(kh):
                for v in range(kw):
                    gw[:, 0, u, v] = np.einsum("nchw,nchw->c", g, window(xp, u, v))
                    window(gxp, u, v)[...] += g * wd[None, :, 0, u, v, None, None]
        elif kh == kw == 1 and stride == 1 and pad == 0:
            gg = g.reshape(n, groups, o // groups, h * wid)
            wg = wd.reshape(groups, o // groups, cg)
            gw = _batched_outer(gg, cols).reshape(wd.shape)
            gxp = np.matmul(wg.transpose(0, 2, 1), gg).reshape(n, c, h, wid)
        else:
            gg = g.reshape(n, groups, o // groups, ho * wo)
            wg = wd.reshape(groups, o // groups, cg * kh * kw)
            gw = _batched_outer(gg, cols).reshape(wd.shape)
            gcols = np.matmul(wg.transpose(0, 2, 1), gg).reshape(n, c, kh, kw, ho, wo)
            for u in range(kh):
                for v in range(kw):
                    window(gxp, u, v)[...] += gcols[:, :, u, v]
        gx = gxp[:, :, pad:pad + h, pad:pad + wid] if pad else gxp
        gb = g.sum(axis=(0, 2, 3)) if b is not None else None
        return np.ascontiguousarray(gx), gw, gb

    parents = (x, w, b) if b is not None else (x, w)
    return make_op(out, parents, bw if b is not None else (lambda g: bw(g)[:2]), "conv2d")


# ----------------------------------------------------------------------------
# pooling / resampling
# ----------------------------------------------------------------------------


def avg_pool2d(x: Tensor, r: int) -> Tensor:
    """Non-overlapping r x r mean pooling; H and W must be divisible by r."""
    n, c, h, w = x.shape
    if r <= 0 or h % r or w % r:
        raise ValueError(f"avg_pool2d: ratio {r} does not divide spatial dims {h}x{w}")
    win = x.data.reshape(n, c, h // r, r, w // r, r)
    # mean taken relative to each window's first entry, so a window of equal
    # values returns that value exactly
    ref = win[:, :, :, :1, :, :1]
    out = (ref + (win - ref).mean(axis=(3, 5), keepdims=True))[:, :, :, 0, :, 0]
    scale = 1.0 / (r * r)

    def bw(g):
        return (np.repeat(np.repeat(g * scale, r, axis=2), r, axis=3),)

    return make_op(out, (x,), bw, "avg_pool2d")


def upsample_nearest(x: Tensor, r: int) -> Tensor:
    if r < 1:
        raise ValueError(f"upsample_nearest: ratio must be >= 1, got {r}")
    n, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, r, axis=2), r, axis=3)

    def bw(g):
        return (g.reshape(n, c, h, r, w, r).sum(axis=(3, 5)),)

    return make_op(out, (x,), bw, "upsample_nearest")


def global_avg_pool(x: Tensor) -> Tensor:
    """(N, C, H, W) -> (N, C)."""
    return mean(x, axis=(2, 3))


# ----------------------------------------------------------------------------
# normalization
# ----------------------------------------------------------------------------


def _channel_last(x: np.ndarray, axis: int) -> np.ndarray:
    return np.moveaxis(x, axis, -1)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5, axis: int = 1) -> Tensor:
    """Normalize over ``axis`` (the channel axis) independently at every other position."""
    if eps <= 0:
        raise ValueError("layer_norm: eps must be positive")
    c = x.shape[axis]
    if gain.shape != (c,) or bias.shape != (c,):
        raise ValueError(f"layer_norm: gain/bias must have shape ({c},)")
    xd = x.data
    mu = xd.mean(axis=axis, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=axis, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    bshape = [1] * x.ndim
    bshape[axis] = c
    gd = gain.data.reshape(bshape)
    out = xhat * gd + bias.data.reshape(bshape)
    red = tuple(i for i in range(x.ndim) if i != axis)

    def bw(g):
        ggain = (g * xhat).sum(axis=red)
        gbias = g.sum(axis=red)
        gh = g * gd
        gx = rstd * (gh - gh.mean(axis=axis, keepdims=True)
                     - xhat * (gh * xhat).mean(axis=axis, keepdims=True))
        return gx, ggain, gbias

    return make_op(out, (x, gain, bias), bw, "layer_norm")


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
               running_var: np.ndarray, training: bool, momentum: float = 0.1,
               eps: float = 1e-5) -> Tensor:
    """Batch norm over (N, H, W) per channel.

    In training mode batch statistics are used and the running buffers are
    updated in place (they are not part of the differentiable state).
    """
    if eps <= 0:
        raise ValueError("batch_norm: eps must be positive")
    xd = x.data
    c = xd.shape[1]
    red = (0, 2, 3)
    gd = gamma.data[None, :, None, None]
    if training:
        m = xd.size // c
        mu = xd.mean(axis=red, keepdims=True)
        xc = xd - mu
        var = (xc * xc).mean(axis=red, keepdims=True)
        rstd = 1.0 / np.sqrt(var + eps)
        xhat = xc * rstd
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu.reshape(c)
        unbiased = var.reshape(c) * (m / max(m - 1, 1))
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased

        def bw(g):
            gh = g * gd
            gx = rstd * (gh - gh.mean(axis=red, keepdims=True)
                         - xhat * (gh * xhat).mean(axis=red, keepdims=True))
            return gx, (g * xhat).sum(axis=red), g.sum(axis=red)
    else:
        rstd = (1.0 / np.sqrt(running_var + eps)).astype(xd.dtype)[None, :, None, None]
        xhat = (xd - running_mean.astype(xd.dtype)[None, :, None, None]) * rstd

        def bw(g):
            return g * gd * rstd, (g * xhat).sum(axis=red), g.sum(axis=red)

    out = xhat * gd + beta.data[None, :, None, None]
    return make_op(out, (x, gamma, beta), bw, "batch_norm")


# ----------------------------------------------------------------------------
# losses
# ----------------------------------------------------------------------------


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean softmax cross-entropy; ``labels`` are integer class ids."""
    z = logits.data
    labels = np.asarray(labels)
    n = z.shape[0]
    zmax = z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z - zmax).sum(axis=1, keepdims=True)) + zmax
    logp = z - lse
    loss = -logp[np.arange(n), labels].mean()

    def bw(g):
        p = np.exp(logp)
        p[np.arange(n), labels] -= 1.0
        return (p * (g / n),)

    return make_op(np.asarray(loss, dtype=z.dtype), (logits,), bw, "cross_entropy")
