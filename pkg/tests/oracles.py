"""Independent reference computations shared by the unit and acceptance tests.

Nothing here calls into the library's numerics; each function recomputes its
quantity from the defining formula with plain loops or mpmath.
"""

import math

import mpmath
import numpy as np


def zoh_series(A, B, delta, dps=40):
    """(A_bar, B_bar) from truncated power series in high precision.

    e^z = sum z^k/k!, (e^z - 1)/z = sum z^k/(k+1)!, both summed until the
    terms drop below 10^-(dps+5) relative to the running sum.
    """
    A = np.atleast_1d(np.asarray(A, dtype=float))
    B = np.broadcast_to(np.asarray(B, dtype=float), A.shape)
    delta = np.broadcast_to(np.asarray(delta, dtype=float), A.shape)
    a_bar = np.empty(A.shape)
    b_bar = np.empty(A.shape)
    with mpmath.workdps(dps):
        tol = mpmath.mpf(10) ** (-(dps + 5))
        for idx in np.ndindex(A.shape):
            d = mpmath.mpf(float(delta[idx]))
            z = d * mpmath.mpf(float(A[idx]))
            e_sum, p_sum = mpmath.mpf(1), mpmath.mpf(1)
            term = mpmath.mpf(1)  # z^k / k!
            k = 0
            while True:
                k += 1
                term = term * z / k
                e_sum += term
                p_term = term / (k + 1)
                p_sum += p_term
                if abs(term) < tol * abs(e_sum) and abs(p_term) < tol * abs(p_sum):
                    break
            a_bar[idx] = float(e_sum)
            b_bar[idx] = float(p_sum * d * mpmath.mpf(float(B[idx])))
    return a_bar, b_bar


def causal_conv_loop(K, x):
    L, d = x.shape
    y = np.zeros((L, d))
    for c in range(d):
        for t in range(L):
            y[t, c] = sum(K[j, c] * x[t - j, c] for j in range(t + 1))
    return y


def s6_by_hand(x, p):
    """Step-by-step selective scan of one sequence x (L, D_inner)."""
    A = -np.exp(p.A_log.data)
    L, d = x.shape
    n = A.shape[1]
    h = np.zeros((d, n))
    y = np.zeros((L, d))
    for t in range(L):
        xt = x[t]
        Bt = [sum(p.b_proj.data[k, i] * xt[i] for i in range(d)) for k in range(n)]
        Ct = [sum(p.c_proj.data[k, i] * xt[i] for i in range(d)) for k in range(n)]
        low = [sum(p.dt_down.data[r, i] * xt[i] for i in range(d)) for r in range(p.dt_rank)]
        for i in range(d):
            pre = sum(p.dt_up.data[i, r] * low[r] for r in range(p.dt_rank)) + p.dt_bias.data[i]
            dt = math.log1p(math.exp(pre))
            acc = 0.0
            for k in range(n):
                a_bar = math.exp(dt * A[i, k])
                b_bar = (a_bar - 1.0) / A[i, k] * Bt[k]
                h[i, k] = a_bar * h[i, k] + b_bar * xt[i]
                acc += Ct[k] * h[i, k]
            y[t, i] = acc + (p.D.data[i] * xt[i] if p.D is not None else 0.0)
    return y


def erf_gelu(v):
    return v / 2 * (1 + math.erf(v / math.sqrt(2)))


def silu(v):
    return v / (1 + np.exp(-v))


def conv1x1(x, w, b=None):
    """(B, Cin, H, W) x (Cout, Cin, 1, 1) by explicit channel sums."""
    out = np.einsum("oc,bchw->bohw", w[:, :, 0, 0], x)
    return out if b is None else out + b[None, :, None, None]


def depthwise3x3(x, w, b=None, stride=1):
    bsz, c, h, wd = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ho, wo = (h - 1) // stride + 1, (wd - 1) // stride + 1
    out = np.zeros((bsz, c, ho, wo))
    for u in range(3):
        for v in range(3):
            out += w[None, :, 0, u, v, None, None] * xp[:, :, u:u + stride * ho:stride, v:v + stride * wo:stride]
    return out if b is None else out + b[None, :, None, None]


def bn_eval(x, bn):
    inv = 1.0 / np.sqrt(bn.running_var + bn.eps)
    return ((x - bn.running_mean[None, :, None, None]) * inv[None, :, None, None]
            * bn.gamma.data[None, :, None, None] + bn.beta.data[None, :, None, None])


def rep_branches(x, rep):
    """Eval-mode multi-branch output of a RepDW3 unit."""
    out = bn_eval(depthwise3x3(x, rep.conv3.weight.data, stride=rep.stride), rep.bn3)
    w1 = rep.conv1.weight.data[:, 0, 0, 0]
    out = out + bn_eval(x[:, :, ::rep.stride, ::rep.stride] * w1[None, :, None, None], rep.bn1)
    if rep.bn_id is not None:
        out = out + bn_eval(x, rep.bn_id)
    return out


def layer_norm_channels(x, gain, bias, eps):
    mu = x.mean(axis=1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * gain[None, :, None, None] + bias[None, :, None, None]


def ss2d_by_hand(x, blk):
    """SS2D forward written out with explicit scan orders and the hand S6."""
    b, c, H, W = x.shape
    d = blk.d_inner
    proj = conv1x1(x, blk.in_proj.weight.data)
    xs, z = proj[:, :d], proj[:, d:]
    xs = silu(depthwise3x3(xs, blk.conv.weight.data, blk.conv.bias.data))
    grid = np.arange(H * W).reshape(H, W)
    orders = [grid.ravel(), grid.ravel()[::-1], grid.T.ravel(), grid.T.ravel()[::-1]]
    merged = np.zeros((b, d, H * W))
    for i in range(b):
        flat = xs[i].reshape(d, H * W)
        for order in orders:
            y = s6_by_hand(flat[:, order].T, blk.ssm)
            merged[i][:, order] += y.T
    merged = merged.reshape(b, d, H, W)
    y = layer_norm_channels(merged, blk.norm.gain.data, blk.norm.bias.data, blk.norm.eps) * silu(z)
    return conv1x1(y, blk.out_proj.weight.data)


def pool(x, r):
    b, c, h, w = x.shape
    out = np.zeros((b, c, h // r, w // r))
    for i in range(h // r):
        for j in range(w // r):
            out[:, :, i, j] = x[:, :, i * r:(i + 1) * r, j * r:(j + 1) * r].mean(axis=(2, 3))
    return out


def upsample(x, r):
    return x.repeat(r, axis=2).repeat(r, axis=3)
