"""State-space machinery: ZOH discretization, recurrent and convolutional
scan modes, the selective (input-dependent) scan, and 2D cross-scanning."""

from __future__ import annotations

import contextlib
import enum
import math
from typing import Iterator

import numpy as np

from . import ops
from .nn import Conv2d, LayerNorm, Linear, Module, kaiming_uniform, parameter
from .tensor import Tensor, _st, add_macs, make_op

# |z| below which (e^z - 1)/z switches to its Taylor series
SERIES_THRESHOLD = 1e-4
# the derivative loses ~eps/z^2 to cancellation, so it switches later
_DPHI_THRESHOLD = 1e-2


def expm1_over_x(z: np.ndarray) -> np.ndarray:
    """(e^z - 1)/z, with the 4-term series 1 + z/2 + z^2/6 + z^3/24 near 0."""
    z = np.asarray(z)
    small = np.abs(z) < SERIES_THRESHOLD
    safe = np.where(small, 1.0, z)
    out = np.expm1(safe) / safe
    series = 1.0 + z * (1.0 / 2 + z * (1.0 / 6 + z * (1.0 / 24)))
    return np.where(small, series, out).astype(z.dtype, copy=False)


def _d_expm1_over_x(z: np.ndarray) -> np.ndarray:
    small = np.abs(z) < _DPHI_THRESHOLD
    safe = np.where(small, 1.0, z)
    ez = np.exp(safe)
    out = (safe * ez - ez + 1.0) / (safe * safe)
    series = 1.0 / 2 + z * (1.0 / 3 + z * (1.0 / 8 + z * (1.0 / 30 + z * (1.0 / 144 + z / 840))))
    return np.where(small, series, out).astype(z.dtype, copy=False)


def zoh_discretize(A, B, delta) -> tuple[np.ndarray, np.ndarray]:
    """Zero-order-hold discretization for diagonal ``A``.

    Returns ``(A_bar, B_bar)`` with ``A_bar = exp(delta*A)`` and
    ``B_bar = (exp(delta*A) - 1)/A * B``; all arguments broadcast elementwise.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    delta = np.asarray(delta, dtype=float)
    if np.any(delta <= 0):
        raise ValueError("zoh_discretize: delta must be strictly positive")
    z = delta * A
    return np.exp(z), expm1_over_x(z) * delta * B


# ----------------------------------------------------------------------------
# time-invariant / explicit-parameter scan modes (numpy level)
# ----------------------------------------------------------------------------


def ssm_scan_sequential(A_bar: np.ndarray, B_bar: np.ndarray, C: np.ndarray, x: np.ndarray,
                        D: np.ndarray | None = None) -> np.ndarray:
    """Run h_t = A_bar*h_{t-1} + B_bar*x_t, y_t = sum_n C*h_t (+ D*x_t) from h_0 = 0.

    ``x`` is (L, D_inner). Discrete parameters are either static (D_inner, N)
    or per-token (L, D_inner, N).
    """
    x = np.asarray(x)
    L, d = x.shape
    arrays = []
    for name, arr in (("A_bar", A_bar), ("B_bar", B_bar), ("C", C)):
        arr = np.asarray(arr)
        if arr.ndim == 3 and arr.shape[0] != L:
            raise ValueError(f"{name} has {arr.shape[0]} tokens but x has length {L}")
        if arr.ndim not in (2, 3) or arr.shape[-2] != d:
            raise ValueError(f"{name} shape {arr.shape} incompatible with D_inner={d}")
        arrays.append(arr)
    A_bar, B_bar, C = arrays
    n = A_bar.shape[-1]
    h = np.zeros((d, n), dtype=np.result_type(x, A_bar))
    y = np.empty((L, d), dtype=h.dtype)
    for t in range(L):
        a = A_bar[t] if A_bar.ndim == 3 else A_bar
        b = B_bar[t] if B_bar.ndim == 3 else B_bar
        c = C[t] if C.ndim == 3 else C
        h = a * h + b * x[t][:, None]
        y[t] = (c * h).sum(axis=-1)
    if D is not None:
        y = y + np.asarray(D) * x
    return y


def ssm_kernel(A_bar: np.ndarray, B_bar: np.ndarray, C: np.ndarray, L: int) -> np.ndarray:
    """Convolution kernel K[j] = sum_n C * A_bar^j * B_bar, shape (L, D_inner)."""
    A_bar, B_bar, C = (np.asarray(a) for a in (A_bar, B_bar, C))
    if A_bar.ndim != 2 or B_bar.ndim != 2 or C.ndim != 2:
        raise ValueError("ssm_kernel requires time-invariant (D_inner, N) parameters")
    powers = A_bar[None, :, :] ** np.arange(L)[:, None, None]
    return (C * B_bar * powers).sum(axis=-1)


def ssm_conv_apply(K: np.ndarray, x: np.ndarray, D: np.ndarray | None = None) -> np.ndarray:
    """Causal convolution y_t = sum_{j<=t} K[j] x_{t-j} per channel, via FFT."""
    K, x = np.asarray(K), np.asarray(x)
    if K.shape != x.shape:
        raise ValueError(f"kernel shape {K.shape} != input shape {x.shape}")
    L = x.shape[0]
    nfft = 1 << max(0, (2 * L - 1).bit_length())
    y = np.fft.irfft(np.fft.rfft(K, nfft, axis=0) * np.fft.rfft(x, nfft, axis=0), nfft, axis=0)[:L]
    if D is not None:
        y = y + np.asarray(D) * x
    return y


# ----------------------------------------------------------------------------
# selective scan as a differentiable primitive
# ----------------------------------------------------------------------------


def selective_scan(u: Tensor, delta: Tensor, A: Tensor, B: Tensor, C: Tensor,
                   D: Tensor | None = None) -> Tensor:
    """Input-dependent scan with per-token ZOH discretization.

    Shapes: u, delta (batch, L, D_inner); A (D_inner, N); B, C (batch, L, N);
    D (D_inner,). Returns (batch, L, D_inner).
    """
    ud, dd, Ad, Bd, Cd = u.data, delta.data, A.data, B.data, C.data
    nb, L, d = ud.shape
    n = Ad.shape[1]
    if dd.shape != ud.shape or Bd.shape != (nb, L, n) or Cd.shape != (nb, L, n) or Ad.shape != (d, n):
        raise ValueError(
            f"selective_scan: inconsistent shapes u{ud.shape} delta{dd.shape} A{Ad.shape} B{Bd.shape} C{Cd.shape}")
    if np.any(dd <= 0):
        raise ValueError("selective_scan: delta must be strictly positive")
    add_macs(3 * nb * L * d * n)
    dA = dd[..., None] * Ad
    Abar = np.exp(dA)
    phi = expm1_over_x(dA)
    Bbar = phi * dd[..., None] * Bd[:, :, None, :]
    bx = Bbar * ud[..., None]
    hs = np.empty((nb, L, d, n), dtype=ud.dtype)
    h = np.zeros((nb, d, n), dtype=ud.dtype)
    for t in range(L):
        h = Abar[:, t] * h + bx[:, t]
        hs[:, t] = h
    y = np.matmul(hs, Cd[..., None])[..., 0]
    if D is not None:
        y = y + D.data * ud

    def bw(g):
        gu = g * D.data if D is not None else np.zeros_like(ud)
        gD = (g * ud).sum(axis=(0, 1)) if D is not None else None
        gC = np.matmul(g[:, :, None, :], hs)[:, :, 0, :]
        gh_y = g[..., None] * Cd[:, :, None, :]
        gAbar = np.empty_like(hs)
        gbx = np.empty_like(hs)
        carry = np.zeros((nb, d, n), dtype=ud.dtype)
        for t in range(L - 1, -1, -1):
            carry = carry + gh_y[:, t]
            gbx[:, t] = carry
            gAbar[:, t] = carry * hs[:, t - 1] if t > 0 else 0.0
            carry = carry * Abar[:, t]
        gBbar = gbx * ud[..., None]
        gu = gu + (gbx * Bbar).sum(axis=-1)
        bcast = Bd[:, :, None, :]
        gdA = gAbar * Abar + gBbar * _d_expm1_over_x(dA) * dd[..., None] * bcast
        gdelta = (gdA * Ad).sum(axis=-1) + (gBbar * phi * bcast).sum(axis=-1)
        gA = (gdA * dd[..., None]).sum(axis=(0, 1))
        gB = (gBbar * phi * dd[..., None]).sum(axis=2)
        return gu, gdelta, gA, gB, gC, gD

    parents = (u, delta, A, B, C) + ((D,) if D is not None else ())
    fn = bw if D is not None else (lambda g: bw(g)[:5])
    return make_op(y, parents, fn, "selective_scan")


class SsmParams(Module):
    """Selective SSM parameters shared by all scan directions of one SS2D block.

    ``A = -exp(A_log)`` is diagonal per channel; B_t, C_t come from linear
    maps of the token; delta_t = softplus(dt_up(dt_down(x_t)) + dt_bias).
    """

    def __init__(self, d_inner: int, d_state: int, dt_rank: int, rng: np.random.Generator,
                 skip: bool = True, dt_min: float = 1e-3, dt_max: float = 1e-1):
        if d_inner < 1 or d_state < 1 or dt_rank < 1:
            raise ValueError("SsmParams: d_inner, d_state and dt_rank must be >= 1")
        self.d_inner, self.d_state, self.dt_rank = d_inner, d_state, dt_rank
        self.skip = skip
        self.A_log = parameter(np.tile(np.log(np.arange(1, d_state + 1, dtype=float)), (d_inner, 1)))
        self.b_proj = kaiming_uniform(rng, (d_state, d_inner), d_inner)
        self.c_proj = kaiming_uniform(rng, (d_state, d_inner), d_inner)
        self.dt_down = kaiming_uniform(rng, (dt_rank, d_inner), d_inner)
        self.dt_up = kaiming_uniform(rng, (d_inner, dt_rank), dt_rank)
        dt = np.exp(rng.uniform(np.log(dt_min), np.log(dt_max), size=d_inner))
        self.dt_bias = parameter(dt + np.log(-np.expm1(-dt)))  # inverse softplus
        self.D = parameter(np.ones(d_inner)) if skip else None

    def A(self) -> Tensor:
        return ops.mul(ops.exp(self.A_log), -1.0)

    def forward(self, x: Tensor) -> Tensor:
        return s6_forward(x, self)


def s6_forward(x: Tensor, params: SsmParams) -> Tensor:
    """Selective scan of x (batch, L, D_inner) with token-dependent B, C, delta."""
    B = ops.linear(x, params.b_proj)
    C = ops.linear(x, params.c_proj)
    delta = ops.softplus(ops.linear(ops.linear(x, params.dt_down), params.dt_up, params.dt_bias))
    return selective_scan(x, delta, params.A(), B, C, params.D if params.skip else None)


# ----------------------------------------------------------------------------
# 2D cross-scan
# ----------------------------------------------------------------------------


class ScanDirection(enum.IntEnum):
    ROW_FORWARD = 0
    ROW_REVERSE = 1
    COL_FORWARD = 2
    COL_REVERSE = 3


def scan_order(direction: ScanDirection, H: int, W: int) -> np.ndarray:
    """Row-major grid index visited at each sequence position."""
    grid = np.arange(H * W).reshape(H, W)
    direction = ScanDirection(direction)
    if direction in (ScanDirection.ROW_FORWARD, ScanDirection.ROW_REVERSE):
        order = grid.ravel()
    else:
        order = grid.T.ravel()
    if direction in (ScanDirection.ROW_REVERSE, ScanDirection.COL_REVERSE):
        order = order[::-1]
    return np.ascontiguousarray(order)


def _orders(H: int, W: int) -> np.ndarray:
    return np.stack([scan_order(d, H, W) for d in ScanDirection])


def scan(x: Tensor, direction: ScanDirection) -> Tensor:
    """One direction: (B, C, H, W) -> (B, H*W, C)."""
    b, c, h, w = x.shape
    flat = ops.transpose(ops.reshape(x, (b, c, h * w)), (0, 2, 1))
    return ops.take(flat, scan_order(direction, h, w), axis=1)


def unscan(seq: Tensor, direction: ScanDirection, H: int, W: int) -> Tensor:
    """Inverse of :func:`scan`: (B, H*W, C) -> (B, C, H, W)."""
    b, L, c = seq.shape
    inv = np.argsort(scan_order(direction, H, W))
    grid = ops.take(seq, inv, axis=1)
    return ops.reshape(ops.transpose(grid, (0, 2, 1)), (b, c, H, W))


def cross_scan(x: Tensor) -> Tensor:
    """(B, C, H, W) -> (4, B, H*W, C), one sequence per :class:`ScanDirection`."""
    b, c, h, w = x.shape
    orders = _orders(h, w)
    flat = x.data.reshape(b, c, h * w)
    out = np.ascontiguousarray(flat[:, :, orders].transpose(2, 0, 3, 1))

    def bw(g):
        gflat = np.zeros((b, h * w, c), dtype=g.dtype)
        for k in range(4):
            gflat[:, orders[k]] += g[k]
        return (np.ascontiguousarray(gflat.transpose(0, 2, 1)).reshape(b, c, h, w),)

    return make_op(out, (x,), bw, "cross_scan")


def cross_merge(seqs: Tensor, H: int, W: int) -> Tensor:
    """(4, B, H*W, C) -> (B, C, H, W): undo each direction's ordering and sum."""
    k, b, L, c = seqs.shape
    if k != 4 or L != H * W:
        raise ValueError(f"cross_merge: expected (4, B, {H * W}, C), got {seqs.shape}")
    orders = _orders(H, W)
    grid = np.zeros((b, L, c), dtype=seqs.dtype)
    for d in range(4):
        grid[:, orders[d]] += seqs.data[d]
    out = np.ascontiguousarray(grid.transpose(0, 2, 1)).reshape(b, c, H, W)

    def bw(g):
        gflat = g.reshape(b, c, L).transpose(0, 2, 1)
        return (np.ascontiguousarray(np.stack([gflat[:, orders[d]] for d in range(4)])),)

    return make_op(out, (seqs,), bw, "cross_merge")


@contextlib.contextmanager
def count_ssm_tokens() -> Iterator[list[int]]:
    """Collect the number of grid positions fed to SS2D blocks (per image)."""
    st = _st()
    if not hasattr(st, "token_counters"):
        st.token_counters = []
    counter = [0]
    st.token_counters.append(counter)
    try:
        yield counter
    finally:
        st.token_counters.remove(counter)


def _record_tokens(n: int) -> None:
    for counter in getattr(_st(), "token_counters", ()):
        counter[0] += n


class SS2D(Module):
    """Four-direction selective scan block.

    in-proj -> 3x3 depth-wise conv -> silu -> cross-scan -> shared S6 ->
    cross-merge -> layer norm -> gate by silu(z) -> out-proj.
    """

    def __init__(self, dim: int, rng: np.random.Generator, expand: int = 3, d_state: int = 16,
                 dt_rank: int | None = None, skip: bool = True):
        self.dim = dim
        self.d_inner = d_inner = expand * dim
        dt_rank = dt_rank or math.ceil(dim / 16)
        self.in_proj = Conv2d(dim, 2 * d_inner, 1, rng, bias=False)
        self.conv = Conv2d(d_inner, d_inner, 3, rng, groups=d_inner)
        self.ssm = SsmParams(d_inner, d_state, dt_rank, rng, skip=skip)
        self.norm = LayerNorm(d_inner)
        self.out_proj = Conv2d(d_inner, dim, 1, rng, bias=False)

    def forward(self, x: Tensor) -> Tensor:
        return ss2d_block(x, self)


def ss2d_block(x: Tensor, block: SS2D) -> Tensor:
    b, c, h, w = x.shape
    if c != block.dim:
        raise ValueError(f"ss2d_block: input has {c} channels, block expects {block.dim}")
    _record_tokens(h * w)
    xs, z = ops.split(block.in_proj(x), [block.d_inner, block.d_inner], axis=1)
    xs = ops.silu(block.conv(xs))
    seqs = cross_scan(xs)
    ys = s6_forward(ops.reshape(seqs, (4 * b, h * w, block.d_inner)), block.ssm)
    y = cross_merge(ops.reshape(ys, (4, b, h * w, block.d_inner)), h, w)
    y = ops.mul(block.norm(y), ops.silu(z))
    return block.out_proj(y)
