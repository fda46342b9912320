"""Laplace frequency-decoupling mixer."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from math import gcd

import numpy as np

from . import ops
from .nn import Conv2d, Module
from .rep import RepDW3
from .ssm import SS2D
from .tensor import Tensor

MIXER_MODES = ("low-only", "high-only", "low+high", "conv-only", "baseline")


@dataclass(frozen=True)
class MixerConfig:
    """Partition coefficient, pooling ratio and width of one Laplace mixer.

    ``mode`` picks what the SSM sees: the pooled low band (``low-only``, the
    default design), the residual high band (``high-only``), both
    (``low+high``), nothing (``conv-only``), or the whole undecomposed
    feature (``baseline``).
    """

    alpha: float
    pool_ratio: int
    channels: int
    mode: str = "low-only"

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.pool_ratio < 1:
            raise ValueError(f"pool ratio must be >= 1, got {self.pool_ratio}")
        if self.mode not in MIXER_MODES:
            raise ValueError(f"unknown mixer mode {self.mode!r}; choose from {MIXER_MODES}")
        low_channels(self.channels, self.alpha)

    @property
    def low(self) -> int:
        return low_channels(self.channels, self.alpha)


def low_channels(channels: int, alpha: float) -> int:
    n = Fraction(alpha).limit_denominator(1 << 16) * channels
    if n.denominator != 1:
        raise ValueError(f"alpha={alpha} does not split {channels} channels into an integer count")
    return int(n)


def effective_pool_ratio(r: int, H: int, W: int) -> int:
    """Largest ratio <= r dividing both H and W (r itself whenever it divides)."""
    g = gcd(H, W)
    for cand in range(min(r, g), 0, -1):
        if g % cand == 0:
            return cand
    return 1


def split_channels(x: Tensor, alpha: float) -> tuple[Tensor, Tensor]:
    """First alpha*D channels form the low branch, the remainder the high branch."""
    d = x.shape[1]
    n = low_channels(d, alpha)
    return x[:, :n], x[:, n:]


def laplace_decompose(x: Tensor, r: int) -> tuple[Tensor, Tensor]:
    """One pyramid level: (pooled low band, full-resolution residual)."""
    low = ops.avg_pool2d(x, r)
    return low, x - ops.upsample_nearest(low, r)


class LaplaceMixer(Module):
    def __init__(self, cfg: MixerConfig, rng: np.random.Generator, ssm_expand: int = 3,
                 d_state: int = 16):
        self.cfg = cfg
        ssm_dim = cfg.channels if cfg.mode == "baseline" else cfg.low
        self.ss2d = SS2D(ssm_dim, rng, expand=ssm_expand, d_state=d_state)
        self.rep = RepDW3(cfg.channels, rng) if cfg.mode != "baseline" else None
        self.proj = Conv2d(cfg.channels, cfg.channels, 1, rng)

    def forward(self, x: Tensor) -> Tensor:
        return mixer_forward(x, self)


def mixer_branches(x: Tensor, mixer: LaplaceMixer) -> dict[str, Tensor]:
    """Intermediate tensors of the mixer pipeline, keyed by stage name.

    ``low_out`` is the SSM output upsampled back to full resolution and
    ``high_out`` the Rep3 output over all D channels.
    """
    cfg = mixer.cfg
    b, d, h, w = x.shape
    if d != cfg.channels:
        raise ValueError(f"mixer expects {cfg.channels} channels, got {d}")
    if cfg.mode == "baseline":
        y = mixer.ss2d(x)
        return {"fused": y, "out": mixer.proj(y)}
    r = effective_pool_ratio(cfg.pool_ratio, h, w)
    x_l, x_h = split_channels(x, cfg.alpha)
    x_ll, x_lh = laplace_decompose(x_l, r)
    parts = {"x_l": x_l, "x_h": x_h, "x_ll": x_ll, "x_lh": x_lh}

    if cfg.mode in ("high-only", "low+high"):
        x_lh = mixer.ss2d(x_lh)
    if cfg.mode in ("low-only", "low+high"):
        x_ll = mixer.ss2d(x_ll)

    x_hh = ops.concat([x_lh, x_h], axis=1) if x_h.shape[1] else x_lh
    hi = mixer.rep(x_hh)
    lo = ops.upsample_nearest(x_ll, r)
    n = cfg.low
    fused = ops.add(hi[:, :n], lo)
    if n < d:
        fused = ops.concat([fused, hi[:, n:]], axis=1)
    parts.update(x_hh=x_hh, high_out=hi, low_out=lo, fused=fused, out=mixer.proj(fused))
    return parts


def mixer_forward(x: Tensor, mixer: LaplaceMixer) -> Tensor:
    """split -> Laplace decompose -> SS2D(low) / Rep3(high) -> fuse -> 1x1 conv."""
    return mixer_branches(x, mixer)["out"]
