"""Structurally reparameterized convolutions.

Training uses parallel branches each followed by batch norm; :meth:`fuse`
folds them (using the running statistics) into a single convolution with bias.
"""

from __future__ import annotations

import warnings

import numpy as np

from . import ops
from .nn import BatchNorm2d, Conv2d, Module, parameter
from .tensor import Tensor


class RepDW3(Module):
    """Depth-wise 3x3 unit: (3x3 + BN) + (1x1 + BN) + (identity BN, stride 1 only)."""

    def __init__(self, channels: int, rng: np.random.Generator, stride: int = 1):
        self.channels = channels
        self.stride = stride
        self.conv3 = Conv2d(channels, channels, 3, rng, stride=stride, pad=1, groups=channels, bias=False)
        self.bn3 = BatchNorm2d(channels)
        self.conv1 = Conv2d(channels, channels, 1, rng, stride=stride, pad=0, groups=channels, bias=False)
        self.bn1 = BatchNorm2d(channels)
        self.bn_id = BatchNorm2d(channels) if stride == 1 else None
        self.weight: Tensor | None = None
        self.bias: Tensor | None = None

    @property
    def fused(self) -> bool:
        return self.weight is not None

    def forward(self, x: Tensor) -> Tensor:
        if self.fused:
            return ops.conv2d(x, self.weight, self.bias, self.stride, 1, self.channels)
        out = ops.add(self.bn3(self.conv3(x)), self.bn1(self.conv1(x)))
        if self.bn_id is not None:
            out = ops.add(out, self.bn_id(x))
        return out

    def fused_kernel(self) -> tuple[np.ndarray, np.ndarray]:
        """(3x3 depth-wise kernel, bias) equivalent to the branches in eval mode."""
        c = self.channels
        s3, t3 = self.bn3.fold()
        kernel = self.conv3.weight.data * s3[:, None, None, None]
        s1, t1 = self.bn1.fold()
        kernel = kernel.copy()
        kernel[:, :, 1, 1] += self.conv1.weight.data[:, :, 0, 0] * s1[:, None]
        bias = t3 + t1
        if self.bn_id is not None:
            si, ti = self.bn_id.fold()
            kernel[:, 0, 1, 1] += si
            bias = bias + ti
        return kernel.reshape(c, 1, 3, 3), bias

    def fuse(self) -> None:
        if self.fused:
            warnings.warn("RepDW3 already fused; ignoring", stacklevel=2)
            return
        kernel, bias = self.fused_kernel()
        self.weight = parameter(kernel)
        self.bias = parameter(bias)
        self.conv3 = self.bn3 = self.conv1 = self.bn1 = self.bn_id = None


class ConvBN(Module):
    """Convolution without bias followed by batch norm; fuses to a biased conv."""

    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator, stride: int = 1,
                 groups: int = 1):
        self.conv = Conv2d(c_in, c_out, k, rng, stride=stride, groups=groups, bias=False)
        self.bn = BatchNorm2d(c_out)
        self.fused = False

    def forward(self, x: Tensor) -> Tensor:
        if self.fused:
            return self.conv(x)
        return self.bn(self.conv(x))

    def fuse(self) -> None:
        if self.fused:
            warnings.warn("ConvBN already fused; ignoring", stacklevel=2)
            return
        scale, shift = self.bn.fold()
        self.conv.weight = parameter(self.conv.weight.data * scale[:, None, None, None])
        self.conv.bias = parameter(shift)
        self.bn = None
        self.fused = True
