"""Minimal module tree: named parameters, buffers, train/eval switch."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import ops
from .tensor import Tensor, get_default_dtype


def parameter(data: np.ndarray) -> Tensor:
    return Tensor(np.asarray(data, dtype=get_default_dtype()), requires_grad=True)


def kaiming_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return parameter(rng.uniform(-bound, bound, size=shape))


def zeros_param(shape) -> Tensor:
    return parameter(np.zeros(shape))


def ones_param(shape) -> Tensor:
    return parameter(np.ones(shape))


class Module:
    """Base class. Parameters are ``Tensor`` attributes with ``requires_grad``;
    buffers are numpy arrays whose attribute names are listed in ``_buffers``."""

    training = True
    _buffers: tuple[str, ...] = ()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def children(self) -> Iterator[tuple[str, "Module"]]:
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, child in self.children():
            yield from child.modules()

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
        for name, child in self.children():
            yield from child.named_parameters(prefix + name + ".")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name in self._buffers:
            value = getattr(self, name, None)
            if value is not None:
                yield prefix + name, value
        for name, child in self.children():
            yield from child.named_buffers(prefix + name + ".")

    def state_items(self) -> list[tuple[str, np.ndarray]]:
        """Parameters then buffers, as (name, array) in a stable order."""
        items = [(n, p.data) for n, p in self.named_parameters()]
        items += list(self.named_buffers())
        return items

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator, stride: int = 1,
                 pad: int | None = None, groups: int = 1, bias: bool = True):
        self.stride = stride
        self.pad = (k - 1) // 2 if pad is None else pad
        self.groups = groups
        fan_in = (c_in // groups) * k * k
        self.weight = kaiming_uniform(rng, (c_out, c_in // groups, k, k), fan_in)
        self.bias = zeros_param((c_out,)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.pad, self.groups)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        self.weight = kaiming_uniform(rng, (d_out, d_in), d_in)
        self.bias = zeros_param((d_out,)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class BatchNorm2d(Module):
    _buffers = ("running_mean", "running_var")

    def __init__(self, c: int, momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = ones_param((c,))
        self.beta = zeros_param((c,))
        dtype = get_default_dtype()
        self.running_mean = np.zeros(c, dtype=dtype)
        self.running_var = np.ones(c, dtype=dtype)
        self.momentum = momentum
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return ops.batch_norm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                              self.training, self.momentum, self.eps)

    def fold(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-channel (scale, shift) equivalent to this layer in eval mode."""
        scale = self.gamma.data / np.sqrt(self.running_var + self.eps)
        shift = self.beta.data - self.running_mean * scale
        return scale, shift


class LayerNorm(Module):
    def __init__(self, c: int, eps: float = 1e-5, axis: int = 1):
        self.gain = ones_param((c,))
        self.bias = zeros_param((c,))
        self.eps = eps
        self.axis = axis

    def forward(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.gain, self.bias, self.eps, self.axis)
