"""Dense tensor with tape-based reverse-mode differentiation.

Every differentiable op goes through :func:`make_op`, which wraps the numpy
result in a :class:`Tensor` and, when a :class:`GradTape` is active and any
parent requires a gradient, appends a backward rule to that tape.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterator, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "GradTape",
    "backward",
    "make_op",
    "get_default_dtype",
    "set_default_dtype",
    "default_dtype",
    "debug_checks",
    "count_macs",
    "add_macs",
    "no_grad",
]

_state = threading.local()


def _st():
    if not hasattr(_state, "dtype"):
        _state.dtype = np.dtype(np.float32)
        _state.debug = True
        _state.tapes = []
        _state.mac_counters = []
        _state.grad_enabled = True
    return _state


def get_default_dtype() -> np.dtype:
    return _st().dtype


def set_default_dtype(dtype) -> None:
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported scalar kind {dtype}")
    _st().dtype = dtype


@contextlib.contextmanager
def default_dtype(dtype) -> Iterator[None]:
    """Temporarily switch the default scalar kind (float32 or float64)."""
    old = get_default_dtype()
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(old)


@contextlib.contextmanager
def debug_checks(enabled: bool) -> Iterator[None]:
    """Toggle the per-op finiteness assertion (on by default)."""
    st = _st()
    old = st.debug
    st.debug = enabled
    try:
        yield
    finally:
        st.debug = old


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    st = _st()
    old = st.grad_enabled
    st.grad_enabled = False
    try:
        yield
    finally:
        st.grad_enabled = old


class _MacCounter:
    def __init__(self) -> None:
        self.total = 0


@contextlib.contextmanager
def count_macs() -> Iterator[_MacCounter]:
    """Accumulate multiply-accumulate counts reported by ops inside the block."""
    counter = _MacCounter()
    _st().mac_counters.append(counter)
    try:
        yield counter
    finally:
        _st().mac_counters.remove(counter)


def add_macs(n: int) -> None:
    for c in _st().mac_counters:
        c.total += int(n)


class Tensor:
    """N-dimensional array of reals with optional gradient tracking."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
                dtype = data.dtype
            else:
                dtype = get_default_dtype()
        self.data = np.ascontiguousarray(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.item())

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- arithmetic sugar (implemented in ops) ---------------------------
    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops

        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops

        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops

        if isinstance(other, Tensor):
            raise TypeError("division only supported by a scalar")
        return ops.mul(self, 1.0 / other)

    def __neg__(self):
        from . import ops

        return ops.mul(self, -1.0)

    def __getitem__(self, index):
        from . import ops

        return ops.getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        from . import ops

        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        from . import ops

        return ops.mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        from . import ops

        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from . import ops

        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes)


BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class _Record:
    __slots__ = ("parents", "output", "backward", "name")

    def __init__(self, parents, output, backward, name):
        self.parents = parents
        self.output = output
        self.backward = backward
        self.name = name


class GradTape:
    """Append-only record of executed ops.

    Use as a context manager around the forward pass, then call
    :meth:`backward` with the scalar loss.
    """

    def __init__(self) -> None:
        self.records: list[_Record] = []

    def __enter__(self) -> "GradTape":
        _st().tapes.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _st().tapes.remove(self)

    def __len__(self) -> int:
        return len(self.records)

    def record(self, parents, output, backward, name) -> None:
        self.records.append(_Record(parents, output, backward, name))

    def backward(self, loss: Tensor) -> None:
        backward(self, loss)


def backward(tape: GradTape, loss: Tensor) -> None:
    """Propagate d(loss)/d(leaf) into ``leaf.grad`` for every leaf on the tape.

    Leaves are tensors with ``requires_grad`` that were not produced by a
    recorded op. Gradients accumulate into existing ``.grad`` arrays.
    """
    if loss.size != 1:
        raise ValueError(f"loss must be a scalar, got shape {loss.shape}")
    produced = {id(r.output) for r in tape.records}
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for rec in reversed(tape.records):
        g = grads.pop(id(rec.output), None)
        if g is None:
            continue
        parent_grads = rec.backward(g)
        for parent, pg in zip(rec.parents, parent_grads):
            if pg is None or not isinstance(parent, Tensor) or not parent.requires_grad:
                continue
            if pg.shape != parent.shape:
                raise RuntimeError(f"{rec.name}: gradient shape {pg.shape} != {parent.shape}")
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
            if key not in produced:
                leaves[key] = parent
    if id(loss) not in produced and loss.requires_grad:
        leaves[id(loss)] = loss
    for key, leaf in leaves.items():
        g = grads.get(key)
        if g is None:
            continue
        g = g.astype(leaf.dtype, copy=False)
        leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g


def make_op(data: np.ndarray, parents: Sequence, backward_fn: BackwardFn, name: str) -> Tensor:
    """Wrap an op result and record its backward rule on active tapes."""
    st = _st()
    if st.debug and not np.all(np.isfinite(data)):
        raise FloatingPointError(f"{name} produced non-finite values")
    needs = st.grad_enabled and any(isinstance(p, Tensor) and p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs)
    if needs:
        for tape in st.tapes:
            tape.record(tuple(parents), out, backward_fn, name)
    return out
