"""Binary formats.

TVMT holds one tensor::

    b"TVMT" | u8 version=1 | u8 kind (0=f32, 1=f64) | u8 ndim | ndim x u32 | payload

TVMW holds named weights::

    b"TVMW" | u8 version | u32 count | count x entry
    entry = u16 name_len | name (utf-8) | u8 kind | u8 ndim | ndim x u32 | payload

All integers and payloads are little-endian, payloads row-major.
"""

from __future__ import annotations

import io
import os
import struct

import numpy as np

from .nn import Module

TVMT_MAGIC = b"TVMT"
TVMW_MAGIC = b"TVMW"
VERSION = 1
_KINDS = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


class FormatError(ValueError):
    pass


def _kind_of(arr: np.ndarray) -> int:
    if arr.dtype == np.float32:
        return 0
    if arr.dtype == np.float64:
        return 1
    raise FormatError(f"unsupported scalar kind {arr.dtype}")


def _read_exact(f, n: int, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise FormatError(f"truncated file while reading {what}")
    return data


def _write_array(f, arr: np.ndarray) -> None:
    kind = _kind_of(arr)
    if arr.ndim > 255:
        raise FormatError("too many dimensions")
    f.write(struct.pack("<BB", kind, arr.ndim))
    f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    f.write(np.ascontiguousarray(arr, dtype=_KINDS[kind]).tobytes())


def _read_array(f, what: str) -> np.ndarray:
    kind, ndim = struct.unpack("<BB", _read_exact(f, 2, what))
    if kind not in _KINDS:
        raise FormatError(f"{what}: unknown scalar kind {kind}")
    dims = struct.unpack(f"<{ndim}I", _read_exact(f, 4 * ndim, what))
    dtype = _KINDS[kind]
    count = int(np.prod(dims, dtype=np.int64))
    payload = _read_exact(f, count * dtype.itemsize, what)
    return np.frombuffer(payload, dtype=dtype).reshape(dims).astype(dtype.newbyteorder("="))


def write_tvmt(path: str | os.PathLike, arr) -> None:
    arr = np.asarray(getattr(arr, "data", arr))
    with open(path, "wb") as f:
        f.write(TVMT_MAGIC + struct.pack("<B", VERSION))
        _write_array(f, arr)


def read_tvmt(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as f:
        if _read_exact(f, 4, "magic") != TVMT_MAGIC:
            raise FormatError(f"{path}: bad magic, not a TVMT file")
        (version,) = struct.unpack("<B", _read_exact(f, 1, "version"))
        if version != VERSION:
            raise FormatError(f"{path}: unsupported TVMT version {version}")
        arr = _read_array(f, "tensor")
        if f.read(1):
            raise FormatError(f"{path}: trailing bytes after payload")
    return arr


def encode_weights(items: list[tuple[str, np.ndarray]]) -> bytes:
    buf = io.BytesIO()
    buf.write(TVMW_MAGIC + struct.pack("<BI", VERSION, len(items)))
    for name, arr in items:
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)) + raw)
        _write_array(buf, np.asarray(arr))
    return buf.getvalue()


def decode_weights(data: bytes) -> dict[str, np.ndarray]:
    f = io.BytesIO(data)
    if _read_exact(f, 4, "magic") != TVMW_MAGIC:
        raise FormatError("bad magic, not a TVMW file")
    version, count = struct.unpack("<BI", _read_exact(f, 5, "header"))
    if version != VERSION:
        raise FormatError(f"unsupported TVMW version {version}")
    out: dict[str, np.ndarray] = {}
    for i in range(count):
        (n,) = struct.unpack("<H", _read_exact(f, 2, f"entry {i} name length"))
        name = _read_exact(f, n, f"entry {i} name").decode("utf-8")
        out[name] = _read_array(f, f"entry {name!r}")
    if f.read(1):
        raise FormatError("trailing bytes after last entry")
    return out


def save_weights(model: Module, path: str | os.PathLike) -> None:
    with open(path, "wb") as f:
        f.write(encode_weights(model.state_items()))


def load_weights(model: Module, path: str | os.PathLike) -> None:
    """Load parameters and buffers by name; every entry must match in shape."""
    with open(path, "rb") as f:
        entries = decode_weights(f.read())
    params = dict(model.named_parameters())
    buffers = dict(model.named_buffers())
    for name, arr in entries.items():
        target = params[name].data if name in params else buffers.get(name)
        if target is not None and target.shape != arr.shape:
            raise FormatError(f"shape mismatch for {name!r}: file {arr.shape}, model {target.shape}")
    expected = set(params) | set(buffers)
    missing = expected - set(entries)
    extra = set(entries) - expected
    if missing or extra:
        raise FormatError(f"entry mismatch: missing {sorted(missing)[:5]}, unexpected {sorted(extra)[:5]}")
    for name, arr in entries.items():
        if name in params:
            params[name].data = arr.astype(params[name].dtype)
        else:
            buffers[name][...] = arr
