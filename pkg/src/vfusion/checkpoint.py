"""VDCP1 checkpoint files.

Layout (all integers unsigned 64-bit little-endian)::

    b"VDCP1" | entry count | per entry: name length, name (utf-8), rank, dims..., float32 LE data

Optimizer accumulators are stored as ordinary entries under ``optim.v:<param>``.
"""

from __future__ import annotations

import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

from .model import ModelParams
from .tensor import Tensor

MAGIC = b"VDCP1"
OPTIM_PREFIX = "optim.v:"
_U64 = struct.Struct("<Q")


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, params: ModelParams, optimizer_state=None) -> None:
    entries = [(name, t.data) for name, t in params.items()]
    if optimizer_state is not None:
        entries += [(OPTIM_PREFIX + name, v) for name, v in optimizer_state.v.items()]
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_U64.pack(len(entries)))
        for name, arr in entries:
            raw = name.encode("utf-8")
            fh.write(_U64.pack(len(raw)))
            fh.write(raw)
            fh.write(_U64.pack(arr.ndim))
            for d in arr.shape:
                fh.write(_U64.pack(d))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    tmp.replace(path)


def read_entries(path) -> "OrderedDict[str, np.ndarray]":
    """Parse a checkpoint into ``name -> float32 array``; raises CheckpointError naming the bad entry."""
    buf = Path(path).read_bytes()
    if buf[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: bad header (expected {MAGIC!r})")
    pos = len(MAGIC)

    def u64(what):
        nonlocal pos
        if pos + 8 > len(buf):
            raise CheckpointError(f"{path}: truncated while reading {what}")
        (v,) = _U64.unpack_from(buf, pos)
        pos += 8
        return v

    count = u64("entry count")
    out: OrderedDict[str, np.ndarray] = OrderedDict()
    for k in range(count):
        label = f"entry #{k}"
        n = u64(f"{label} name length")
        if pos + n > len(buf):
            raise CheckpointError(f"{path}: truncated in the name of {label}")
        try:
            name = buf[pos:pos + n].decode("utf-8")
        except UnicodeDecodeError:
            raise CheckpointError(f"{path}: undecodable name in {label}") from None
        pos += n
        rank = u64(f"rank of {name!r}")
        if rank > 8:
            raise CheckpointError(f"{path}: implausible rank {rank} for {name!r}")
        shape = tuple(u64(f"dims of {name!r}") for _ in range(rank))
        nbytes = 4 * int(np.prod(shape, dtype=np.int64))
        if pos + nbytes > len(buf):
            raise CheckpointError(f"{path}: truncated data for entry {name!r} "
                                  f"(need {nbytes} bytes, {len(buf) - pos} left)")
        if name in out:
            raise CheckpointError(f"{path}: duplicate entry {name!r}")
        out[name] = np.frombuffer(buf, dtype="<f4", count=nbytes // 4, offset=pos).reshape(shape).astype(np.float32)
        pos += nbytes
    if pos != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - pos} trailing bytes after last entry")
    return out


def load_checkpoint(path, like: ModelParams):
    """Load into a fresh :class:`ModelParams` shaped like ``like``.

    Returns ``(params, optimizer_v)`` where ``optimizer_v`` is ``None`` when the
    file holds no optimizer state.  Every name/shape must agree with ``like``.
    """
    entries = read_entries(path)
    model = OrderedDict((k, v) for k, v in entries.items() if not k.startswith(OPTIM_PREFIX))
    optim = OrderedDict((k[len(OPTIM_PREFIX):], v) for k, v in entries.items() if k.startswith(OPTIM_PREFIX))

    expected = like.census()
    for name, shape in expected.items():
        if name not in model:
            raise CheckpointError(f"{path}: missing entry {name!r}")
        if model[name].shape != shape:
            raise CheckpointError(f"{path}: entry {name!r} has shape {model[name].shape}, "
                                  f"current config expects {shape}")
    extra = [k for k in model if k not in expected]
    if extra:
        raise CheckpointError(f"{path}: unexpected entry {extra[0]!r}")
    for name, v in optim.items():
        if name not in expected or v.shape != expected[name]:
            raise CheckpointError(f"{path}: optimizer entry {name!r} does not match a parameter")

    dtype = next(iter(like.values())).dtype
    tensors = OrderedDict((k, Tensor(model[k].astype(dtype), requires_grad=True, name=k)) for k in expected)
    return ModelParams(like.config, tensors), (optim or None)
