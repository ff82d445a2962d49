"""Binary checkpoints.

Layout, all little-endian::

    b"ECKC"  u32 version  u32 tensor_count
    per tensor: u32 name_len, name (utf-8), u32 rank, u64 dims[rank], f64 payload

Batch-norm running statistics are stored as ``<name>.running_mean`` and
``<name>.running_var`` next to the parameters.
"""

from __future__ import annotations

import struct

import numpy as np

from .autograd import BatchNormState

MAGIC = b"ECKC"
VERSION = 1


def _tensors(params: dict, states: dict | None) -> dict:
    out = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
    for name, st in (states or {}).items():
        out[f"{name}.running_mean"] = st.mean
        out[f"{name}.running_var"] = st.var
    return out


def save_checkpoint(path, params: dict, states: dict | None = None) -> None:
    tensors = _tensors(params, states)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(tensors)))
        for name, arr in tensors.items():
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[dict, dict]:
    """Returns ``(params, states)``."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    pos = 12
    tensors = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        name = buf[pos:pos + n].decode("utf-8")
        pos += n
        (rank,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        shape = struct.unpack_from(f"<{rank}Q", buf, pos)
        pos += 8 * rank
        size = int(np.prod(shape)) if rank else 1
        tensors[name] = np.frombuffer(buf, dtype="<f8", count=size, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * size
    if pos != len(buf):
        raise ValueError(f"{path}: {len(buf) - pos} trailing bytes")
    params, states = {}, {}
    for name in list(tensors):
        if name.endswith(".running_mean"):
            base = name[: -len(".running_mean")]
            states[base] = BatchNormState(tensors.pop(name), tensors.pop(f"{base}.running_var"))
    params.update(tensors)
    return params, states
