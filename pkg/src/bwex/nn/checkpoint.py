"""Binary checkpoint files.

Layout (all integers little-endian u32, all payloads little-endian float32)::

    b"BWEX" | version
    n_records | record * n_records          # parameters, then buffers
    n_records | record * n_records          # optimizer state
    record := name_len | name (UTF-8) | rank | dims[rank] | payload[prod(dims)]

Optimizer records are ``adam.step`` (shape (1,)) followed by ``adam.m/<param>``
and ``adam.v/<param>`` for every parameter that has ADAM state.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from bwex.errors import ShapeError, UsageError
from bwex.nn.tensor import ParamStore

MAGIC = b"BWEX"
VERSION = 1


def _pack_record(name: str, array: np.ndarray) -> bytes:
    array = np.asarray(array)
    if array.ndim == 0:
        array = array.reshape(1)
    raw = name.encode("utf-8")
    head = struct.pack("<I", len(raw)) + raw + struct.pack("<I", array.ndim)
    head += struct.pack(f"<{array.ndim}I", *array.shape)
    return head + np.ascontiguousarray(array, dtype="<f4").tobytes()


def _unpack_records(data: bytes, pos: int) -> tuple[dict[str, np.ndarray], int]:
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", data, pos)
        pos += 4
        name = data[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (rank,) = struct.unpack_from("<I", data, pos)
        pos += 4
        dims = struct.unpack_from(f"<{rank}I", data, pos)
        pos += 4 * rank
        size = int(np.prod(dims)) if rank else 1
        out[name] = np.frombuffer(data, dtype="<f4", count=size, offset=pos).reshape(dims).copy()
        pos += 4 * size
    return out, pos


def save_checkpoint(store: ParamStore, path) -> None:
    model = [(k, t.data) for k, t in store.params.items()] + list(store.buffers.items())
    state = [("adam.step", np.array([store.step], dtype=np.float32))]
    for k in store.params:
        if k in store.m:
            state.append((f"adam.m/{k}", store.m[k]))
            state.append((f"adam.v/{k}", store.v[k]))
    blob = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(model))]
    blob += [_pack_record(k, a) for k, a in model]
    blob.append(struct.pack("<I", len(state)))
    blob += [_pack_record(k, a) for k, a in state]
    Path(path).write_bytes(b"".join(blob))


def read_checkpoint(path) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray]]:
    """Raw ``(model_records, optimizer_records)``."""
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise UsageError(f"{path}: not a BWEX checkpoint (magic {data[:4]!r})")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != VERSION:
        raise UsageError(f"{path}: unsupported checkpoint version {version}")
    model, pos = _unpack_records(data, 8)
    state, _ = _unpack_records(data, pos)
    return model, state


def load_checkpoint(store: ParamStore, path, load_optimizer: bool = True) -> None:
    """Copy checkpoint values into an already-built ``store`` (names and shapes must match)."""
    model, state = read_checkpoint(path)
    expected = list(store.params) + list(store.buffers)
    missing = [k for k in expected if k not in model]
    if missing:
        raise ShapeError(f"{path}: checkpoint lacks {missing[:3]}{'...' if len(missing) > 3 else ''}")
    for k, t in store.params.items():
        if model[k].shape != t.data.shape:
            raise ShapeError(f"{path}: {k} has shape {model[k].shape}, model expects {t.data.shape}")
        t.data[...] = model[k]
        t.grad = None
    for k, buf in store.buffers.items():
        if model[k].shape != buf.shape:
            raise ShapeError(f"{path}: {k} has shape {model[k].shape}, model expects {buf.shape}")
        buf[...] = model[k]
    if load_optimizer:
        store.step = int(state["adam.step"][0]) if "adam.step" in state else 0
        store.m.clear()
        store.v.clear()
        for k, t in store.params.items():
            if f"adam.m/{k}" in state:
                store.m[k] = state[f"adam.m/{k}"].astype(t.data.dtype)
                store.v[k] = state[f"adam.v/{k}"].astype(t.data.dtype)
