"""Versioned binary checkpoints.

Layout (little endian)::

    b"BVDC" | u16 version | u32 meta length | meta JSON
    u32 layer count
    per layer: u32 name length | name | u32 spec length | spec JSON | u16 param count
    per layer, per param: u16 key length | key | u8 dtype code | u8 ndim | u32 dims... | raw bytes

The spec table comes first so a reader can rebuild the network before
touching any parameter blob.
"""

from __future__ import annotations

import io
import json
import os
import struct

import numpy as np

from .layers import Layer, LayerSpec, build_layer

MAGIC = b"BVDC"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {v: k for k, v in _DTYPES.items()}


class CheckpointError(ValueError):
    pass


def _write_str(buf, s: str, fmt: str = "<I"):
    b = s.encode("utf-8")
    buf.write(struct.pack(fmt, len(b)))
    buf.write(b)


def checkpoint_to_bytes(layers, meta: dict | None = None) -> bytes:
    """Serialize ``layers``, an iterable of ``(name, Layer)`` pairs."""
    layers = list(layers)
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<H", VERSION))
    _write_str(buf, json.dumps(meta or {}, sort_keys=True))
    buf.write(struct.pack("<I", len(layers)))
    for name, layer in layers:
        _write_str(buf, name)
        _write_str(buf, json.dumps(layer.spec.to_dict(), sort_keys=True))
        buf.write(struct.pack("<H", len(layer.params)))
    for _, layer in layers:
        for key in sorted(layer.params):
            arr = layer.params[key]
            dt = arr.dtype.newbyteorder("<")
            if dt not in _CODES:
                raise CheckpointError(f"unsupported dtype {arr.dtype}")
            _write_str(buf, key, "<H")
            buf.write(struct.pack("<BB", _CODES[dt], arr.ndim))
            buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            buf.write(np.ascontiguousarray(arr, dtype=dt).tobytes())
    return buf.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("truncated checkpoint")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self, fmt: str = "<I") -> str:
        (n,) = self.unpack(fmt)
        return self.take(n).decode("utf-8")


def checkpoint_from_bytes(data: bytes) -> tuple[list[tuple[str, Layer]], dict]:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    (version,) = r.unpack("<H")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    meta = json.loads(r.string())
    (count,) = r.unpack("<I")
    table = []
    for _ in range(count):
        name = r.string()
        spec = LayerSpec.from_dict(json.loads(r.string()))
        (nparams,) = r.unpack("<H")
        table.append((name, spec, nparams))
    layers = []
    for name, spec, nparams in table:
        layer = build_layer(spec)
        if nparams != len(layer.params):
            raise CheckpointError(f"{name}: expected {len(layer.params)} parameters, found {nparams}")
        for _ in range(nparams):
            key = r.string("<H")
            code, ndim = r.unpack("<BB")
            if code not in _DTYPES:
                raise CheckpointError(f"unknown dtype code {code}")
            shape = r.unpack(f"<{ndim}I")
            dt = _DTYPES[code]
            count_ = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(r.take(count_ * dt.itemsize), dtype=dt).reshape(shape).astype(dt.newbyteorder("="))
            if key not in layer.params or layer.params[key].shape != arr.shape:
                raise CheckpointError(f"{name}.{key}: shape/key mismatch with layer spec")
            layer.params[key] = arr
        layer.zero_grad()
        layers.append((name, layer))
    if r.pos != len(data):
        raise CheckpointError("trailing bytes after checkpoint")
    return layers, meta


def save_checkpoint(path, layers, meta: dict | None = None) -> None:
    data = checkpoint_to_bytes(layers, meta)
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[list[tuple[str, Layer]], dict]:
    with open(path, "rb") as f:
        return checkpoint_from_bytes(f.read())


def load_into(layers, loaded) -> None:
    """Copy parameters of ``loaded`` into same-named ``layers``."""
    src = dict(loaded)
    for name, layer in layers:
        if name not in src:
            raise CheckpointError(f"checkpoint lacks layer {name}")
        if src[name].spec != layer.spec:
            raise CheckpointError(f"{name}: layer spec differs from checkpoint")
        for k in layer.params:
            layer.params[k] = src[name].params[k].astype(layer.params[k].dtype)
        layer.zero_grad()
