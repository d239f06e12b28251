"""Binary checkpoint format.

Layout (all integers unsigned 32-bit little-endian)::

    b"CXRC" | version | len | JSON descriptor (UTF-8) | count |
    count x ( len | name (UTF-8) | rank | dims... | float32 LE payload )

The JSON descriptor holds ``{"spec": ModelSpec, "metadata": {...}}``.
Parameters are stored as float32 whatever the in-memory precision.
"""
import json
import os
import struct
from pathlib import Path

import numpy as np

from .models import Model, ModelSpec

MAGIC = b"CXRC"
FORMAT_VERSION = 1
_U32 = struct.Struct("<I")


class CheckpointError(Exception):
    pass


class BadMagicError(CheckpointError):
    pass


class UnsupportedVersionError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class SpecMismatchError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return _U32.pack(len(raw)) + raw


def encode_checkpoint(model: Model, metadata=None) -> bytes:
    meta = dict(model.metadata)
    meta.update(metadata or {})
    descriptor = json.dumps({"spec": model.spec.to_dict(), "metadata": meta}, sort_keys=True)
    parts = [MAGIC, _U32.pack(FORMAT_VERSION), _pack_str(descriptor)]
    state = model.state()
    parts.append(_U32.pack(len(state)))
    for name, arr in state.items():
        parts.append(_pack_str(name))
        parts.append(_U32.pack(arr.ndim))
        parts.extend(_U32.pack(d) for d in arr.shape)
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def save_checkpoint(model: Model, path, metadata=None):
    """Write ``model`` atomically (temp file then rename)."""
    path = Path(path)
    payload = encode_checkpoint(model, metadata)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)
    return path


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedCheckpointError(
                f"checkpoint truncated: wanted {n} bytes at offset {self.pos}, file has {len(self.buf)}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]

    def string(self) -> str:
        return self.take(self.u32()).decode("utf-8")


def decode_checkpoint(buf: bytes, expected_name=None, dtype=np.float32, seed=0) -> Model:
    r = _Reader(buf)
    if r.take(4) != MAGIC:
        raise BadMagicError("not a checkpoint file (bad magic bytes)")
    version = r.u32()
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"unsupported checkpoint version {version}")
    try:
        descriptor = json.loads(r.string())
        spec = ModelSpec.from_dict(descriptor["spec"])
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as e:
        raise CheckpointError(f"corrupt model descriptor: {e}") from e
    if expected_name is not None and spec.name != expected_name:
        raise SpecMismatchError(f"checkpoint holds {spec.name!r}, expected {expected_name!r}")
    tensors = {}
    for _ in range(r.u32()):
        name = r.string()
        shape = tuple(r.u32() for _ in range(r.u32()))
        count = int(np.prod(shape)) if shape else 1
        tensors[name] = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(shape)
    if r.pos != len(buf):
        raise CheckpointError(f"{len(buf) - r.pos} trailing bytes after parameters")
    try:
        model = Model(spec, seed=seed, dtype=dtype)
    except (ValueError, KeyError, TypeError) as e:
        raise CheckpointShapeError(f"descriptor does not describe a valid model: {e}") from e
    state = model.state()
    if set(state) != set(tensors):
        missing = sorted(set(state) - set(tensors))
        extra = sorted(set(tensors) - set(state))
        raise CheckpointShapeError(f"parameter names differ from spec (missing {missing}, extra {extra})")
    for name, layer, pname in model.named_parameters():
        arr = tensors[name]
        if arr.shape != layer.params[pname].shape:
            raise CheckpointShapeError(
                f"{name}: stored shape {arr.shape}, spec needs {layer.params[pname].shape}")
        layer.params[pname] = arr.astype(dtype)
    model.metadata = dict(descriptor.get("metadata", {}))
    return model


def load_checkpoint(path, expected_name=None, dtype=np.float32, seed=0) -> Model:
    """Read a checkpoint; ``expected_name`` guards against loading the wrong architecture.

    ``seed`` only seeds the dropout masks of the rebuilt model.
    """
    with open(path, "rb") as fh:
        buf = fh.read()
    return decode_checkpoint(buf, expected_name, dtype, seed)
