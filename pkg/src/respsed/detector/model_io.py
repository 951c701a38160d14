"""Versioned little-endian binary model files."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .model import ModelParams, ShapeError

MAGIC = b"RSDM"
VERSION = 1


class ModelFormatError(ValueError):
    pass


def dumps_model(m: ModelParams) -> bytes:
    head = [MAGIC, struct.pack("<B1sH", VERSION, m.task.encode("ascii"), len(m.tensors))]
    body = []
    for name, arr in m.tensors.items():
        encoded = name.encode("ascii")
        head.append(struct.pack("<B", len(encoded)) + encoded)
        head.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        body.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(head + body)


def loads_model(data: bytes) -> ModelParams:
    if data[:4] != MAGIC:
        raise ModelFormatError("corrupt model file: bad magic")
    try:
        version, task, n = struct.unpack_from("<B1sH", data, 4)
        if version != VERSION:
            raise ModelFormatError(f"unsupported model version {version}, expected {VERSION}")
        pos = 8
        table = []
        for _ in range(n):
            (name_len,) = struct.unpack_from("<B", data, pos)
            name = data[pos + 1:pos + 1 + name_len].decode("ascii")
            pos += 1 + name_len
            (ndim,) = struct.unpack_from("<B", data, pos)
            shape = struct.unpack_from(f"<{ndim}I", data, pos + 1)
            pos += 1 + 4 * ndim
            table.append((name, shape))
        tensors = {}
        for name, shape in table:
            size = int(np.prod(shape)) * 8
            if pos + size > len(data):
                raise ModelFormatError("corrupt model file: truncated data")
            tensors[name] = np.frombuffer(data, dtype="<f8", count=size // 8, offset=pos).reshape(shape)
            pos += size
    except (struct.error, UnicodeDecodeError) as exc:
        raise ModelFormatError(f"corrupt model file: {exc}") from exc
    if pos != len(data):
        raise ModelFormatError("corrupt model file: trailing bytes")
    try:
        return ModelParams(tensors, task.decode("ascii"))
    except (ShapeError, KeyError) as exc:
        raise ModelFormatError(f"corrupt model file: {exc}") from exc


def save_model(path: str | Path, m: ModelParams) -> None:
    Path(path).write_bytes(dumps_model(m))


def load_model(path: str | Path) -> ModelParams:
    return loads_model(Path(path).read_bytes())
