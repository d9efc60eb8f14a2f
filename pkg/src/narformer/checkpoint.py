"""Binary checkpoint format for model parameters.

Layout (little-endian): magic ``NARF``, u32 version, u32 tensor count, then per
tensor a u16 name length, the UTF-8 name, u8 rank, u32 dims and f32 data.
Model and encoder configuration go into a JSON sidecar next to the file.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .autodiff import Tensor

MAGIC = b"NARF"
VERSION = 1


class CheckpointError(ValueError):
    pass


class ConfigMismatchError(CheckpointError):
    pass


def sidecar_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def save_checkpoint(params: dict, path: str | Path, meta: dict | None = None) -> None:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(params))]
    for name, value in params.items():
        arr = np.ascontiguousarray(value.data if isinstance(value, Tensor) else value, dtype="<f4")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))
    if meta is not None:
        sidecar_path(path).write_text(json.dumps(meta, indent=2))


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointError("checkpoint is truncated")
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path: str | Path, expected_shapes: dict | None = None) -> dict[str, Tensor]:
    """Read parameters back as float32 tensors.

    With ``expected_shapes`` the tensor names and shapes must match exactly,
    otherwise ConfigMismatchError is raised.
    """
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint: {exc}") from exc
    r = _Reader(blob)
    if r.take(4) != MAGIC:
        raise CheckpointError("bad magic: not a checkpoint file")
    version, count = r.unpack("<II")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    params: dict[str, Tensor] = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        try:
            name = r.take(name_len).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointError("corrupt tensor name") from exc
        (rank,) = r.unpack("<B")
        dims = r.unpack(f"<{rank}I")
        n = int(np.prod(dims)) if rank else 1
        data = np.frombuffer(r.take(4 * n), dtype="<f4").reshape(dims).astype(np.float32)
        if name in params:
            raise CheckpointError(f"duplicate tensor {name!r}")
        params[name] = Tensor(data, requires_grad=True)
    if r.pos != len(blob):
        raise CheckpointError("trailing bytes after the declared tensors")
    if expected_shapes is not None:
        if len(expected_shapes) != len(params):
            raise ConfigMismatchError(
                f"tensor count mismatch: checkpoint has {len(params)}, config expects {len(expected_shapes)}"
            )
        for name, shape in expected_shapes.items():
            if name not in params:
                raise ConfigMismatchError(f"checkpoint lacks tensor {name!r}")
            if params[name].shape != tuple(shape):
                raise ConfigMismatchError(
                    f"config mismatch for {name!r}: checkpoint {params[name].shape}, expected {tuple(shape)}"
                )
    return params


def load_meta(path: str | Path) -> dict:
    side = sidecar_path(path)
    try:
        return json.loads(side.read_text())
    except OSError as exc:
        raise CheckpointError(f"missing checkpoint sidecar {side}") from exc
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupt checkpoint sidecar: {exc}") from exc
