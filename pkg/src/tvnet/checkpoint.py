"""Checkpoint files: a text manifest followed by raw little-endian tensor payloads.

Layout::

    TVNET-CHECKPOINT 1
    meta {"c_in": ..., "config": {...}, ...}
    tensor <name> <d0,d1,...> <dtype> <offset> <nbytes>
    ...
    end <payload nbytes>
    <payload bytes, in manifest order>

Offsets are relative to the first payload byte.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .config import TaskConfig

MAGIC = "TVNET-CHECKPOINT 1"
_DTYPES = {"f4": np.dtype("<f4"), "f8": np.dtype("<f8")}


class CheckpointError(ValueError):
    pass


def _dtype_tag(arr: np.ndarray) -> str:
    if arr.dtype == np.float32:
        return "f4"
    if arr.dtype == np.float64:
        return "f8"
    raise CheckpointError(f"unsupported dtype {arr.dtype}")


def to_bytes(model) -> bytes:
    meta = {"config": model.config.to_dict(), "c_in": model.c_in, "c_out": model.c_out,
            "num_classes": model.num_classes, "seq_len": model.seq_len, "best_val_loss": model.best_val_loss}
    lines = [MAGIC, "meta " + json.dumps(meta, sort_keys=True)]
    chunks, offset = [], 0
    for name, arr in model.state_dict().items():
        tag = _dtype_tag(arr)
        raw = np.ascontiguousarray(arr, dtype=_DTYPES[tag]).tobytes()
        shape = ",".join(str(d) for d in arr.shape) or "-"
        lines.append(f"tensor {name} {shape} {tag} {offset} {len(raw)}")
        chunks.append(raw)
        offset += len(raw)
    lines.append(f"end {offset}")
    return ("\n".join(lines) + "\n").encode("utf-8") + b"".join(chunks)


def save_checkpoint(model, path) -> None:
    Path(path).write_bytes(to_bytes(model))


def from_bytes(blob: bytes):
    from .model import TVNet

    header_end = blob.find(b"\nend ")
    if not blob.startswith(MAGIC.encode()) or header_end < 0:
        raise CheckpointError("not a TVNet checkpoint (missing magic or end marker)")
    line_end = blob.find(b"\n", header_end + 1)
    if line_end < 0:
        raise CheckpointError("truncated manifest")
    lines = blob[:line_end].decode("utf-8").split("\n")
    payload = blob[line_end + 1:]
    declared = int(lines[-1].split()[1])
    meta, entries = None, []
    for line in lines[1:-1]:
        kind, _, rest = line.partition(" ")
        if kind == "meta":
            meta = json.loads(rest)
        elif kind == "tensor":
            name, shape, tag, offset, nbytes = rest.split()
            entries.append((name, () if shape == "-" else tuple(int(d) for d in shape.split(",")),
                            tag, int(offset), int(nbytes)))
        else:
            raise CheckpointError(f"unknown manifest line {line!r}")
    if meta is None:
        raise CheckpointError("manifest has no meta line")
    state = {}
    for name, shape, tag, offset, nbytes in entries:
        dtype = _DTYPES.get(tag)
        if dtype is None:
            raise CheckpointError(f"tensor {name}: unknown dtype tag {tag!r}")
        if nbytes != int(np.prod(shape)) * dtype.itemsize:
            raise CheckpointError(f"tensor {name}: manifest length {nbytes} does not match shape {shape}")
        if offset + nbytes > len(payload):
            raise CheckpointError(f"tensor {name}: payload truncated ({len(payload)} bytes, need {offset + nbytes})")
        state[name] = np.frombuffer(payload, dtype=dtype, count=int(np.prod(shape)), offset=offset).reshape(shape)
    if declared != len(payload):
        raise CheckpointError(f"payload length {len(payload)} != declared {declared}")
    config = TaskConfig.from_dict(meta["config"])
    model = TVNet(config, meta["c_in"], c_out=meta["c_out"], num_classes=meta["num_classes"],
                  seq_len=meta["seq_len"])
    model.load_state_dict({k: v.astype(v.dtype.newbyteorder("=")) for k, v in state.items()})
    model.best_val_loss = meta.get("best_val_loss")
    return model


def load_checkpoint(path):
    return from_bytes(Path(path).read_bytes())
