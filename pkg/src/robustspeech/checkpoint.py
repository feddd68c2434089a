"""Deterministic binary checkpoint container.

Layout: an 8-byte magic, an 8-byte little-endian header size, a JSON header
(sorted keys, compact separators), then the raw little-endian tensor payload
in header order. Writing the same state twice yields byte-identical files,
which the resume tests rely on.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .errors import DataError

MAGIC = b"RSCKPT01"

_DTYPES = {
    torch.float32: "<f4",
    torch.float64: "<f8",
    torch.int64: "<i8",
}
_TORCH_DTYPES = {v: k for k, v in _DTYPES.items()}


@dataclass
class Checkpoint:
    config: dict
    tensors: dict
    extra: dict


def save_checkpoint(path, config: dict, tensors: dict, extra: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    entries = []
    payload = bytearray()
    for name in sorted(tensors):
        tensor = tensors[name]
        if torch.is_tensor(tensor):
            if tensor.dtype not in _DTYPES:
                raise DataError(f"unsupported tensor dtype {tensor.dtype} for {name!r}")
            dtype = _DTYPES[tensor.dtype]
            array = tensor.detach().cpu().numpy()
        else:
            array = np.asarray(tensor)
            dtype = array.dtype.newbyteorder("<").str
            if dtype not in _TORCH_DTYPES:
                raise DataError(f"unsupported array dtype {array.dtype} for {name!r}")
        raw = np.ascontiguousarray(array).astype(dtype, copy=False).tobytes()
        entries.append({
            "name": name,
            "dtype": dtype,
            "shape": list(array.shape),
            "offset": len(payload),
            "nbytes": len(raw),
        })
        payload.extend(raw)
    header = json.dumps(
        {"config": config, "extra": extra, "tensors": entries},
        sort_keys=True, separators=(",", ":"),
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        fh.write(payload)


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    blob = path.read_bytes()
    if blob[: len(MAGIC)] != MAGIC:
        raise DataError(f"{path} is not a checkpoint file")
    header_len = struct.unpack("<Q", blob[len(MAGIC):len(MAGIC) + 8])[0]
    header_start = len(MAGIC) + 8
    header = json.loads(blob[header_start:header_start + header_len].decode("utf-8"))
    payload = blob[header_start + header_len:]
    tensors = {}
    for entry in header["tensors"]:
        raw = payload[entry["offset"]:entry["offset"] + entry["nbytes"]]
        array = np.frombuffer(raw, dtype=entry["dtype"]).reshape(entry["shape"]).copy()
        tensors[entry["name"]] = torch.from_numpy(array)
    return Checkpoint(config=header["config"], tensors=tensors, extra=header["extra"])
