"""Checkpoint container: magic, JSON header, raw little-endian tensor payloads."""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"GAS2SCKP"
FORMAT_VERSION = 1


class CheckpointError(Exception):
    pass


def save_checkpoint(path: str | Path, tensors: dict[str, np.ndarray], header: dict) -> Path:
    """Write ``tensors`` (name -> array) after a JSON header holding ``header`` plus the tensor directory."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    directory, blobs, offset = {}, [], 0
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        blob = le.tobytes()
        directory[name] = {"shape": list(arr.shape), "dtype": le.dtype.str, "offset": offset, "nbytes": len(blob)}
        blobs.append(blob)
        offset += len(blob)
    head = dict(header)
    head["format_version"] = FORMAT_VERSION
    head["tensors"] = directory
    raw = json.dumps(head, sort_keys=True).encode()
    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(raw)))
        fh.write(raw)
        for blob in blobs:
            fh.write(blob)
    tmp.replace(path)
    return path


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    data = path.read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint file")
    (n,) = struct.unpack("<Q", data[8:16])
    header = json.loads(data[16 : 16 + n])
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format {header.get('format_version')}")
    base = 16 + n
    tensors = {}
    for name, info in header["tensors"].items():
        start = base + info["offset"]
        buf = data[start : start + info["nbytes"]]
        arr = np.frombuffer(buf, dtype=np.dtype(info["dtype"])).reshape(tuple(info["shape"]))
        tensors[name] = arr.astype(arr.dtype.newbyteorder("="))
    return tensors, header
