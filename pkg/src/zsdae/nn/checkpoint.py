"""Checkpoint I/O.

Layout: an 8-byte little-endian header length ``n``, ``n`` bytes of UTF-8 JSON,
then the raw little-endian float32 payloads at the offsets the header lists
(offsets are relative to the start of the payload block).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .autograd import Tensor
from .model import ModelConfig, ModelParams

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, params: ModelParams, extra=None):
    entries = []
    blobs = []
    offset = 0
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name].data, dtype="<f4")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": arr.nbytes})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header = {
        "format_version": FORMAT_VERSION,
        "hyper": params.cfg.to_dict(),
        "params": entries,
        "extra": extra or {},
    }
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(raw)))
        fh.write(raw)
        for b in blobs:
            fh.write(b)


def read_header(path):
    with open(path, "rb") as fh:
        (n,) = struct.unpack("<Q", fh.read(8))
        return json.loads(fh.read(n).decode("utf-8")), 8 + n


def load_checkpoint(path, dtype=np.float32):
    """Returns ``(params, extra)``; shapes are validated against the header and config."""
    header, start = read_header(path)
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {header.get('format_version')}")
    cfg = ModelConfig(**header["hyper"])
    payload = Path(path).read_bytes()[start:]
    from .model import init_params

    expected = {k: v.shape for k, v in init_params(cfg).items()}
    tensors = {}
    for e in header["params"]:
        shape = tuple(e["shape"])
        if expected.get(e["name"]) != shape:
            raise CheckpointError(f"shape mismatch for {e['name']}: {shape} vs {expected.get(e['name'])}")
        if e["nbytes"] != int(np.prod(shape)) * 4 or e["offset"] + e["nbytes"] > len(payload):
            raise CheckpointError(f"bad payload extent for {e['name']}")
        arr = np.frombuffer(payload, dtype="<f4", count=int(np.prod(shape)), offset=e["offset"])
        tensors[e["name"]] = Tensor(arr.reshape(shape).astype(dtype), requires_grad=True, name=e["name"])
    missing = set(expected) - set(tensors)
    if missing:
        raise CheckpointError(f"checkpoint missing parameters: {sorted(missing)[:5]}")
    return ModelParams(cfg, tensors), header["extra"]
