"""Checkpoint format: one JSON manifest line, then raw little-endian arrays.

The manifest records, for every parameter, its shape, dtype, and byte
offset into the binary section, together with the model config, the
vocabulary when one is attached, and training-progress counters. The
manifest is canonical (sorted keys), so save -> load -> save is
byte-identical.
"""

from __future__ import annotations

import json
from collections import OrderedDict

import numpy as np

from . import autodiff as ad
from .corpus import Vocab
from .model import ModelConfig, ModelParams

FORMAT_TAG = "softsum-checkpoint-v1"

_DTYPE_CODES = {"float32": "<f4", "float64": "<f8"}


def save_checkpoint(path, params, counters=None, vocab=None):
    """Write params plus metadata; returns the number of bytes written."""
    arrays = OrderedDict()
    offset = 0
    blobs = []
    for key in sorted(params.keys()):
        value = params[key].value
        code = _DTYPE_CODES[str(value.dtype)]
        blob = np.ascontiguousarray(value, dtype=code).tobytes()
        arrays[key] = {
            "shape": list(value.shape),
            "dtype": str(value.dtype),
            "offset": offset,
            "nbytes": len(blob),
        }
        blobs.append(blob)
        offset += len(blob)
    manifest = {
        "format": FORMAT_TAG,
        "config": params.config.to_dict(),
        "counters": dict(counters or {}),
        "vocab": vocab.to_dict() if vocab is not None else None,
        "arrays": arrays,
    }
    header = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(b"\n")
        for blob in blobs:
            fh.write(blob)
    return len(header) + 1 + offset


def load_checkpoint(path):
    """Read a checkpoint; returns (params, counters, vocab)."""
    with open(path, "rb") as fh:
        header = fh.readline()
        body = fh.read()
    try:
        manifest = json.loads(header.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise ValueError(f"{path}: not a checkpoint (bad manifest line)") from err
    if manifest.get("format") != FORMAT_TAG:
        raise ValueError(f"{path}: unknown checkpoint format {manifest.get('format')!r}")
    config = ModelConfig.from_dict(manifest["config"])
    tensors = OrderedDict()
    for key, meta in manifest["arrays"].items():
        code = _DTYPE_CODES[meta["dtype"]]
        start, nbytes = meta["offset"], meta["nbytes"]
        if start + nbytes > len(body):
            raise ValueError(f"{path}: truncated array section for {key!r}")
        arr = np.frombuffer(body[start:start + nbytes], dtype=code)
        arr = arr.reshape(meta["shape"]).astype(meta["dtype"], copy=True)
        tensors[key] = ad.leaf(arr)
    params = ModelParams(config, tensors)
    vocab = Vocab.from_dict(manifest["vocab"]) if manifest.get("vocab") else None
    return params, dict(manifest.get("counters", {})), vocab
