"""Versioned binary checkpoint container.

Layout (all integers little-endian):

    bytes 0..3    magic  b"MZCK"
    bytes 4..7    u32    format version (currently 1)
    bytes 8..15   u64    training step
    bytes 16..19  u32    header length H
    bytes 20..    H bytes of JSON: {"config": ModelConfig fields,
                  "tensors": [{"name", "shape", "dtype": "float32"}, ...]}
    then          each tensor's raw bytes, row-major float32,
                  in exactly the header's order

Tensors are stored as 32-bit floats regardless of the in-memory dtype;
loading casts back to the config's dtype. JSON keys are sorted, so a given
(params, config, step) always produces identical bytes.
"""

from __future__ import annotations

import dataclasses
import json
import os
import struct

import numpy as np

from .errors import CorruptCheckpoint, VersionMismatch
from .model import ModelConfig, ModelParams, param_shapes

MAGIC = b"MZCK"
VERSION = 1


def save_checkpoint(path: str, params: ModelParams, cfg: ModelConfig, step: int) -> None:
    tensors = [
        {"name": name, "shape": list(arr.shape), "dtype": "float32"}
        for name, arr in params.items()
    ]
    header = json.dumps(
        {"config": dataclasses.asdict(cfg), "tensors": tensors},
        sort_keys=True,
        separators=(",", ":"),
    ).encode()
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", step))
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for name, arr in params.items():
            fh.write(np.ascontiguousarray(arr, dtype=np.float32).tobytes())
    os.replace(tmp, path)


def _read_exact(fh, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise CorruptCheckpoint(f"truncated checkpoint while reading {what}")
    return buf


def load_checkpoint(
    path: str, expect_arch: str | None = None
) -> tuple[ModelParams, ModelConfig, int]:
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, "magic") != MAGIC:
            raise CorruptCheckpoint("bad magic; not a checkpoint file")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != VERSION:
            raise VersionMismatch(f"checkpoint format v{version}, expected v{VERSION}")
        (step,) = struct.unpack("<Q", _read_exact(fh, 8, "step"))
        (hlen,) = struct.unpack("<I", _read_exact(fh, 4, "header length"))
        try:
            header = json.loads(_read_exact(fh, hlen, "header"))
            cfg = ModelConfig(**header["config"])
            specs = header["tensors"]
        except (ValueError, TypeError, KeyError) as exc:
            raise CorruptCheckpoint(f"unreadable header: {exc}") from exc
        if expect_arch is not None and cfg.arch != expect_arch:
            raise VersionMismatch(
                f"checkpoint holds a {cfg.arch} model, expected {expect_arch}"
            )
        expected = param_shapes(cfg)
        if [s["name"] for s in specs] != list(expected):
            raise CorruptCheckpoint("tensor list does not match the config")
        params: ModelParams = {}
        for spec in specs:
            shape = tuple(spec["shape"])
            if shape != expected[spec["name"]]:
                raise CorruptCheckpoint(f"tensor {spec['name']} has shape {shape}")
            count = int(np.prod(shape, dtype=np.int64)) if shape else 1
            raw = _read_exact(fh, 4 * count, spec["name"])
            arr = np.frombuffer(raw, dtype="<f4").reshape(shape)
            params[spec["name"]] = arr.astype(cfg.np_dtype)
        if fh.read(1):
            raise CorruptCheckpoint("trailing bytes after tensor payload")
    return params, cfg, step
