"""Flat binary parameter files.

Layout (little-endian)::

    magic       ASCII bytes, e.g. b"AETCN1" or b"DPANET1"
    n_cfg       uint32
    cfg         n_cfg x int64
    n_params    uint64
    values      n_params x float64
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from glyco.errors import ValidationError


def write_params(path, magic: bytes, cfg_ints, values: np.ndarray) -> None:
    values = np.ascontiguousarray(values, dtype="<f8")
    cfg = np.asarray(list(cfg_ints), dtype="<i8")
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<I", cfg.size))
        fh.write(cfg.tobytes())
        fh.write(struct.pack("<Q", values.size))
        fh.write(values.tobytes())


def read_params(path, magic: bytes) -> tuple[list[int], np.ndarray]:
    raw = Path(path).read_bytes()
    if not raw.startswith(magic):
        raise ValidationError(f"{path}: expected magic {magic!r}, found {raw[:len(magic)]!r}")
    pos = len(magic)
    (n_cfg,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    cfg = np.frombuffer(raw, dtype="<i8", count=n_cfg, offset=pos).tolist()
    pos += 8 * n_cfg
    (n_params,) = struct.unpack_from("<Q", raw, pos)
    pos += 8
    if len(raw) - pos != 8 * n_params:
        raise ValidationError(f"{path}: header announces {n_params} values, file holds {(len(raw) - pos) // 8}")
    values = np.frombuffer(raw, dtype="<f8", count=n_params, offset=pos).astype(np.float64)
    return [int(c) for c in cfg], values
