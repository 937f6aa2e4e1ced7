"""Binary checkpoint format.

Layout (all little-endian)::

    b"TDNC" | u32 version (=1) | u32 header length | UTF-8 JSON header | payload

The header holds ``{"config": {...}, "tensors": [{name, rows, cols, offset}]}``
where ``offset`` is the byte offset of the tensor inside the payload region.
Tensors are raw float64, row-major, in header order.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .errors import FormatError
from .model import TDNConfig, TDNModel, init_model

MAGIC = b"TDNC"
VERSION = 1
_PREFIX = struct.Struct("<4sII")


def to_bytes(model: TDNModel) -> bytes:
    tensors = []
    chunks = []
    offset = 0
    for p in model.params():
        data = np.ascontiguousarray(p.value, dtype="<f8").tobytes()
        rows, cols = p.shape
        tensors.append({"name": p.name, "rows": rows, "cols": cols, "offset": offset})
        chunks.append(data)
        offset += len(data)
    header = json.dumps(
        {"config": asdict(model.config), "tensors": tensors},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    return _PREFIX.pack(MAGIC, VERSION, len(header)) + header + b"".join(chunks)


def from_bytes(blob: bytes) -> TDNModel:
    if len(blob) < _PREFIX.size:
        raise FormatError(f"checkpoint truncated: {len(blob)} bytes")
    magic, version, hlen = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError(f"bad checkpoint magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    start = _PREFIX.size + hlen
    if len(blob) < start:
        raise FormatError("checkpoint truncated inside header")
    try:
        header = json.loads(blob[_PREFIX.size:start].decode("utf-8"))
        config = TDNConfig(**header["config"])
        entries = header["tensors"]
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"malformed checkpoint header: {exc}") from exc

    model = init_model(config)
    params = model.params()
    if [e.get("name") for e in entries] != [p.name for p in params]:
        raise FormatError("checkpoint tensor list does not match the configured model")
    payload = memoryview(blob)[start:]
    expected = 0
    for entry, p in zip(entries, params):
        rows, cols, off = entry["rows"], entry["cols"], entry["offset"]
        if (rows, cols) != p.shape:
            raise FormatError(f"{p.name}: header shape {(rows, cols)} != model shape {p.shape}")
        if off != expected:
            raise FormatError(f"{p.name}: offset {off} out of order (expected {expected})")
        size = rows * cols * 8
        if off + size > len(payload):
            raise FormatError(f"checkpoint truncated in tensor {p.name}")
        p.value[...] = np.frombuffer(payload[off:off + size], dtype="<f8").reshape(rows, cols)
        expected = off + size
    if expected != len(payload):
        raise FormatError(f"{len(payload) - expected} trailing bytes after last tensor")
    return model


def save_checkpoint(model: TDNModel, path) -> None:
    Path(path).write_bytes(to_bytes(model))


def load_checkpoint(path) -> TDNModel:
    return from_bytes(Path(path).read_bytes())
