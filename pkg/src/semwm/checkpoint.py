"""Binary checkpoint format.

Layout (all integers little-endian)::

    magic      8 bytes   b"SEMWMCKP"
    version    uint32    FORMAT_VERSION
    hdr_len    uint32    length of the JSON header in bytes
    header     hdr_len   UTF-8 JSON: {"model": {...}, "params": [{"name", "shape"}, ...], "extra": {...}}
    payload    ...       each parameter as little-endian float64, C order, in header order
    crc32      uint32    zlib.crc32 over everything before it
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path
from typing import Optional

import numpy as np

from .models import WorldModel

MAGIC = b"SEMWMCKP"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def to_bytes(model: WorldModel, extra: Optional[dict] = None) -> bytes:
    names = list(model.params)
    header = {
        "model": model.header(),
        "params": [{"name": n, "shape": list(model.params[n].value.shape)} for n in names],
        "extra": extra or {},
    }
    hdr = json.dumps(header, sort_keys=True).encode("utf-8")
    body = bytearray(MAGIC)
    body += struct.pack("<II", FORMAT_VERSION, len(hdr))
    body += hdr
    for n in names:
        body += np.ascontiguousarray(model.params[n].value, dtype="<f8").tobytes()
    body += struct.pack("<I", zlib.crc32(bytes(body)))
    return bytes(body)


def from_bytes(data: bytes) -> tuple[WorldModel, dict]:
    if len(data) < 20 or data[:8] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    (crc,) = struct.unpack("<I", data[-4:])
    if zlib.crc32(data[:-4]) != crc:
        raise CheckpointError("checkpoint is corrupt (checksum mismatch)")
    version, hdr_len = struct.unpack("<II", data[8:16])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {FORMAT_VERSION})")
    header = json.loads(data[16:16 + hdr_len].decode("utf-8"))
    m = header["model"]
    model = WorldModel(m["kind"], m["k"], m["width"], None,
                       relation_hidden=tuple(m["relation_hidden"]), transition_hidden=tuple(m["transition_hidden"]))
    offset = 16 + hdr_len
    values = {}
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) * 8
        if offset + n > len(data) - 4:
            raise CheckpointError("checkpoint is truncated")
        values[entry["name"]] = np.frombuffer(data, dtype="<f8", count=n // 8, offset=offset).reshape(shape).astype(np.float64)
        offset += n
    if offset != len(data) - 4:
        raise CheckpointError("trailing bytes in checkpoint payload")
    model.load_state_dict(values)
    return model, header.get("extra", {})


def save_checkpoint(model: WorldModel, path, extra: Optional[dict] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(to_bytes(model, extra))
    tmp.replace(path)
    return path


def load_checkpoint(path) -> WorldModel:
    return from_bytes(Path(path).read_bytes())[0]


def load_checkpoint_with_extra(path) -> tuple[WorldModel, dict]:
    return from_bytes(Path(path).read_bytes())
