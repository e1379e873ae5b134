"""Versioned checkpoint files.

Layout: magic b"TLERC1", an 8-byte little-endian header length, a compact
JSON header (kind, config, param names/shapes/offsets in insertion
order), then raw little-endian float32 payloads. Values are widened to
float64 in memory; save -> load -> save is byte-identical because every
on-disk float32 survives the widening round trip exactly.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, SchemaError

MAGIC = b"TLERC1"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    kind: str
    config: dict
    params: dict[str, np.ndarray]
    version: int = FORMAT_VERSION

    def param_names(self):
        return list(self.params)


def save_checkpoint(ckpt: Checkpoint, path):
    entries = []
    payload = bytearray()
    for name, arr in ckpt.params.items():
        arr32 = np.ascontiguousarray(arr, dtype="<f4")
        entries.append({"name": name, "shape": list(arr.shape), "offset": len(payload)})
        payload.extend(arr32.tobytes())
    header_obj = {
        "version": ckpt.version,
        "kind": ckpt.kind,
        "config": ckpt.config,
        "params": entries,
    }
    header = json.dumps(header_obj, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        fh.write(bytes(payload))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: not a checkpoint file (bad magic)")
    off = len(MAGIC)
    (header_len,) = struct.unpack_from("<Q", blob, off)
    off += 8
    try:
        header = json.loads(blob[off:off + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"{path}: corrupt header ({e})") from None
    off += header_len
    if header.get("version") != FORMAT_VERSION:
        raise SchemaError(f"{path}: unsupported format version {header.get('version')!r}")
    payload = blob[off:]
    params: dict[str, np.ndarray] = {}
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        end = start + 4 * count
        if end > len(payload):
            raise FormatError(f"{path}: payload truncated for parameter {entry['name']!r}")
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=start)
        params[entry["name"]] = arr.reshape(shape).astype(np.float64)
    return Checkpoint(kind=header["kind"], config=header["config"], params=params,
                      version=header["version"])
