"""Versioned binary checkpoint container.

Layout: magic, format version, header length, JSON header, then concatenated
little-endian float64 payloads. The header records the rng seed and the hash
of the config that produced the artifact, plus per-path shape/offset entries.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import ParseError

MAGIC = b"CKGQ"
FORMAT_VERSION = 1


def save_checkpoint(path, arrays: dict[str, np.ndarray], rng_seed: int,
                    config_hash: str) -> None:
    entries = []
    offset = 0
    payloads = []
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype="<f8")
        entries.append({
            "path": name,
            "shape": list(arr.shape),
            "offset": offset,
            "count": int(arr.size),
        })
        payloads.append(arr.tobytes())
        offset += arr.size * 8
    header = {
        "format_version": FORMAT_VERSION,
        "rng_seed": int(rng_seed),
        "config_hash": config_hash,
        "entries": entries,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for chunk in payloads:
            fh.write(chunk)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    """Returns (arrays keyed by path, header dict)."""
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != MAGIC:
        raise ParseError(f"{path}: not a checkpoint container (bad magic)")
    version = struct.unpack_from("<I", raw, 4)[0]
    if version != FORMAT_VERSION:
        raise ParseError(f"{path}: unsupported checkpoint version {version}")
    header_len = struct.unpack_from("<Q", raw, 8)[0]
    header_start = 16
    header = json.loads(raw[header_start:header_start + header_len].decode("utf-8"))
    payload_start = header_start + header_len
    arrays: dict[str, np.ndarray] = {}
    for entry in header["entries"]:
        start = payload_start + entry["offset"]
        count = entry["count"]
        flat = np.frombuffer(raw, dtype="<f8", count=count, offset=start)
        arrays[entry["path"]] = flat.reshape(entry["shape"]).astype(np.float64)
    return arrays, header
