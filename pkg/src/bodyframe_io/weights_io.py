"""Versioned binary container for model weights.

Layout (little-endian):

    bytes 0..3    magic b"BFWT"
    bytes 4..5    format version, uint16 (currently 1)
    bytes 6..7    reserved, zero
    bytes 8..11   header length H, uint32
    bytes 12..    H bytes of UTF-8 JSON:
                      {"variant": str,
                       "meta": {...},
                       "arrays": [{"name", "shape", "dtype"}, ...]}
    then          raw C-order array payloads, concatenated in listed order

All arrays are stored as float64. `variant` tags what the weights are
for (e.g. "affine-corrector-v1", "motion-net-v1") so loaders can refuse
files meant for a different model.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import DataError, ParseError

MAGIC = b"BFWT"
VERSION = 1

_PREFIX = struct.Struct("<4sHHI")


def save_weights(path, variant: str, arrays: dict, meta: dict | None = None):
    """Write named float64 arrays plus JSON-serializable metadata."""
    entries = []
    payload = bytearray()
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype=np.float64)
        entries.append({"name": name, "shape": list(arr.shape), "dtype": "float64"})
        payload += arr.tobytes()
    header = json.dumps(
        {"variant": variant, "meta": meta or {}, "arrays": entries},
        sort_keys=True,
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, VERSION, 0, len(header)))
        fh.write(header)
        fh.write(payload)


def load_weights(path, expected_variant: str | None = None):
    """Read a container; returns (variant, meta, {name: array})."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _PREFIX.size:
        raise ParseError(f"{path}: truncated weight file")
    magic, version, _, header_len = _PREFIX.unpack_from(blob, 0)
    if magic != MAGIC:
        raise ParseError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise ParseError(f"{path}: unsupported version {version}")
    try:
        header = json.loads(blob[_PREFIX.size : _PREFIX.size + header_len])
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"{path}: corrupt header: {exc}") from None
    variant = header.get("variant", "")
    if expected_variant is not None and variant != expected_variant:
        raise DataError(
            f"{path}: weight variant {variant!r}, expected {expected_variant!r}"
        )
    arrays = {}
    offset = _PREFIX.size + header_len
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(blob):
            raise ParseError(f"{path}: payload shorter than declared arrays")
        arrays[entry["name"]] = (
            np.frombuffer(blob[offset:end], dtype=np.float64).reshape(shape).copy()
        )
        offset = end
    return variant, header.get("meta", {}), arrays
