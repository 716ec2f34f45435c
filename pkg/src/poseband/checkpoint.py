"""Binary checkpoint container: JSON header + little-endian array payload.

Layout::

    bytes 0..7    magic b"PBCKPT01"
    bytes 8..11   uint32 (little-endian) header length H
    bytes 12..12+H-1   UTF-8 JSON header
    remainder     raw array bytes, C order, little-endian, in header order

The header is ``{"format": 1, "meta": {...}, "arrays": [{"name", "dtype",
"shape"}, ...]}`` where ``meta`` carries layer specs, seeds and training
metadata as plain JSON. All model checkpoints in the package (networks,
forests, method bundles) use this one container.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ValidationError

MAGIC = b"PBCKPT01"
_ALLOWED_KINDS = {"f", "i", "u", "b"}


def save_checkpoint(path, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    """Write ``meta`` and named arrays to ``path``."""
    entries = []
    blobs = []
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        if arr.dtype.kind not in _ALLOWED_KINDS:
            raise ValidationError(f"unsupported dtype {arr.dtype} for array {name!r}")
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        entries.append(
            {"name": name, "dtype": le.dtype.str, "shape": list(arr.shape)}
        )
        blobs.append(np.ascontiguousarray(le).tobytes())
    header = json.dumps(
        {"format": 1, "meta": meta, "arrays": entries}, sort_keys=True
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Read back ``(meta, arrays)`` written by :func:`save_checkpoint`."""
    data = Path(path).read_bytes()
    if data[: len(MAGIC)] != MAGIC:
        raise ValidationError(f"{path}: not a poseband checkpoint")
    (hlen,) = struct.unpack_from("<I", data, len(MAGIC))
    start = len(MAGIC) + 4
    try:
        header = json.loads(data[start : start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValidationError(f"{path}: corrupt checkpoint header") from exc
    if header.get("format") != 1:
        raise ValidationError(f"{path}: unsupported checkpoint format")
    offset = start + hlen
    arrays: dict[str, np.ndarray] = {}
    for entry in header["arrays"]:
        dtype = np.dtype(entry["dtype"])
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = dtype.itemsize * count
        if offset + nbytes > len(data):
            raise ValidationError(f"{path}: truncated checkpoint payload")
        arr = np.frombuffer(data, dtype=dtype, count=count, offset=offset).reshape(shape)
        arrays[entry["name"]] = arr.copy()
        offset += nbytes
    return header["meta"], arrays
