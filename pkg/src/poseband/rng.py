"""Seeded random streams.

Every random draw in the package derives from one 64-bit run seed through
Philox, a counter-based bit generator, so outputs reproduce bit-for-bit
across platforms and are independent of execution schedule. Independent
streams are obtained by hashing a tuple of labels (strings or ints) into
the second word of the 128-bit Philox key:

    key = (seed, fnv1a64(labels))

Distinct label tuples give statistically independent streams for the same
seed; the same (seed, labels) pair always yields the same stream.
"""
from __future__ import annotations

import numpy as np

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def _label_hash(labels) -> int:
    h = _FNV_OFFSET
    for label in labels:
        if isinstance(label, str):
            data = label.encode("utf-8")
        elif isinstance(label, (int, np.integer)):
            data = int(label).to_bytes(8, "little", signed=True)
        else:
            raise TypeError(f"stream labels must be str or int, got {type(label)!r}")
        for byte in data:
            h = ((h ^ byte) * _FNV_PRIME) & _MASK64
    return h


def stream(seed: int, *labels) -> np.random.Generator:
    """Return the named Philox stream for ``seed`` and ``labels``."""
    key = np.array([int(seed) & _MASK64, _label_hash(labels)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def substream_seeds(seed: int, n: int, *labels) -> np.ndarray:
    """Draw ``n`` 63-bit child seeds from the named stream.

    Used where a component needs its own seed (e.g. one per tree or per
    training step) while staying derived from the single run seed.
    """
    return stream(seed, *labels).integers(0, 2**63, size=n, dtype=np.int64)
