"""Deterministic labeled RNG substreams.

Every random draw in the package comes from a generator built here, so a run
is a pure function of its seeds. A stream is addressed by a tuple of labels
(ints and strings); hashing the labels keeps streams for different purposes
(batch order, failure injection, Hutchinson probes, ...) independent without
any global state. Hashes are stable across processes and platforms.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _label_entropy(label) -> int:
    if isinstance(label, (bool,)):
        raise TypeError("bool is ambiguous as a stream label")
    if isinstance(label, (int, np.integer)):
        data = b"i" + int(label).to_bytes(16, "little", signed=True)
    elif isinstance(label, str):
        data = b"s" + label.encode("utf-8")
    else:
        raise TypeError(f"unsupported stream label type: {type(label)!r}")
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "little")


def derive_seed(*labels) -> int:
    """Collapse a label tuple into one 64-bit seed."""
    h = hashlib.blake2b(digest_size=8)
    for label in labels:
        h.update(_label_entropy(label).to_bytes(8, "little"))
    return int.from_bytes(h.digest(), "little")


def substream(*labels) -> np.random.Generator:
    """Independent PCG64 generator addressed by a label tuple."""
    entropy = [_label_entropy(label) for label in labels]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
