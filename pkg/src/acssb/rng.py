"""Deterministic named substreams over numpy's counter-based Philox generator."""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["substream", "derive_seed"]


def _key(label) -> int:
    if isinstance(label, (int, np.integer)):
        if label < 0:
            raise ValueError("integer substream labels must be non-negative")
        return int(label)
    digest = hashlib.blake2s(str(label).encode("utf8"), digest_size=4).digest()
    return int.from_bytes(digest, "little")


def substream(seed: int, *labels) -> np.random.Generator:
    """Return the Philox generator for the named substream of ``seed``.

    The same ``(seed, *labels)`` pair always maps to the same stream; distinct
    label tuples give statistically independent streams.  Labels may be
    non-negative integers or strings.
    """
    spawn_key = tuple(_key(lab) for lab in labels)
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=spawn_key)
    return np.random.Generator(np.random.Philox(seq))


def derive_seed(seed: int, *labels) -> int:
    """Fold labels into a 63-bit integer, for handing one component's seed to another."""
    material = repr((int(seed),) + tuple(str(lab) for lab in labels))
    digest = hashlib.blake2s(material.encode("utf8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") >> 1
