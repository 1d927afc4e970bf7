"""Deterministic PRNG substreams derived from a single 64-bit seed.

Splitting rule: a substream named by (seed, tag_1, ..., tag_k) is a
numpy Generator built from SeedSequence([seed, h(tag_1), ..., h(tag_k)])
where h is crc32 for strings and identity for ints.  Changing one
substream's consumption (e.g. batch size) never perturbs another.
"""
from __future__ import annotations

import zlib

import numpy as np


def _tag_to_int(tag: str | int) -> int:
    if isinstance(tag, bool):
        raise TypeError("bool is not a valid substream tag")
    if isinstance(tag, int):
        return tag & 0xFFFFFFFF
    return zlib.crc32(tag.encode("utf-8"))


def substream(seed: int, *tags: str | int) -> np.random.Generator:
    """Independent, reproducible Generator for the given (seed, tags) path."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [_tag_to_int(t) for t in tags]
    return np.random.default_rng(np.random.SeedSequence(entropy))
