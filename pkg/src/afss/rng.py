"""Keyed random streams.

Every random draw in the pipeline comes from a generator derived from
``(seed, sample_id, stage_tag)``, so results do not depend on execution
order or on how many workers process the corpus.
"""
from __future__ import annotations

import hashlib

import numpy as np


def _key_words(text: str) -> list[int]:
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=16).digest()
    return [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]


def rng_for(seed: int, sample_id: str, stage_tag: str) -> np.random.Generator:
    """Independent generator for one (seed, sample, stage) triple."""
    if not 0 <= int(seed) < 2**64:
        raise ValueError(f"seed must fit in 64 bits, got {seed}")
    ss = np.random.SeedSequence(
        entropy=int(seed),
        spawn_key=_key_words(str(sample_id)) + _key_words(str(stage_tag)),
    )
    return np.random.default_rng(ss)


def derive_seed(seed: int, sample_id: str, stage_tag: str) -> int:
    """A 63-bit integer seed derived from the same key (for torch, subprocesses)."""
    return int(rng_for(seed, sample_id, stage_tag).integers(0, 2**63 - 1))
