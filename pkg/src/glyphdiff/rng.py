"""Deterministic random streams.

All stochastic draws (noise tensors, corpus shuffles) come from numpy
Generators derived from (seed, stream tag), then cross into torch via
``from_numpy``. This keeps results byte-reproducible across processes
regardless of torch's global RNG state or hash randomization.
"""

from __future__ import annotations

import hashlib

import numpy as np
import torch


def _tag_entropy(tag: str) -> int:
    return int.from_bytes(hashlib.sha256(tag.encode("utf-8")).digest()[:8], "little")


def stream(seed: int, tag: str) -> np.random.Generator:
    """Independent generator for (seed, tag)."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), _tag_entropy(tag)]))


def randn(rng: np.random.Generator, *shape: int, dtype=torch.float32) -> torch.Tensor:
    """Standard-normal torch tensor drawn from a numpy generator."""
    arr = rng.standard_normal(size=shape, dtype=np.float64)
    return torch.from_numpy(arr).to(dtype)


def stable_hash(text: str, buckets: int) -> int:
    """Process-independent hash of a string into [0, buckets)."""
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") % buckets
