"""Named, independently seeded random streams.

Stream identity is fixed for the lifetime of this repo: a stream is a numpy
PCG64 generator whose 128-bit seed is the SHA-256 of ``"{master_seed}:{stream_id}"``.
Adding a new consumer (new stream id) never perturbs draws of existing streams.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _digest_int(text: str, nbytes: int = 16) -> int:
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:nbytes], "little")


def stream(master_seed: int, stream_id: str) -> np.random.Generator:
    """Return the deterministic generator for (master_seed, stream_id)."""
    return np.random.Generator(np.random.PCG64(_digest_int(f"{master_seed}:{stream_id}")))


def derive_seed(master_seed: int, *parts: object) -> int:
    """Stable 63-bit sub-seed, e.g. per sweep-point: derive_seed(seed, index)."""
    tag = ":".join(str(p) for p in (master_seed, *parts))
    return _digest_int(tag, 8) & (2**63 - 1)
