"""Per-purpose seed streams.

Every stochastic step (weight init, epoch shuffling, synthetic data, splits)
draws from its own PCG64 generator keyed by ``(seed, purpose)``, so adding a
draw to one stage never perturbs another. Purposes are mapped to integers via
SHA-256 of the tag, which is stable across processes (unlike ``hash``).
Reproducibility is guaranteed within this implementation, not across
libraries or languages.
"""

import hashlib

import numpy as np


def stream(seed: int, purpose: str) -> np.random.Generator:
    """Return the deterministic generator for (seed, purpose)."""
    key = int.from_bytes(hashlib.sha256(purpose.encode("utf-8")).digest()[:8], "little")
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(key,)))


def derive_seed(seed: int, name: str) -> int:
    """Deterministic 63-bit sub-seed for a named purpose (config plumbing)."""
    digest = hashlib.sha256(f"{int(seed)}|{name}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") >> 1
