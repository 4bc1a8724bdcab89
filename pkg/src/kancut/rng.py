"""Deterministic random streams derived from one experiment seed.

Every consumer gets its own named sub-stream so that adding a new consumer
never shifts the draws seen by existing ones. Stream identity is hashed from
the seed plus string labels, which also makes per-iteration streams cheap:
``derive_rng(seed, "patches", str(it))``.
"""

import hashlib

import numpy as np


def derive_rng(seed: int, *labels: str) -> np.random.Generator:
    """Return a Generator for the sub-stream named by ``labels``."""
    tag = f"{seed}/" + "/".join(labels)
    digest = hashlib.sha256(tag.encode("utf-8")).digest()
    words = np.frombuffer(digest[:16], dtype=np.uint32)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(words.tolist())))
