"""Deterministic seed derivation.

Every stochastic unit of work (one variational fit, one tree, one
split repetition) gets its own seed derived from the master seed and
the unit's identity, so serial and parallel execution produce
identical results regardless of scheduling order.
"""

import hashlib


def derive_seed(master_seed: int, *parts) -> int:
    """Derive a child seed from a master seed and a key path.

    Stable across processes and platforms (unlike ``hash()``).
    """
    key = ":".join([str(int(master_seed))] + [str(p) for p in parts])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")
