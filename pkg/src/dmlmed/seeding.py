"""Deterministic seed derivation.

Every randomized unit of work (fold, bootstrap stream, Monte Carlo
replication) gets its own seed derived by hashing the parent seed together
with a label. Results are therefore independent of execution order and of
how many workers process the units.
"""

from __future__ import annotations

import hashlib


def derive_seed(*parts: object) -> int:
    """Stable 32-bit seed from a tuple of labels.

    Uses SHA-256 rather than ``hash()`` so values survive across processes
    and interpreter restarts. The range fits scikit-learn's ``random_state``.
    """
    token = "\x1f".join(str(p) for p in parts)
    digest = hashlib.sha256(token.encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")
