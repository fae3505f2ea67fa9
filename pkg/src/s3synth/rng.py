"""Deterministic randomness plumbing.

A single master seed is expanded into independent named streams (one per
module) so that changing how one stage consumes randomness never perturbs
another.  Everything goes through SHA-256 rather than ``hash()`` so runs
are reproducible across processes and PYTHONHASHSEED values.
"""

from __future__ import annotations

import hashlib
import random


def derive_seed(master: int, stream: str) -> int:
    """A 64-bit seed for the named stream, stable across runs."""
    digest = hashlib.sha256(f"{master}:{stream}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def stream_rng(master: int, stream: str) -> random.Random:
    return random.Random(derive_seed(master, stream))


def stable_seed(*parts: object) -> int:
    """Seed derived from arbitrary parts; order-sensitive, process-stable."""
    joined = "\x1f".join(repr(p) for p in parts)
    digest = hashlib.sha256(joined.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")
