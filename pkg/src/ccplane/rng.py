"""Deterministic byte source for seeded, reproducible runs.

Honest deployments default to ``secrets.token_bytes``; a fixed seed swaps
in this counter-mode generator so ids, nonces, and payloads replay
byte-exactly. Not a security primitive.
"""

from __future__ import annotations

import hashlib


def seeded_rand(seed: int, stream: bytes = b""):
    """Return a ``rand(n) -> bytes`` callable replaying the same byte stream."""
    state = {"counter": 0}
    prefix = seed.to_bytes(8, "big", signed=False) + stream

    def rand(n: int) -> bytes:
        out = bytearray()
        while len(out) < n:
            block = hashlib.sha256(prefix + state["counter"].to_bytes(8, "big")).digest()
            state["counter"] += 1
            out.extend(block)
        return bytes(out[:n])

    return rand
