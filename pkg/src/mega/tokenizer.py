"""Byte-level tokenizer: 256 raw bytes plus BOS/EOS/PAD specials.

Token ids 0..255 are the byte values themselves; encoding prefixes BOS.
No merges, no normalization, so every text round-trips exactly.
"""

from __future__ import annotations

import numpy as np

BOS = 256
EOS = 257
PAD = 258
VOCAB_SIZE = 259


def encode(text: str | bytes) -> np.ndarray:
    """UTF-8 bytes of text, prefixed with BOS, as an int32 id array."""
    if isinstance(text, str):
        text = text.encode("utf-8")
    ids = np.empty(len(text) + 1, dtype=np.int32)
    ids[0] = BOS
    if text:
        ids[1:] = np.frombuffer(text, dtype=np.uint8)
    return ids


def decode_bytes(ids) -> bytes:
    """Byte tokens back to bytes; specials are dropped."""
    ids = np.asarray(ids)
    return bytes(ids[ids < 256].astype(np.uint8).tolist())


def decode(ids) -> str:
    """Lossy text view of ids; invalid UTF-8 becomes replacement chars."""
    return decode_bytes(ids).decode("utf-8", errors="replace")
