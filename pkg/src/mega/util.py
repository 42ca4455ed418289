"""Shared error types and deterministic seed derivation."""

from __future__ import annotations

import hashlib

import numpy as np


class ConfigError(ValueError):
    """Invalid configuration or arguments. CLI exit code 2."""


class MissingArtifactError(FileNotFoundError):
    """A required on-disk artifact does not exist. CLI exit code 3."""


class NumericsError(ArithmeticError):
    """NaN or Inf reached a value that must be finite. CLI exit code 4."""


def check_finite(arr, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericsError(f"non-finite values in {what}")


def derive_seed(*parts) -> int:
    """Stable 64-bit seed from a tuple of strings/ints.

    Python's builtin hash() is salted per process, so seeds are derived
    from a cryptographic digest of the repr of the parts instead.
    """
    tag = "\x1f".join(repr(p) for p in parts)
    digest = hashlib.sha256(tag.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def rng_for(*parts) -> np.random.Generator:
    """Deterministic generator keyed by an arbitrary tuple of parts."""
    return np.random.default_rng(derive_seed(*parts))
