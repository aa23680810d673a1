"""Deterministic seed derivation for nested experiment stages.

Every random draw in the package flows through a ``numpy`` Generator created
from a :class:`numpy.random.SeedSequence` entropy list.  String keys (stage
names, sweep labels) are folded to 32-bit integers with CRC-32 so a seed path
like ``(master, "fig5", "L=232", trial, "placement", device)`` is stable
across runs, platforms, and process boundaries.

Two derivation helpers cover the common shapes:

* :func:`derive` - append keys to an existing path, returning a new path;
* :func:`spawn_rng` - build the Generator for a path (or bare integer).

Substreams for indexed entities (one RNG per device, one per channel row)
come from appending the index to the parent path, so extending a sweep to
more devices leaves the streams of existing devices untouched.
"""

from __future__ import annotations

import zlib

import numpy as np

__all__ = ["derive", "spawn_rng", "key_to_int"]

SeedPath = tuple[int, ...]


def key_to_int(key) -> int:
    """Fold a path component to a non-negative integer.

    Integers pass through (must be >= 0); strings hash via CRC-32 of their
    UTF-8 encoding.  Anything else is a bug in the caller.
    """
    if isinstance(key, bool):
        raise TypeError("bool seed keys are ambiguous; use 0/1 explicitly")
    if isinstance(key, (int, np.integer)):
        k = int(key)
        if k < 0:
            raise ValueError(f"seed keys must be non-negative, got {k}")
        return k
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    raise TypeError(f"cannot derive a seed from {type(key).__name__!r}")


def derive(path, *keys) -> SeedPath:
    """Extend a seed path with more components.

    ``path`` may be a bare integer (a master seed) or an existing path tuple.
    """
    if isinstance(path, (int, np.integer)):
        base: SeedPath = (key_to_int(path),)
    else:
        base = tuple(key_to_int(k) for k in path)
    return base + tuple(key_to_int(k) for k in keys)


def spawn_rng(path, *keys) -> np.random.Generator:
    """Generator for a seed path; ``spawn_rng(seed, *keys)`` is shorthand for
    ``spawn_rng(derive(seed, *keys))``."""
    full = derive(path, *keys)
    return np.random.default_rng(np.random.SeedSequence(list(full)))
