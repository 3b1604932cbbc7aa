"""Deterministic seed derivation.

All randomness in the package flows through a single run seed; each
consumer (stem init, adapter init, data synthesis, per-kind corruption,
subsampling) derives its own stream so that adding or reordering one
consumer never perturbs the others.
"""

from __future__ import annotations

import hashlib

import torch


def derive_seed(base: int, *labels: object) -> int:
    """Derive a child seed from ``base`` and a label path.

    Stable across runs and platforms (sha256 of the textual path).
    """
    text = f"{base}|" + "|".join(str(x) for x in labels)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & 0x7FFF_FFFF_FFFF_FFFF


def make_generator(base: int, *labels: object) -> torch.Generator:
    """CPU generator seeded from a derived stream."""
    gen = torch.Generator(device="cpu")
    gen.manual_seed(derive_seed(base, *labels))
    return gen
