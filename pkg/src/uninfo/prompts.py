"""Class prototype banks: prompt-ensemble ingestion and toy construction.

Real text embeddings arrive precomputed through a tensor archive (there
is no text encoder here); for desk-scale experiments a random
orthonormal bank stands in for encoded prompts. The classic 80 prompt
templates and per-corruption synonym lists ship as data files for users
exporting embeddings externally.
"""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

import torch

from .archive import read_archive, read_sidecar
from .errors import TooManyClasses, ZeroMeanVector
from .hypersphere import PrototypeBank, _check_unit_rows
from .seeding import make_generator

TEXT_EMBEDDINGS_TENSOR = "text_embeddings"
CLASS_NAMES_SIDECAR = "class_names.json"


def ensemble_prototypes(
    per_prompt: torch.Tensor,
    temperature: float = 0.01,
    class_names: list[str] | None = None,
) -> PrototypeBank:
    """Average per-prompt embeddings per class, then renormalize.

    ``per_prompt`` is P x C x d with every row unit-norm. Invariant to
    prompt order. A class whose prompts cancel to a (near-)zero mean has
    no direction left and raises ZeroMeanVector.
    """
    if per_prompt.ndim != 3:
        raise ValueError(f"expected P x C x d, got shape {tuple(per_prompt.shape)}")
    p, c, d = per_prompt.shape
    _check_unit_rows(per_prompt.reshape(p * c, d), "per-prompt embedding")
    means = per_prompt.mean(dim=0)
    norms = torch.linalg.vector_norm(means, dim=1, keepdim=True)
    if bool((norms.squeeze(1) <= 1e-12).any()):
        i = int((norms.squeeze(1) <= 1e-12).nonzero()[0, 0])
        raise ZeroMeanVector(f"prompt embeddings of class {i} cancel to zero mean")
    return PrototypeBank(means / norms, temperature, class_names or [])


def make_toy_bank(
    num_classes: int, dim: int, seed: int, temperature: float = 0.01
) -> PrototypeBank:
    """Seeded random orthonormal prototypes (QR of a Gaussian matrix)."""
    if num_classes > dim:
        raise TooManyClasses(f"cannot fit {num_classes} orthonormal prototypes in dim {dim}")
    gen = make_generator(seed, "toy_bank")
    gauss = torch.randn(dim, num_classes, generator=gen, dtype=torch.float64)
    q, r = torch.linalg.qr(gauss)
    # Fix the QR sign ambiguity so the bank is reproducible bit-for-bit.
    q = q * torch.sign(torch.diagonal(r))[None, :]
    return PrototypeBank(q.T.to(torch.float32), temperature)


def load_prototypes(path: str | Path, temperature: float = 0.01) -> PrototypeBank:
    """Read per-prompt text embeddings from an archive and ensemble them."""
    tensors = read_archive(path)
    if TEXT_EMBEDDINGS_TENSOR not in tensors:
        raise KeyError(f"archive has no {TEXT_EMBEDDINGS_TENSOR!r} tensor")
    names = read_sidecar(path, CLASS_NAMES_SIDECAR)
    return ensemble_prototypes(
        tensors[TEXT_EMBEDDINGS_TENSOR].to(torch.float32),
        temperature=temperature,
        class_names=list(names),
    )


def prompt_templates() -> list[str]:
    """The 80 caption templates used for prompt ensembling."""
    text = resources.files("uninfo.data").joinpath("prompt_templates.txt").read_text()
    return [line for line in text.splitlines() if line.strip()]


def corruption_synonyms() -> dict[str, list[str]]:
    """Ten descriptive synonyms per corruption name."""
    raw = resources.files("uninfo.data").joinpath("corruption_synonyms.json").read_text()
    return json.loads(raw)
