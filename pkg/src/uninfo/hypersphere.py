"""Unit-hypersphere embedding containers and the zero-shot head.

Image embeddings and class prototypes both live on the unit sphere in
R^d; class scores are temperature-scaled cosine similarities. These
types and the softmax head are shared by every other module.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

from .errors import DimensionMismatch, LengthMismatch, ZeroVectorRow

NORM_TOL = 1e-5
_MIN_ROW_NORM = 1e-12


def _check_unit_rows(data: torch.Tensor, what: str) -> None:
    with torch.no_grad():
        norms = torch.linalg.vector_norm(data.detach(), dim=1)
        bad = (norms - 1.0).abs() > NORM_TOL
        if bool(bad.any()):
            i = int(bad.nonzero()[0, 0])
            raise ValueError(
                f"{what} row {i} has norm {float(norms[i]):.6g}, expected 1 within {NORM_TOL}"
            )


@dataclass(frozen=True)
class EmbeddingBatch:
    """B x d matrix of unit-norm embeddings, one row per image."""

    data: torch.Tensor

    def __post_init__(self) -> None:
        if self.data.ndim != 2:
            raise ValueError(f"expected a 2-D matrix, got shape {tuple(self.data.shape)}")
        if self.batch_size < 1 or self.dim < 2:
            raise ValueError(f"need B >= 1 and d >= 2, got {tuple(self.data.shape)}")
        _check_unit_rows(self.data, "embedding")

    @property
    def batch_size(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class PrototypeBank:
    """Unit-norm class prototypes plus the softmax temperature."""

    prototypes: torch.Tensor
    temperature: float
    class_names: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.prototypes.ndim != 2 or self.prototypes.shape[0] < 2:
            raise ValueError(
                f"prototypes must be C x d with C >= 2, got {tuple(self.prototypes.shape)}"
            )
        if not self.temperature > 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        _check_unit_rows(self.prototypes, "prototype")
        if not self.class_names:
            object.__setattr__(
                self, "class_names", [f"class_{c}" for c in range(self.num_classes)]
            )
        elif len(self.class_names) != self.num_classes:
            raise LengthMismatch(
                f"{len(self.class_names)} class names for {self.num_classes} prototypes"
            )

    @property
    def num_classes(self) -> int:
        return self.prototypes.shape[0]

    @property
    def dim(self) -> int:
        return self.prototypes.shape[1]


@dataclass(frozen=True)
class PredictionBatch:
    """Per-image class probabilities and argmax labels.

    ``labels[i]`` is the lowest index attaining the row maximum of
    ``probs[i]``.
    """

    probs: torch.Tensor
    labels: torch.Tensor

    def __post_init__(self) -> None:
        if self.probs.ndim != 2:
            raise ValueError(f"probs must be B x C, got shape {tuple(self.probs.shape)}")
        if self.labels.shape != (self.probs.shape[0],):
            raise LengthMismatch(
                f"labels shape {tuple(self.labels.shape)} for {self.probs.shape[0]} rows"
            )
        with torch.no_grad():
            p = self.probs.detach()
            if bool((p < -1e-9).any()):
                raise ValueError("probabilities must be nonnegative")
            sums = p.sum(dim=1)
            if bool(((sums - 1.0).abs() > 1e-6).any()):
                raise ValueError("probability rows must sum to 1 within 1e-6")

    @property
    def batch_size(self) -> int:
        return self.probs.shape[0]

    @property
    def num_classes(self) -> int:
        return self.probs.shape[1]

    @classmethod
    def from_probs(cls, probs: torch.Tensor) -> "PredictionBatch":
        # torch.argmax returns the first maximal index, which is the
        # lowest-index tie-break this package guarantees.
        return cls(probs=probs, labels=torch.argmax(probs.detach(), dim=1))


def normalize_rows(raw: torch.Tensor) -> EmbeddingBatch:
    """Scale each row of ``raw`` to unit L2 norm.

    Raises:
        ZeroVectorRow: if any row has norm <= 1e-12.
    """
    if raw.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {tuple(raw.shape)}")
    norms = torch.linalg.vector_norm(raw, dim=1, keepdim=True)
    with torch.no_grad():
        dead = norms.detach().squeeze(1) <= _MIN_ROW_NORM
        if bool(dead.any()):
            i = int(dead.nonzero()[0, 0])
            raise ZeroVectorRow(f"row {i} has norm {float(norms[i]):.3g} <= 1e-12")
    return EmbeddingBatch(raw / norms)


def zero_shot_probs(z: EmbeddingBatch, bank: PrototypeBank) -> PredictionBatch:
    """Softmax over temperature-scaled prototype similarities.

    The softmax subtracts the per-row maximum before exponentiating;
    with the default temperature 0.01 raw logits reach +-100, so the
    shift is required for float32 safety.
    """
    if z.dim != bank.dim:
        raise DimensionMismatch(f"embedding dim {z.dim} != prototype dim {bank.dim}")
    logits = (z.data @ bank.prototypes.T) / bank.temperature
    probs = torch.softmax(logits, dim=1)
    return PredictionBatch.from_probs(probs)


def batch_accuracy(pred: PredictionBatch, truth: torch.Tensor) -> float:
    """Fraction of samples whose argmax label matches ``truth``."""
    if truth.shape != pred.labels.shape:
        raise LengthMismatch(
            f"truth shape {tuple(truth.shape)} vs labels shape {tuple(pred.labels.shape)}"
        )
    return float((pred.labels == truth).double().mean())
