"""Loss terms and the information-aware balancing of the adaptation objective.

The total objective is ``w * ent + (lam / w) * unif + pl`` where the
weight ``w = exp(mi - i0)`` is computed from the batch mutual
information and is a constant with respect to differentiation: only the
three loss terms carry gradients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

from .errors import BatchTooSmall, ShapeMismatch
from .hypersphere import EmbeddingBatch, PredictionBatch

LOG_CLAMP = 1e-12


@dataclass(frozen=True)
class BalanceConfig:
    """Uniformity weight, balancing threshold, and ablation switches."""

    lam: float = 1.0
    i0: float = 3.0
    balancing_enabled: bool = True
    unif_enabled: bool = True
    pl_enabled: bool = True

    def __post_init__(self) -> None:
        if self.lam < 0:
            raise ValueError(f"lam must be nonnegative, got {self.lam}")


# Ablation presets, from the bare entropy objective up to the full method.
# "no_balancing" keeps all three loss terms but pins w = 1.
PRESETS: dict[str, dict[str, bool]] = {
    "full": dict(balancing_enabled=True, unif_enabled=True, pl_enabled=True),
    "ent_only": dict(balancing_enabled=False, unif_enabled=False, pl_enabled=False),
    "ent_pl": dict(balancing_enabled=False, unif_enabled=False, pl_enabled=True),
    "ent_unif_pl": dict(balancing_enabled=False, unif_enabled=True, pl_enabled=True),
    "no_balancing": dict(balancing_enabled=False, unif_enabled=True, pl_enabled=True),
}


def preset_config(name: str, lam: float = 1.0, i0: float = 3.0) -> BalanceConfig:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}, expected one of {sorted(PRESETS)}")
    return BalanceConfig(lam=lam, i0=i0, **PRESETS[name])


@dataclass(frozen=True)
class LossBreakdown:
    """All objective components for one batch.

    ``ent``, ``unif``, ``pl`` and ``total`` are 0-dim tensors attached
    to the autograd graph; ``mi`` and ``w`` are plain floats because the
    balancing weight is excluded from differentiation.
    """

    ent: torch.Tensor
    unif: torch.Tensor
    pl: torch.Tensor
    mi: float
    w: float
    total: torch.Tensor


def _plogp(p: torch.Tensor) -> torch.Tensor:
    # p * log(p) with 0 log 0 := 0; the clamp keeps log finite when the
    # sharp softmax temperature saturates probabilities to exact zero.
    return p * torch.log(p.clamp_min(LOG_CLAMP))


def entropy_loss(pred: PredictionBatch) -> torch.Tensor:
    """Mean Shannon entropy of the prediction rows, in nats."""
    return -_plogp(pred.probs).sum(dim=1).mean()


def _pairwise_sq_dists(z: torch.Tensor) -> torch.Tensor:
    # Expanded form instead of cdist: differentiable at zero distance.
    sq_norms = (z * z).sum(dim=1)
    sq = sq_norms[:, None] + sq_norms[None, :] - 2.0 * (z @ z.T)
    return sq.clamp_min(0.0)


def uniformity_loss(z: EmbeddingBatch) -> torch.Tensor:
    """log-mean of exp(-squared distance) over all ordered pairs.

    The double sum includes the i == j diagonal. Zero means a fully
    collapsed batch; more negative means better spread, bounded below
    by -4 on the unit sphere.
    """
    if z.batch_size < 2:
        raise BatchTooSmall(f"uniformity needs B >= 2, got B = {z.batch_size}")
    sq = _pairwise_sq_dists(z.data)
    b = z.batch_size
    return torch.logsumexp(-sq.reshape(-1), dim=0) - 2.0 * math.log(b)


def uniformity_metric(z: EmbeddingBatch) -> float:
    """Non-log form, mean of exp(-squared distance); equals exp(uniformity_loss)."""
    if z.batch_size < 2:
        raise BatchTooSmall(f"uniformity needs B >= 2, got B = {z.batch_size}")
    with torch.no_grad():
        sq = _pairwise_sq_dists(z.data.detach())
        return float(torch.exp(-sq).mean())


def marginal_entropy(pred: PredictionBatch) -> float:
    """Entropy of the batch-averaged prediction distribution, in nats."""
    p_bar = pred.probs.detach().to(torch.float64).mean(dim=0)
    return float(-_plogp(p_bar).sum())


def mutual_information(pred: PredictionBatch, clamp: bool = True) -> float:
    """Marginal prediction entropy minus mean per-sample entropy.

    Computed in float64; large when predictions are confident and
    diverse, zero when every row is identical. Clamped at 0 from below
    unless ``clamp`` is False (the raw value can round to -1e-9 scale).
    """
    p = pred.probs.detach().to(torch.float64)
    cond = float(-_plogp(p).sum(dim=1).mean())
    mi = marginal_entropy(pred) - cond
    if mi < -1e-9:
        raise ValueError(f"mutual information {mi} below rounding floor; invalid probabilities?")
    if clamp:
        mi = max(mi, 0.0)
    return mi


def balance_weight(mi: float, cfg: BalanceConfig) -> float:
    """exp(mi - i0) when balancing is enabled, else 1."""
    if mi < 0:
        raise ValueError(f"mi must be nonnegative, got {mi}")
    if not cfg.balancing_enabled:
        return 1.0
    return math.exp(mi - cfg.i0)


def distillation_loss(teacher: PredictionBatch, student: PredictionBatch) -> torch.Tensor:
    """Cross entropy of the student rows under the teacher rows, in nats."""
    if teacher.probs.shape != student.probs.shape:
        raise ShapeMismatch(
            f"teacher {tuple(teacher.probs.shape)} vs student {tuple(student.probs.shape)}"
        )
    log_p = torch.log(student.probs.clamp_min(LOG_CLAMP))
    return -(teacher.probs * log_p).sum(dim=1).mean()


def composite_loss(
    z: EmbeddingBatch,
    student: PredictionBatch,
    teacher: PredictionBatch,
    cfg: BalanceConfig,
) -> LossBreakdown:
    """Assemble the balanced objective for one batch.

    All components are evaluated and recorded even when ablated away;
    only enabled terms enter ``total``. The teacher distribution is
    detached, so it acts as a constant target.
    """
    if z.batch_size != student.batch_size:
        raise ShapeMismatch(
            f"embeddings B = {z.batch_size} vs predictions B = {student.batch_size}"
        )
    ent = entropy_loss(student)
    unif = uniformity_loss(z)
    teacher_const = PredictionBatch(teacher.probs.detach(), teacher.labels)
    pl = distillation_loss(teacher_const, student)
    mi = mutual_information(student)
    w = balance_weight(mi, cfg)
    total = w * ent
    if cfg.unif_enabled:
        total = total + (cfg.lam / w) * unif
    if cfg.pl_enabled:
        total = total + pl
    return LossBreakdown(ent=ent, unif=unif, pl=pl, mi=mi, w=w, total=total)
