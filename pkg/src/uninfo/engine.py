"""Streaming adaptation loop.

Per batch, in order: student forward, teacher forward, balanced loss,
AdamW step on the adapter factors only, EMA update of the teacher.
Inference (and online accuracy) uses the teacher as it stood *before*
the update derived from the batch, so predictions at step k depend only
on batches 0..k-1.
"""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass, field
from typing import Iterable

import torch

from .corruption import ImageBatch
from .encoder import ToyViT
from .errors import BatchTooSmall, EmptyStream, NumericFailure
from .hypersphere import PredictionBatch, PrototypeBank, batch_accuracy, zero_shot_probs
from .lora import LoRAConfig, LoRAParams, TeacherState, ema_update, init_lora
from .objectives import (
    BalanceConfig,
    composite_loss,
    marginal_entropy,
    uniformity_metric,
)

log = logging.getLogger(__name__)

CSV_COLUMNS = (
    "step",
    "loss_ent",
    "loss_unif",
    "loss_pl",
    "mi",
    "w",
    "acc_teacher",
    "acc_student",
    "uniformity_metric",
    "marginal_entropy",
)


@dataclass(frozen=True)
class TTAConfig:
    """Optimizer, balancing, and teacher hyperparameters for one stream."""

    batch_size: int = 64
    lr: float = 0.001
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    balance: BalanceConfig = field(default_factory=BalanceConfig)
    momentum: float = 0.001
    seed: int = 0

    def __post_init__(self) -> None:
        # lr == 0 is allowed as an explicit evaluation-only mode.
        if self.lr < 0:
            raise ValueError(f"lr must be nonnegative, got {self.lr}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be nonnegative, got {self.weight_decay}")
        if not 0.0 < self.momentum < 1.0:
            raise ValueError(f"momentum must be in (0, 1), got {self.momentum}")
        if self.batch_size < 2:
            raise ValueError(f"batch_size must be >= 2, got {self.batch_size}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("betas must lie in [0, 1)")
        if self.eps <= 0:
            raise ValueError("eps must be positive")


@dataclass
class AdamMoments:
    """First/second moment estimates and step counter for one parameter."""

    m: torch.Tensor
    v: torch.Tensor
    t: int = 0


def optimizer_step(
    params: dict[str, torch.Tensor],
    grads: dict[str, torch.Tensor],
    moments: dict[str, AdamMoments],
    cfg: TTAConfig,
) -> None:
    """In-place AdamW update: bias-corrected moments plus decoupled decay.

    theta <- theta - lr * wd * theta - lr * m_hat / (sqrt(v_hat) + eps)
    """
    for name, param in params.items():
        grad = grads[name]
        if grad.shape != param.shape:
            raise ValueError(f"gradient shape mismatch for {name!r}")
        state = moments[name]
        state.t += 1
        with torch.no_grad():
            state.m.mul_(cfg.beta1).add_(grad, alpha=1.0 - cfg.beta1)
            state.v.mul_(cfg.beta2).addcmul_(grad, grad, value=1.0 - cfg.beta2)
            m_hat = state.m / (1.0 - cfg.beta1**state.t)
            v_hat = state.v / (1.0 - cfg.beta2**state.t)
            param -= cfg.lr * cfg.weight_decay * param
            param -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps)


@dataclass
class TTAState:
    """Mutable per-stream state: student adapters, teacher, optimizer."""

    student: LoRAParams
    teacher: TeacherState
    moments: dict[str, AdamMoments]
    step: int = 0


def init_tta_state(lora_cfg: LoRAConfig, depth: int, width: int, cfg: TTAConfig) -> TTAState:
    student = init_lora(lora_cfg, depth, width)
    for tensor in student.tensors():
        tensor.requires_grad_(True)
    teacher = TeacherState(student.clone(requires_grad=False), momentum=cfg.momentum)
    moments = {
        name: AdamMoments(m=torch.zeros_like(t), v=torch.zeros_like(t))
        for name, t in student.named_tensors()
    }
    return TTAState(student=student, teacher=teacher, moments=moments)


@dataclass(frozen=True)
class MetricsRecord:
    """One log row per adapted batch.

    Loss terms, mutual information and the balancing weight are the
    student's; ``uniformity_metric`` is measured on the teacher
    embeddings because the teacher is the inference model.
    """

    step: int
    loss_ent: float
    loss_unif: float
    loss_pl: float
    mi: float
    w: float
    acc_teacher: float | None
    acc_student: float | None
    uniformity_metric: float
    marginal_entropy: float

    def csv_row(self) -> str:
        def fmt(value: float | int | None) -> str:
            return "" if value is None else repr(value)

        return ",".join(fmt(getattr(self, col)) for col in CSV_COLUMNS)


def records_to_csv(records: Iterable[MetricsRecord]) -> str:
    out = io.StringIO()
    out.write(",".join(CSV_COLUMNS) + "\n")
    for record in records:
        out.write(record.csv_row() + "\n")
    return out.getvalue()


def tta_step(
    model: ToyViT,
    state: TTAState,
    batch: ImageBatch,
    truth: torch.Tensor | None,
    bank: PrototypeBank,
    cfg: TTAConfig,
) -> tuple[TTAState, MetricsRecord, PredictionBatch]:
    """Adapt on one batch and return the teacher's (pre-update) predictions."""
    if batch.batch_size < 2:
        raise BatchTooSmall(f"adaptation batch must have B >= 2, got {batch.batch_size}")

    z_student = model(batch.pixels, lora=state.student)
    student_pred = zero_shot_probs(z_student, bank)
    with torch.no_grad():
        z_teacher = model(batch.pixels, lora=state.teacher.ema_params)
        teacher_pred = zero_shot_probs(z_teacher, bank)

    breakdown = composite_loss(z_student, student_pred, teacher_pred, cfg.balance)
    if not torch.isfinite(breakdown.total):
        raise NumericFailure(f"non-finite loss at step {state.step}")

    if cfg.lr > 0:
        named = dict(state.student.named_tensors())
        grads = torch.autograd.grad(breakdown.total, list(named.values()))
        optimizer_step(named, dict(zip(named.keys(), grads)), state.moments, cfg)
        for tensor in named.values():
            if not torch.isfinite(tensor).all():
                raise NumericFailure(f"non-finite adapter parameter at step {state.step}")

    record = MetricsRecord(
        step=state.step,
        loss_ent=float(breakdown.ent.detach()),
        loss_unif=float(breakdown.unif.detach()),
        loss_pl=float(breakdown.pl.detach()),
        mi=breakdown.mi,
        w=breakdown.w,
        acc_teacher=batch_accuracy(teacher_pred, truth) if truth is not None else None,
        acc_student=batch_accuracy(student_pred, truth) if truth is not None else None,
        uniformity_metric=uniformity_metric(z_teacher),
        marginal_entropy=marginal_entropy(student_pred),
    )
    state.teacher = ema_update(state.teacher, state.student)
    state.step += 1
    return state, record, teacher_pred


@dataclass
class StreamResult:
    records: list[MetricsRecord]
    state: TTAState
    online_accuracy: float | None

    def csv(self) -> str:
        return records_to_csv(self.records)


def run_stream(
    model: ToyViT,
    bank: PrototypeBank,
    stream: Iterable[tuple[ImageBatch, torch.Tensor | None]],
    cfg: TTAConfig,
    lora_cfg: LoRAConfig | None = None,
    state: TTAState | None = None,
) -> StreamResult:
    """Adapt over a stream of batches in order.

    Online accuracy is the batch-size weighted mean of per-batch teacher
    accuracy. Batches of size 1 are skipped with a warning (the
    uniformity term needs pairs); an exhausted or fully skipped stream
    raises EmptyStream.
    """
    if state is None:
        lora_cfg = lora_cfg or LoRAConfig(seed=cfg.seed)
        state = init_tta_state(lora_cfg, model.cfg.depth, model.cfg.width, cfg)
    records: list[MetricsRecord] = []
    hits = 0.0
    scored = 0
    for batch, truth in stream:
        if batch.batch_size < 2:
            log.warning("skipping stream batch of size %d (< 2)", batch.batch_size)
            continue
        state, record, _ = tta_step(model, state, batch, truth, bank, cfg)
        records.append(record)
        if record.acc_teacher is not None:
            hits += record.acc_teacher * batch.batch_size
            scored += batch.batch_size
    if not records:
        raise EmptyStream("stream produced no batches of size >= 2")
    online = hits / scored if scored else None
    return StreamResult(records=records, state=state, online_accuracy=online)


def evaluate_stream(
    model: ToyViT,
    bank: PrototypeBank,
    stream: Iterable[tuple[ImageBatch, torch.Tensor | None]],
    lora: LoRAParams | None = None,
) -> float:
    """No-adapt accuracy of the (optionally adapted) encoder over a stream."""
    hits = 0.0
    total = 0
    with torch.no_grad():
        for batch, truth in stream:
            if truth is None:
                raise ValueError("evaluate_stream needs labeled batches")
            pred = zero_shot_probs(model(batch.pixels, lora=lora), bank)
            hits += batch_accuracy(pred, truth) * batch.batch_size
            total += batch.batch_size
    if total == 0:
        raise EmptyStream("no batches to evaluate")
    return hits / total
