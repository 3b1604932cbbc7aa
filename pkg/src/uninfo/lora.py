"""Low-rank adapter factors for the attention projections.

Each adapted weight W picks up an additive delta scale * (A @ B) where
A is width x rank and B is rank x width. B starts at zero so a freshly
initialized adapter leaves the encoder output untouched; A is
Kaiming-uniform so the delta has sane scale once B moves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

import torch

from .errors import RankTooLarge, ShapeMismatch
from .seeding import make_generator

TARGET_ORDER = ("q", "k", "v")


@dataclass(frozen=True)
class LoRAConfig:
    rank: int = 2
    alpha: float = 2.0
    targets: tuple[str, ...] = TARGET_ORDER
    seed: int = 0

    def __post_init__(self) -> None:
        if self.rank < 1:
            raise ValueError(f"rank must be >= 1, got {self.rank}")
        if self.alpha <= 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        bad = [t for t in self.targets if t not in TARGET_ORDER]
        if bad or not self.targets:
            raise ValueError(f"targets must be a nonempty subset of {TARGET_ORDER}, got {self.targets}")

    @property
    def scale(self) -> float:
        return self.alpha / self.rank


@dataclass
class LoRAParams:
    """Per (layer, target) factor pairs, in a fixed iteration order."""

    rank: int
    scale: float
    mats: dict[tuple[int, str], tuple[torch.Tensor, torch.Tensor]] = field(default_factory=dict)

    def keys(self) -> list[tuple[int, str]]:
        return sorted(self.mats, key=lambda k: (k[0], TARGET_ORDER.index(k[1])))

    def named_tensors(self) -> Iterator[tuple[str, torch.Tensor]]:
        for layer, target in self.keys():
            a, b = self.mats[(layer, target)]
            yield f"layer{layer}.{target}.A", a
            yield f"layer{layer}.{target}.B", b

    def tensors(self) -> list[torch.Tensor]:
        return [t for _, t in self.named_tensors()]

    def clone(self, requires_grad: bool = False) -> "LoRAParams":
        mats = {
            key: (
                a.detach().clone().requires_grad_(requires_grad),
                b.detach().clone().requires_grad_(requires_grad),
            )
            for key, (a, b) in self.mats.items()
        }
        return LoRAParams(rank=self.rank, scale=self.scale, mats=mats)

    def state_dict(self) -> dict[str, torch.Tensor]:
        return dict(self.named_tensors())

    @classmethod
    def from_state_dict(
        cls, rank: int, scale: float, state: dict[str, torch.Tensor]
    ) -> "LoRAParams":
        mats: dict[tuple[int, str], dict[str, torch.Tensor]] = {}
        for name, tensor in state.items():
            layer_part, target, which = name.split(".")
            key = (int(layer_part.removeprefix("layer")), target)
            mats.setdefault(key, {})[which] = tensor.clone()
        pairs = {key: (v["A"], v["B"]) for key, v in mats.items()}
        return cls(rank=rank, scale=scale, mats=pairs)


def init_lora(cfg: LoRAConfig, depth: int, width: int) -> LoRAParams:
    """Fresh adapter factors for every (layer, target) pair.

    B is all zeros, so the effective delta starts at the zero matrix;
    A is uniform in [-b, b] with b = sqrt(6 / width). Deterministic
    under ``cfg.seed``.
    """
    if cfg.rank >= width:
        raise RankTooLarge(f"rank {cfg.rank} must be < layer width {width}")
    bound = math.sqrt(6.0 / width)
    mats = {}
    for layer in range(depth):
        for target in TARGET_ORDER:
            if target not in cfg.targets:
                continue
            gen = make_generator(cfg.seed, "lora", layer, target)
            a = torch.empty(width, cfg.rank).uniform_(-bound, bound, generator=gen)
            b = torch.zeros(cfg.rank, width)
            mats[(layer, target)] = (a, b)
    return LoRAParams(rank=cfg.rank, scale=cfg.scale, mats=mats)


def lora_effective_weight(
    w: torch.Tensor, a: torch.Tensor, b: torch.Tensor, scale: float
) -> torch.Tensor:
    """W + scale * (A @ B)."""
    if a.shape[0] != w.shape[0] or b.shape[1] != w.shape[1] or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(
            f"W {tuple(w.shape)} with A {tuple(a.shape)}, B {tuple(b.shape)}"
        )
    return w + scale * (a @ b)


@dataclass
class TeacherState:
    """EMA copy of the adapter factors."""

    ema_params: LoRAParams
    momentum: float

    def __post_init__(self) -> None:
        if not 0.0 < self.momentum < 1.0:
            raise ValueError(f"momentum must be in (0, 1), got {self.momentum}")


def ema_update(teacher: TeacherState, student: LoRAParams) -> TeacherState:
    """One EMA step: ema' = m * student + (1 - m) * ema.

    The momentum multiplies the incoming student parameters, so a small
    m means a slowly moving teacher.
    """
    if teacher.ema_params.keys() != student.keys():
        raise ShapeMismatch("teacher and student adapters cover different layers/targets")
    m = teacher.momentum
    mats = {}
    for key in student.keys():
        ea, eb = teacher.ema_params.mats[key]
        sa, sb = student.mats[key]
        if ea.shape != sa.shape or eb.shape != sb.shape:
            raise ShapeMismatch(f"factor shapes differ at {key}")
        with torch.no_grad():
            mats[key] = (m * sa + (1.0 - m) * ea, m * sb + (1.0 - m) * eb)
    new_params = LoRAParams(rank=student.rank, scale=student.scale, mats=mats)
    return TeacherState(ema_params=new_params, momentum=m)
