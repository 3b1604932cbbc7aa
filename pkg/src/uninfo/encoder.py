"""Reference image encoder: a small pre-norm vision transformer.

The encoder maps B x H x W x 3 pixel tensors in [0, 1] to unit-norm
embeddings. Adapter factors are passed into ``forward`` rather than
registered on the module, so one frozen stem can serve a student and an
EMA teacher that differ only in their adapter state.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .errors import BadImageShape, ShapeMismatch
from .hypersphere import EmbeddingBatch, normalize_rows
from .lora import LoRAParams, lora_effective_weight
from .seeding import derive_seed

LAYER_NORM_EPS = 1e-5


@dataclass(frozen=True)
class EncoderConfig:
    image_size: int = 32
    patch_size: int = 4
    depth: int = 4
    width: int = 64
    heads: int = 4
    embed_dim: int = 64

    def __post_init__(self) -> None:
        if self.image_size % self.patch_size != 0:
            raise ValueError(
                f"image_size {self.image_size} not divisible by patch_size {self.patch_size}"
            )
        if self.width % self.heads != 0:
            raise ValueError(f"width {self.width} not divisible by heads {self.heads}")

    @property
    def num_patches(self) -> int:
        return (self.image_size // self.patch_size) ** 2


def _attend(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor, heads: int) -> torch.Tensor:
    """Scaled dot-product attention over token matrices (..., n, d).

    Splits d into ``heads`` groups, attends per head with 1/sqrt(head_dim)
    scaling, and concatenates the heads back.
    """
    *lead, n, d = q.shape
    if d % heads != 0:
        raise ShapeMismatch(f"token dim {d} not divisible by {heads} heads")
    dh = d // heads
    def split(x: torch.Tensor) -> torch.Tensor:
        return x.reshape(*lead, n, heads, dh).transpose(-3, -2)
    qh, kh, vh = split(q), split(k), split(v)
    scores = (qh @ kh.transpose(-2, -1)) / math.sqrt(dh)
    out = torch.softmax(scores, dim=-1) @ vh
    return out.transpose(-3, -2).reshape(*lead, n, d)


def attention_forward(
    h: torch.Tensor,
    w_q: torch.Tensor,
    w_k: torch.Tensor,
    w_v: torch.Tensor,
    heads: int = 1,
) -> torch.Tensor:
    """Single attention layer on a token matrix: softmax(QK^T / sqrt(d)) V.

    ``h`` is n x d with tokens as rows; the weights act on the right as
    ``h @ W.T``. No biases, no output projection.
    """
    if h.ndim != 2:
        raise ShapeMismatch(f"expected n x d token matrix, got shape {tuple(h.shape)}")
    d = h.shape[1]
    for name, w in (("w_q", w_q), ("w_k", w_k), ("w_v", w_v)):
        if w.shape != (d, d):
            raise ShapeMismatch(f"{name} shape {tuple(w.shape)} incompatible with d = {d}")
    return _attend(h @ w_q.T, h @ w_k.T, h @ w_v.T, heads)


class TransformerBlock(nn.Module):
    """Pre-norm attention + pre-norm 4x MLP, both with residuals."""

    def __init__(self, width: int, heads: int):
        super().__init__()
        self.heads = heads
        self.norm1 = nn.LayerNorm(width, eps=LAYER_NORM_EPS)
        self.q_proj = nn.Linear(width, width)
        self.k_proj = nn.Linear(width, width)
        self.v_proj = nn.Linear(width, width)
        self.out_proj = nn.Linear(width, width)
        self.norm2 = nn.LayerNorm(width, eps=LAYER_NORM_EPS)
        self.fc1 = nn.Linear(width, 4 * width)
        self.fc2 = nn.Linear(4 * width, width)

    def forward(
        self,
        x: torch.Tensor,
        adapters: dict[str, tuple[torch.Tensor, torch.Tensor]] | None = None,
        scale: float = 1.0,
    ) -> torch.Tensor:
        h = self.norm1(x)
        weights = {}
        for target, proj in (("q", self.q_proj), ("k", self.k_proj), ("v", self.v_proj)):
            w = proj.weight
            if adapters is not None and target in adapters:
                a, b = adapters[target]
                w = lora_effective_weight(w, a, b, scale)
            weights[target] = w
        q = F.linear(h, weights["q"], self.q_proj.bias)
        k = F.linear(h, weights["k"], self.k_proj.bias)
        v = F.linear(h, weights["v"], self.v_proj.bias)
        x = x + self.out_proj(_attend(q, k, v, self.heads))
        x = x + self.fc2(F.gelu(self.fc1(self.norm2(x))))
        return x


class ToyViT(nn.Module):
    """Patch embedding, class token, transformer blocks, projection head."""

    def __init__(self, cfg: EncoderConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(derive_seed(seed, "stem"))
            patch_dim = cfg.patch_size * cfg.patch_size * 3
            self.patch_embed = nn.Linear(patch_dim, cfg.width)
            self.cls_token = nn.Parameter(torch.randn(1, 1, cfg.width) * 0.02)
            self.pos_embed = nn.Parameter(
                torch.randn(1, cfg.num_patches + 1, cfg.width) * 0.02
            )
            self.blocks = nn.ModuleList(
                TransformerBlock(cfg.width, cfg.heads) for _ in range(cfg.depth)
            )
            self.norm = nn.LayerNorm(cfg.width, eps=LAYER_NORM_EPS)
            self.head = nn.Linear(cfg.width, cfg.embed_dim)

    def _patchify(self, pixels: torch.Tensor) -> torch.Tensor:
        cfg = self.cfg
        b = pixels.shape[0]
        s = cfg.image_size // cfg.patch_size
        p = cfg.patch_size
        x = pixels.reshape(b, s, p, s, p, 3)
        x = x.permute(0, 1, 3, 2, 4, 5)
        return x.reshape(b, s * s, p * p * 3)

    def forward(self, pixels: torch.Tensor, lora: LoRAParams | None = None) -> EmbeddingBatch:
        cfg = self.cfg
        expected = (cfg.image_size, cfg.image_size, 3)
        if pixels.ndim != 4 or tuple(pixels.shape[1:]) != expected:
            raise BadImageShape(
                f"expected B x {expected[0]} x {expected[1]} x 3 pixels, got {tuple(pixels.shape)}"
            )
        x = self.patch_embed(self._patchify(pixels))
        cls = self.cls_token.expand(x.shape[0], -1, -1)
        x = torch.cat([cls, x], dim=1) + self.pos_embed
        for layer, block in enumerate(self.blocks):
            adapters = None
            if lora is not None:
                adapters = {
                    target: lora.mats[(layer, target)]
                    for target in ("q", "k", "v")
                    if (layer, target) in lora.mats
                }
            x = block(x, adapters, lora.scale if lora is not None else 1.0)
        out = self.head(self.norm(x[:, 0, :]))
        return normalize_rows(out)


def encoder_forward(
    model: ToyViT, images: torch.Tensor, lora: LoRAParams | None = None
) -> EmbeddingBatch:
    """Functional alias for ``model(images, lora)``."""
    return model(images, lora)


def merge_lora(stem: ToyViT, lora: LoRAParams, scale: float | None = None) -> ToyViT:
    """Fold adapter deltas into a copy of the stem weights.

    Not idempotent: merging the same adapter twice adds its delta twice.
    """
    merged = copy.deepcopy(stem)
    use_scale = lora.scale if scale is None else scale
    with torch.no_grad():
        for (layer, target), (a, b) in lora.mats.items():
            if layer >= len(merged.blocks):
                raise ShapeMismatch(f"adapter layer {layer} beyond encoder depth")
            proj = getattr(merged.blocks[layer], f"{target}_proj")
            proj.weight.copy_(lora_effective_weight(proj.weight, a, b, use_scale))
    return merged
