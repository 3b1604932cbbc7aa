"""Procedural 10-class image benchmark and stem pre-training.

Classes are geometric patterns (solid shapes, outlines, periodic
textures) rendered at 32 x 32 with randomized color, position, size and
phase, so a small encoder can learn them from a few thousand samples
while noise and blur corruptions still hurt. The stem is "pre-trained"
by aligning its embeddings to a fixed orthonormal prototype bank with
the same similarity head used at test time.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F

from .corruption import ImageBatch, Provenance
from .encoder import ToyViT
from .hypersphere import PrototypeBank
from .seeding import make_generator

CLASS_NAMES = (
    "disk",
    "square",
    "triangle",
    "plus",
    "ring",
    "h_stripes",
    "v_stripes",
    "diag_stripes",
    "checker",
    "x_cross",
)
NUM_CLASSES = len(CLASS_NAMES)


def _shape_mask(
    label: int,
    xx: torch.Tensor,
    yy: torch.Tensor,
    cx: torch.Tensor,
    cy: torch.Tensor,
    r: torch.Tensor,
    period: torch.Tensor,
    phase: torch.Tensor,
) -> torch.Tensor:
    dx = xx[None] - cx[:, None, None]
    dy = yy[None] - cy[:, None, None]
    rr = r[:, None, None]
    if label == 0:
        return dx * dx + dy * dy <= rr * rr
    if label == 1:
        return torch.maximum(dx.abs(), dy.abs()) <= 0.85 * rr
    if label == 2:
        top = dy + 0.9 * rr
        return (top >= 0) & (dy <= 0.9 * rr) & (dx.abs() <= 0.55 * top)
    if label == 3:
        arm = 0.3 * rr
        return ((dx.abs() <= arm) & (dy.abs() <= rr)) | ((dy.abs() <= arm) & (dx.abs() <= rr))
    if label == 4:
        d2 = dx * dx + dy * dy
        return (d2 <= rr * rr) & (d2 >= (0.55 * rr) ** 2)
    per = period[:, None, None]
    ph = phase[:, None, None]
    if label == 5:
        return ((yy[None] + ph) / per) % 1.0 < 0.5
    if label == 6:
        return ((xx[None] + ph) / per) % 1.0 < 0.5
    if label == 7:
        return ((xx[None] + yy[None] + ph) / per) % 1.0 < 0.5
    if label == 8:
        cell = per * 0.75
        return (torch.floor((xx[None] + ph) / cell) + torch.floor((yy[None] + ph) / cell)) % 2 == 0
    if label == 9:
        arm = 0.3 * rr
        inside = torch.maximum(dx.abs(), dy.abs()) <= rr
        return inside & (((dx - dy).abs() <= arm) | ((dx + dy).abs() <= arm))
    raise ValueError(f"no shape for label {label}")


def make_toy_dataset(
    n: int, seed: int, image_size: int = 32
) -> tuple[ImageBatch, torch.Tensor]:
    """Render ``n`` class-balanced samples; deterministic under ``seed``."""
    gen = make_generator(seed, "toy_dataset")
    labels = torch.arange(n) % NUM_CLASSES
    labels = labels[torch.randperm(n, generator=gen)]

    coords = torch.arange(image_size, dtype=torch.float32)
    yy, xx = torch.meshgrid(coords, coords, indexing="ij")

    mid = image_size / 2.0
    cx = mid + (torch.rand(n, generator=gen) - 0.5) * 0.25 * image_size
    cy = mid + (torch.rand(n, generator=gen) - 0.5) * 0.25 * image_size
    r = image_size * (0.22 + 0.12 * torch.rand(n, generator=gen))
    period = 4.0 + 4.0 * torch.rand(n, generator=gen)
    phase = torch.rand(n, generator=gen) * period
    fg = 0.55 + 0.45 * torch.rand(n, 3, generator=gen)
    bg = 0.30 * torch.rand(n, 3, generator=gen)

    masks = torch.zeros(n, image_size, image_size, dtype=torch.bool)
    for label in range(NUM_CLASSES):
        sel = labels == label
        if not bool(sel.any()):
            continue
        masks[sel] = _shape_mask(
            label, xx, yy, cx[sel], cy[sel], r[sel], period[sel], phase[sel]
        )

    m = masks[..., None].to(torch.float32)
    pixels = bg[:, None, None, :] + m * (fg - bg)[:, None, None, :]
    pixels = pixels + 0.02 * torch.randn(pixels.shape, generator=gen)
    pixels = pixels.clamp(0.0, 1.0)
    return ImageBatch(pixels, Provenance(source_id=f"toy:{seed}:{n}")), labels


def pretrain_stem(
    model: ToyViT,
    bank: PrototypeBank,
    images: ImageBatch,
    labels: torch.Tensor,
    epochs: int = 20,
    lr: float = 3e-4,
    weight_decay: float = 0.01,
    batch_size: int = 128,
    seed: int = 0,
) -> list[dict[str, float]]:
    """Align the stem to the prototype bank with cross entropy on clean data.

    Trains every stem parameter; returns per-epoch loss/accuracy history.
    """
    gen = make_generator(seed, "pretrain_shuffle")
    opt = torch.optim.AdamW(model.parameters(), lr=lr, weight_decay=weight_decay)
    protos = bank.prototypes
    n = images.batch_size
    history = []
    for epoch in range(epochs):
        order = torch.randperm(n, generator=gen)
        total_loss = 0.0
        hits = 0
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            z = model(images.pixels[idx])
            logits = (z.data @ protos.T) / bank.temperature
            loss = F.cross_entropy(logits, labels[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
            total_loss += float(loss.detach()) * len(idx)
            hits += int((logits.argmax(dim=1) == labels[idx]).sum())
        history.append(
            {"epoch": epoch, "loss": total_loss / n, "accuracy": hits / n}
        )
    return history
