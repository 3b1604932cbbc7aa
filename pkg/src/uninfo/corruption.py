"""Desk-scale synthesis of sensor-degradation corruption families.

Nine corruption kinds at five severity levels each. Noise kinds draw
randomness only from the spec seed; blur, contrast, brightness,
pixelate and jpeg_like are fully deterministic functions of the input.
All outputs are clipped back to [0, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import torch
import torch.nn.functional as F

from .errors import EmptyKinds, UnknownKind
from .seeding import derive_seed, make_generator

KINDS = (
    "gaussian_noise",
    "shot_noise",
    "impulse_noise",
    "defocus_blur",
    "motion_blur",
    "contrast",
    "brightness",
    "pixelate",
    "jpeg_like",
)
NOISE_KINDS = ("gaussian_noise", "shot_noise", "impulse_noise")

# Severity schedules, index 0 = severity 1 (mild) .. index 4 = severity 5.
GAUSSIAN_SIGMA = (0.04, 0.08, 0.12, 0.18, 0.26)
SHOT_PHOTONS = (60.0, 25.0, 12.0, 5.0, 3.0)
IMPULSE_FRACTION = (0.01, 0.03, 0.06, 0.10, 0.17)
DEFOCUS_RADIUS = (1, 2, 3, 4, 6)
MOTION_LENGTH = (3, 5, 7, 9, 12)
CONTRAST_SCALE = (0.75, 0.5, 0.4, 0.3, 0.15)
BRIGHTNESS_DELTA = (0.1, 0.2, 0.3, 0.4, 0.5)
PIXELATE_FACTOR = (0.6, 0.5, 0.4, 0.3, 0.25)
JPEG_QUALITY = (80, 60, 40, 25, 10)


@dataclass(frozen=True)
class CorruptionSpec:
    kind: str
    severity: int
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise UnknownKind(f"unknown corruption kind {self.kind!r}, expected one of {KINDS}")
        if self.severity not in range(1, 6):
            raise ValueError(f"severity must be in 1..5, got {self.severity}")


@dataclass(frozen=True)
class Provenance:
    source_id: str
    spec: CorruptionSpec | None = None


@dataclass(frozen=True)
class ImageBatch:
    """B x H x W x 3 pixel tensor with values in [0, 1]."""

    pixels: torch.Tensor
    provenance: Provenance | None = None

    def __post_init__(self) -> None:
        p = self.pixels
        if p.ndim != 4 or p.shape[-1] != 3 or p.shape[0] < 1:
            raise ValueError(f"pixels must be B x H x W x 3, got {tuple(p.shape)}")
        lo, hi = float(p.min()), float(p.max())
        if lo < -1e-6 or hi > 1.0 + 1e-6:
            raise ValueError(f"pixel values must lie in [0, 1], got [{lo:.4g}, {hi:.4g}]")

    @property
    def batch_size(self) -> int:
        return self.pixels.shape[0]


def gaussian_noise(pixels: torch.Tensor, sigma: float, gen: torch.Generator) -> torch.Tensor:
    if sigma == 0.0:
        return pixels.clone()
    noise = torch.randn(pixels.shape, generator=gen) * sigma
    return (pixels + noise).clamp(0.0, 1.0)


def shot_noise(pixels: torch.Tensor, photons: float, gen: torch.Generator) -> torch.Tensor:
    counts = torch.poisson(pixels * photons, generator=gen)
    return (counts / photons).clamp(0.0, 1.0)


def impulse_noise(pixels: torch.Tensor, fraction: float, gen: torch.Generator) -> torch.Tensor:
    b, h, w, _ = pixels.shape
    hit = torch.rand(b, h, w, 1, generator=gen) < fraction
    salt = torch.rand(b, h, w, 1, generator=gen) < 0.5
    value = salt.to(pixels.dtype)
    return torch.where(hit, value.expand_as(pixels), pixels)


def _conv_per_channel(pixels: torch.Tensor, kernel: torch.Tensor) -> torch.Tensor:
    # Reflect padding keeps a constant image exactly constant; asymmetric
    # split handles even kernel sizes.
    x = pixels.permute(0, 3, 1, 2)
    kh, kw = kernel.shape
    weight = kernel.to(x.dtype).expand(3, 1, kh, kw)
    top, left = (kh - 1) // 2, (kw - 1) // 2
    x = F.pad(x, (left, kw - 1 - left, top, kh - 1 - top), mode="reflect")
    out = F.conv2d(x, weight, groups=3)
    return out.permute(0, 2, 3, 1).clamp(0.0, 1.0)


def _disk_kernel(radius: int) -> torch.Tensor:
    coords = torch.arange(-radius, radius + 1, dtype=torch.float32)
    yy, xx = torch.meshgrid(coords, coords, indexing="ij")
    mask = (yy * yy + xx * xx <= radius * radius).to(torch.float32)
    return mask / mask.sum()


def defocus_blur(pixels: torch.Tensor, radius: int) -> torch.Tensor:
    return _conv_per_channel(pixels, _disk_kernel(radius))


def motion_blur(pixels: torch.Tensor, length: int) -> torch.Tensor:
    # Straight 45-degree streak: ones on the kernel diagonal.
    kernel = torch.eye(length) / length
    return _conv_per_channel(pixels, kernel)


def contrast(pixels: torch.Tensor, scl: float) -> torch.Tensor:
    means = pixels.mean(dim=(1, 2, 3), keepdim=True)
    return ((pixels - means) * scl + means).clamp(0.0, 1.0)


def brightness(pixels: torch.Tensor, delta: float) -> torch.Tensor:
    return (pixels + delta).clamp(0.0, 1.0)


def pixelate(pixels: torch.Tensor, factor: float) -> torch.Tensor:
    b, h, w, _ = pixels.shape
    x = pixels.permute(0, 3, 1, 2)
    small = (max(1, round(h * factor)), max(1, round(w * factor)))
    x = F.interpolate(x, size=small, mode="area")
    x = F.interpolate(x, size=(h, w), mode="nearest")
    return x.permute(0, 2, 3, 1).clamp(0.0, 1.0)


# Baseline JPEG luminance quantization table (Annex K of the standard),
# applied here to each RGB channel separately.
_JPEG_Q_TABLE = torch.tensor(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=torch.float32,
)


def _dct_basis() -> torch.Tensor:
    i = torch.arange(8, dtype=torch.float32)
    basis = torch.cos((2.0 * i[None, :] + 1.0) * i[:, None] * math.pi / 16.0)
    basis = basis * math.sqrt(2.0 / 8.0)
    basis[0, :] = 1.0 / math.sqrt(8.0)
    return basis


def _quality_table(quality: int) -> torch.Tensor:
    s = 5000.0 / quality if quality < 50 else 200.0 - 2.0 * quality
    table = torch.floor((_JPEG_Q_TABLE * s + 50.0) / 100.0)
    return table.clamp(1.0, 255.0)


def jpeg_like(pixels: torch.Tensor, quality: int) -> torch.Tensor:
    """8x8 block DCT quantization mimicking JPEG artifacts."""
    b, h, w, _ = pixels.shape
    pad_h = (-h) % 8
    pad_w = (-w) % 8
    x = pixels.permute(0, 3, 1, 2) * 255.0 - 128.0
    if pad_h or pad_w:
        x = F.pad(x, (0, pad_w, 0, pad_h), mode="replicate")
    hp, wp = x.shape[2], x.shape[3]
    x = x.reshape(b, 3, hp // 8, 8, wp // 8, 8).permute(0, 1, 2, 4, 3, 5)
    basis = _dct_basis()
    coeffs = basis @ x @ basis.T
    q = _quality_table(quality)
    coeffs = torch.round(coeffs / q) * q
    x = basis.T @ coeffs @ basis
    x = x.permute(0, 1, 2, 4, 3, 5).reshape(b, 3, hp, wp)
    x = x[:, :, :h, :w]
    return ((x + 128.0) / 255.0).permute(0, 2, 3, 1).clamp(0.0, 1.0)


def apply_corruption(clean: ImageBatch, spec: CorruptionSpec) -> ImageBatch:
    """Corrupt a batch according to ``spec``; deterministic under its seed."""
    s = spec.severity - 1
    pixels = clean.pixels
    if spec.kind == "gaussian_noise":
        out = gaussian_noise(pixels, GAUSSIAN_SIGMA[s], make_generator(spec.seed, "gaussian"))
    elif spec.kind == "shot_noise":
        out = shot_noise(pixels, SHOT_PHOTONS[s], make_generator(spec.seed, "shot"))
    elif spec.kind == "impulse_noise":
        out = impulse_noise(pixels, IMPULSE_FRACTION[s], make_generator(spec.seed, "impulse"))
    elif spec.kind == "defocus_blur":
        out = defocus_blur(pixels, DEFOCUS_RADIUS[s])
    elif spec.kind == "motion_blur":
        out = motion_blur(pixels, MOTION_LENGTH[s])
    elif spec.kind == "contrast":
        out = contrast(pixels, CONTRAST_SCALE[s])
    elif spec.kind == "brightness":
        out = brightness(pixels, BRIGHTNESS_DELTA[s])
    elif spec.kind == "pixelate":
        out = pixelate(pixels, PIXELATE_FACTOR[s])
    elif spec.kind == "jpeg_like":
        out = jpeg_like(pixels, JPEG_QUALITY[s])
    else:  # pragma: no cover - CorruptionSpec already validates
        raise UnknownKind(spec.kind)
    source = clean.provenance.source_id if clean.provenance else "unknown"
    return ImageBatch(out, Provenance(source_id=source, spec=spec))


class CorruptionStream:
    """Re-iterable stream of corrupted batches from one clean source.

    Each batch is corrupted with a seed derived from (stream seed,
    batch index), so iteration order and chunk-level parallelism cannot
    change the pixels.
    """

    def __init__(
        self,
        images: ImageBatch,
        labels: torch.Tensor | None,
        kind: str,
        severity: int,
        seed: int,
        batch_size: int,
    ):
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        self.images = images
        self.labels = labels
        self.kind = kind
        self.severity = severity
        self.seed = seed
        self.batch_size = batch_size

    def __len__(self) -> int:
        return math.ceil(self.images.batch_size / self.batch_size)

    def __iter__(self) -> Iterator[tuple[ImageBatch, torch.Tensor | None]]:
        n = self.images.batch_size
        for index, start in enumerate(range(0, n, self.batch_size)):
            stop = min(start + self.batch_size, n)
            chunk = ImageBatch(self.images.pixels[start:stop], self.images.provenance)
            spec = CorruptionSpec(
                kind=self.kind,
                severity=self.severity,
                seed=derive_seed(self.seed, "batch", index),
            )
            corrupted = apply_corruption(chunk, spec)
            truth = self.labels[start:stop] if self.labels is not None else None
            yield corrupted, truth


def corruption_suite(
    images: ImageBatch,
    labels: torch.Tensor | None,
    kinds: list[str],
    severity: int,
    seed: int,
    batch_size: int,
) -> dict[str, CorruptionStream]:
    """One deterministic stream per kind, each with its own derived seed."""
    if not kinds:
        raise EmptyKinds("no corruption kinds requested")
    for kind in kinds:
        if kind not in KINDS:
            raise UnknownKind(f"unknown corruption kind {kind!r}")
    return {
        kind: CorruptionStream(
            images,
            labels,
            kind,
            severity,
            derive_seed(seed, "corruption", kind),
            batch_size,
        )
        for kind in kinds
    }
