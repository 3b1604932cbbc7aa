"""Measurement apparatus: modality gap, projections, batch summaries.

The modality gap is the optimal-transport cost between the image and
text embedding clouds under uniform weights. Small instances are solved
exactly; larger ones are subsampled and averaged.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import torch
from scipy.optimize import linear_sum_assignment, linprog

from .errors import DegenerateSpectrum, EmptySet
from .hypersphere import EmbeddingBatch, PredictionBatch, PrototypeBank
from .objectives import entropy_loss, uniformity_metric
from .seeding import derive_seed

log = logging.getLogger(__name__)

EXACT_LIMIT = 512
SUBSAMPLE_DRAWS = 5


def _ground_cost(a: np.ndarray, b: np.ndarray, ground: str) -> np.ndarray:
    if ground == "euclidean":
        diff = a[:, None, :] - b[None, :, :]
        return np.sqrt((diff * diff).sum(axis=2))
    if ground == "geodesic":
        dots = np.clip(a @ b.T, -1.0, 1.0)
        return np.arccos(dots)
    raise ValueError(f"unknown ground metric {ground!r}")


def _exact_emd(cost: np.ndarray) -> float:
    n, m = cost.shape
    if n == m:
        rows, cols = linear_sum_assignment(cost)
        return float(cost[rows, cols].sum() / n)
    # Unequal sizes: uniform-weight transportation LP.
    a = np.full(n, 1.0 / n)
    b = np.full(m, 1.0 / m)
    eq_rows = []
    for i in range(n):
        row = np.zeros(n * m)
        row[i * m : (i + 1) * m] = 1.0
        eq_rows.append(row)
    for j in range(m):
        row = np.zeros(n * m)
        row[j::m] = 1.0
        eq_rows.append(row)
    # Drop one redundant constraint so the system has full rank.
    a_eq = np.stack(eq_rows[:-1])
    b_eq = np.concatenate([a, b])[:-1]
    res = linprog(cost.reshape(-1), A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if not res.success:  # pragma: no cover - LP on a feasible polytope
        raise RuntimeError(f"transport LP failed: {res.message}")
    return float(res.fun)


def modality_gap_emd(
    images: EmbeddingBatch,
    texts: PrototypeBank,
    ground: str = "euclidean",
    seed: int = 0,
) -> float:
    """Earth mover's distance between image and prototype point clouds.

    Both clouds carry uniform weights. Sets up to 512 points are solved
    exactly; above that, 5 seeded subsamples of 512 are averaged.
    """
    img = images.data.detach().to(torch.float64).numpy()
    txt = texts.prototypes.detach().to(torch.float64).numpy()
    if img.shape[0] == 0 or txt.shape[0] == 0:
        raise EmptySet("both embedding sets must be nonempty")
    if max(img.shape[0], txt.shape[0]) <= EXACT_LIMIT:
        return _exact_emd(_ground_cost(img, txt, ground))
    values = []
    for draw in range(SUBSAMPLE_DRAWS):
        rng = np.random.default_rng(derive_seed(seed, "emd_subsample", draw))
        sub_img = img[rng.choice(img.shape[0], min(img.shape[0], EXACT_LIMIT), replace=False)]
        sub_txt = txt[rng.choice(txt.shape[0], min(txt.shape[0], EXACT_LIMIT), replace=False)]
        values.append(_exact_emd(_ground_cost(sub_img, sub_txt, ground)))
    return float(np.mean(values))


def spherical_pca_project(
    z: EmbeddingBatch, bank: PrototypeBank
) -> tuple[torch.Tensor, torch.Tensor]:
    """Project both embedding sets onto the unit circle in the top-2 PCA plane.

    The plane comes from the combined mean-centered covariance; each
    projected point is renormalized onto the circle. Points that project
    to (near) zero land at angle 0 with a warning.
    """
    combined = torch.cat([z.data, bank.prototypes], dim=0).detach().to(torch.float64)
    if combined.shape[0] < 3:
        raise ValueError(f"need at least 3 combined points, got {combined.shape[0]}")
    centered = combined - combined.mean(dim=0, keepdim=True)
    cov = centered.T @ centered / combined.shape[0]
    eigvals, eigvecs = torch.linalg.eigh(cov)
    top = eigvals[-2:]
    if float(top[0]) < 1e-10 and float(top[1]) < 1e-10:
        raise DegenerateSpectrum("top-2 eigenvalues below 1e-10; no projection plane")
    plane = eigvecs[:, -2:]
    coords = centered @ plane
    norms = torch.linalg.vector_norm(coords, dim=1, keepdim=True)
    dead = norms.squeeze(1) <= 1e-12
    if bool(dead.any()):
        log.warning("%d points projected to zero; placed at angle 0", int(dead.sum()))
        coords = torch.where(
            dead[:, None], torch.tensor([1.0, 0.0], dtype=coords.dtype), coords
        )
        norms = torch.linalg.vector_norm(coords, dim=1, keepdim=True)
    on_circle = coords / norms
    n_img = z.batch_size
    return on_circle[:n_img], on_circle[n_img:]


@dataclass(frozen=True)
class DiagnosticsReport:
    mean_entropy: float
    uniformity_metric: float
    emd_modality_gap: float
    prediction_histogram: list[int]
    accuracy: float | None = None


def collect_batch_metrics(
    z: EmbeddingBatch,
    pred: PredictionBatch,
    bank: PrototypeBank,
    truth: torch.Tensor | None = None,
) -> DiagnosticsReport:
    """Aggregate the per-batch diagnostics used in the summary tables."""
    hist = torch.bincount(pred.labels, minlength=bank.num_classes)
    accuracy = None
    if truth is not None:
        accuracy = float((pred.labels == truth).double().mean())
    return DiagnosticsReport(
        mean_entropy=float(entropy_loss(pred).detach()),
        uniformity_metric=uniformity_metric(z),
        emd_modality_gap=modality_gap_emd(z, bank),
        prediction_histogram=hist.tolist(),
        accuracy=accuracy,
    )
