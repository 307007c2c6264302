"""Distance metrics over embedding vectors.

All functions accept torch tensors (gradients flow through) or anything
torch.as_tensor understands. Cosine distance is (1 - cosine similarity) / 2,
so it ranges from 0 (identical direction) to 1 (opposite direction).
"""

from __future__ import annotations

from enum import Enum

import torch

NORM_FLOOR = 1e-12


class Metric(str, Enum):
    EUCLIDEAN = "euclidean"
    MANHATTAN = "manhattan"
    COSINE = "cosine"


def _safe_sqrt(sq: torch.Tensor) -> torch.Tensor:
    # sqrt with zero (not NaN) gradient at exactly 0
    positive = sq > 0
    return torch.where(positive, torch.sqrt(torch.where(positive, sq, torch.ones_like(sq))), torch.zeros_like(sq))


def cosine_similarity(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Dot product over floored norms; last dim is the vector dim."""
    a = torch.as_tensor(a)
    b = torch.as_tensor(b)
    dot = (a * b).sum(dim=-1)
    na = _safe_sqrt((a * a).sum(dim=-1)).clamp(min=NORM_FLOOR)
    nb = _safe_sqrt((b * b).sum(dim=-1)).clamp(min=NORM_FLOOR)
    return dot / (na * nb)


def distance(a: torch.Tensor, b: torch.Tensor, metric: Metric | str) -> torch.Tensor:
    """Distance between vectors (broadcast over leading dims)."""
    metric = Metric(metric)
    a = torch.as_tensor(a)
    b = torch.as_tensor(b)
    if metric is Metric.EUCLIDEAN:
        return _safe_sqrt(((a - b) ** 2).sum(dim=-1))
    if metric is Metric.MANHATTAN:
        return (a - b).abs().sum(dim=-1)
    return (1.0 - cosine_similarity(a, b)) / 2.0


def pairwise_distances(x: torch.Tensor, metric: Metric | str) -> torch.Tensor:
    """All-pairs distance matrix (B, B) for a batch of embeddings (B, D)."""
    x = torch.as_tensor(x)
    return distance(x.unsqueeze(1), x.unsqueeze(0), metric)
