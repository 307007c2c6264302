"""Training objectives: triplet, batch-all triplet, weighted decoupled
contrastive (WDCL), and binary cross-entropy for the pair classifier.

Batch semantics follow the samplers in `training`: the batch-all loss sees a
flat batch with subject labels; WDCL sees one positive pair per subject and
treats every member of every other pair as a negative for each anchor.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

from .errors import ConfigurationError
from .metrics import Metric, cosine_similarity, distance, pairwise_distances

DEFAULT_MARGINS = {
    Metric.EUCLIDEAN: 1.0,
    Metric.MANHATTAN: 1.0,
    Metric.COSINE: 0.25,
}

LOSS_KINDS = ("triplet", "batch_all_triplet", "wdcl", "softmax")


@dataclass
class LossConfig:
    kind: str = "batch_all_triplet"
    margin: float | None = None  # None: metric default (1.0, cosine 0.25)
    wdcl_k: float = 1.0
    wdcl_negative_variant: bool = True
    dcl_literature_form: bool = False
    reduction: str = "mean_active"  # or "sum"

    def __post_init__(self) -> None:
        if self.kind not in LOSS_KINDS:
            raise ConfigurationError(f"unknown loss kind {self.kind!r}")
        if self.reduction not in ("mean_active", "sum"):
            raise ConfigurationError(f"unknown reduction {self.reduction!r}")
        if self.wdcl_k <= 0:
            raise ConfigurationError("wdcl_k must be positive")
        if self.margin is not None and self.margin <= 0:
            raise ConfigurationError("margin must be positive")

    def resolved_margin(self, metric: Metric | str) -> float:
        return self.margin if self.margin is not None else DEFAULT_MARGINS[Metric(metric)]


def triplet_loss(
    z_a: torch.Tensor,
    z_p: torch.Tensor,
    z_n: torch.Tensor,
    metric: Metric | str,
    margin: float,
) -> torch.Tensor:
    """Hinge on d(a,p) - d(a,n) + margin, averaged over any leading batch dim."""
    loss = (distance(z_a, z_p, metric) - distance(z_a, z_n, metric) + margin).clamp(min=0.0)
    return loss.mean()


def valid_triplet_mask(labels: torch.Tensor) -> torch.Tensor:
    """Boolean (B, B, B) mask over (anchor, positive, negative) index triples."""
    same = labels.unsqueeze(0) == labels.unsqueeze(1)
    eye = torch.eye(len(labels), dtype=torch.bool, device=labels.device)
    pos = same & ~eye  # label(a) == label(p), a != p
    neg = ~same  # label(n) != label(a)
    return pos.unsqueeze(2) & neg.unsqueeze(1)


def count_valid_triplets(labels: torch.Tensor) -> int:
    """Number of (a, p, n) triples without materializing the cube."""
    same = labels.unsqueeze(0) == labels.unsqueeze(1)
    eye = torch.eye(len(labels), dtype=torch.bool, device=labels.device)
    n_pos = (same & ~eye).sum(dim=1)
    n_neg = (~same).sum(dim=1)
    return int((n_pos * n_neg).sum())


def batch_all_triplet_loss(
    embeddings: torch.Tensor,
    labels: torch.Tensor,
    metric: Metric | str,
    margin: float,
    reduction: str = "mean_active",
) -> torch.Tensor:
    """Hinge loss over every valid (anchor, positive, negative) triple.

    reduction="sum" is the literal summed form; "mean_active" divides by the
    number of triples with strictly positive loss, the usual batch-all
    normalization (falls back to 0 when nothing is active).
    """
    if count_valid_triplets(labels) == 0:
        raise ValueError("batch contains no valid triplet (need 2+ subjects, one with 2+ samples)")
    dist = pairwise_distances(embeddings, metric)
    # loss[a, p, n] = d(a, p) - d(a, n) + margin
    loss = dist.unsqueeze(2) - dist.unsqueeze(1) + margin
    loss = loss.clamp(min=0.0) * valid_triplet_mask(labels)
    if reduction == "sum":
        return loss.sum()
    active = (loss > 0).sum().clamp(min=1)
    return loss.sum() / active


def wdcl_pair_weights(
    z_a: torch.Tensor,
    z_p: torch.Tensor,
    k: float,
    negative_variant: bool = True,
) -> torch.Tensor:
    """von Mises-Fisher pair weights, normalized to mean 1 over the batch.

    The literal weighting assigns larger weights to already-similar pairs;
    negative_variant=True flips it to 2 - w so distant positive pairs weigh
    more. The returned tensor is detached: no gradient flows through weights.
    """
    e = torch.exp(cosine_similarity(z_a, z_p) / k)
    w = e / e.mean()
    if negative_variant:
        w = 2.0 - w
    return w.detach()


def wdcl_loss(
    z_a: torch.Tensor,
    z_p: torch.Tensor,
    k: float = 1.0,
    negative_variant: bool = True,
    dcl_literature_form: bool = False,
    weights: torch.Tensor | None = None,
) -> torch.Tensor:
    """Weighted decoupled contrastive loss over B positive pairs (one per subject).

    Both elements of each pair act as anchor once; negatives for an anchor are
    the 2(B-1) members of all other pairs. Per anchor:

        -w * exp(sim(anchor, partner)) + log sum_n exp(sim(anchor, n))

    with sim = cosine similarity. dcl_literature_form uses -w * sim(anchor,
    partner) for the positive term instead. `weights` overrides the computed
    pair weights (used by gradient checks); by default they are computed here
    and detached.
    """
    B = z_a.shape[0]
    if B < 2:
        raise ValueError("wdcl needs at least 2 pairs to form negatives")
    if weights is None:
        weights = wdcl_pair_weights(z_a, z_p, k, negative_variant)
    everyone = torch.cat([z_a, z_p], dim=0)  # (2B, D)
    pair_of = torch.cat([torch.arange(B), torch.arange(B)]).to(z_a.device)
    sim = cosine_similarity(everyone.unsqueeze(1), everyone.unsqueeze(0))  # (2B, 2B)
    partner_sim = cosine_similarity(z_a, z_p)  # shared by both anchors of a pair
    neg_mask = pair_of.unsqueeze(1) != pair_of.unsqueeze(0)
    neg_logsum = torch.logsumexp(
        sim.masked_fill(~neg_mask, float("-inf")), dim=1
    )
    w2 = torch.cat([weights, weights], dim=0)
    pos2 = torch.cat([partner_sim, partner_sim], dim=0)
    positive_term = w2 * (pos2 if dcl_literature_form else torch.exp(pos2))
    return (-positive_term + neg_logsum).mean()


def cross_entropy_loss(y: torch.Tensor, y_hat: torch.Tensor) -> torch.Tensor:
    """Binary cross-entropy; y_hat is the predicted probability of class 1."""
    # clamp bounds are below float32 resolution near 1, so work in float64
    y_hat = torch.as_tensor(y_hat).double().clamp(min=1e-12, max=1.0 - 1e-12)
    y = torch.as_tensor(y, dtype=y_hat.dtype)
    return -(y * torch.log(y_hat) + (1.0 - y) * torch.log(1.0 - y_hat)).mean()
