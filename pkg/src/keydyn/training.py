"""Training loop: batch sampling per loss kind, step-decayed Adam, telemetry.

Sampling draws from pre-vectorized sequences grouped by subject. Subjects with
fewer than two sessions cannot anchor a genuine pair and are excluded from the
pairable pool (they still serve as negatives).
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .dataset import KeystrokeSession, by_subject
from .encoder import EncoderConfig, KeystrokeEncoder, build_model, features_to_tensors, save_checkpoint
from .errors import ConfigurationError, DataError, NumericFailure
from .features import FeatureSequence, fit_norm_stats, vectorize
from .losses import LossConfig, batch_all_triplet_loss, cross_entropy_loss, triplet_loss, wdcl_loss
from .metrics import Metric


@dataclass
class TrainConfig:
    steps: int
    loss: LossConfig = field(default_factory=LossConfig)
    metric: Metric = Metric.EUCLIDEAN
    batch_size: int = 512
    subjects_per_batch: int = 64
    samples_per_subject: int = 8
    lr: float = 1e-3
    decay_every: int = 25_000
    decay_factor: float = 0.1
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    seed: int = 0
    checkpoint_every: int = 0  # 0: final checkpoint only
    determinism: bool = True

    def __post_init__(self) -> None:
        if self.steps <= 0 or self.batch_size <= 0 or self.decay_every <= 0:
            raise ConfigurationError("steps, batch_size and decay_every must be positive")
        if self.lr <= 0 or self.decay_factor <= 0:
            raise ConfigurationError("lr and decay_factor must be positive")
        if self.subjects_per_batch < 2 or self.samples_per_subject < 1:
            raise ConfigurationError("need at least 2 subjects per batch and 1 sample per subject")


def lr_at(step: int, config: TrainConfig) -> float:
    """Step-decay schedule: lr * factor^(step // every)."""
    return config.lr * config.decay_factor ** (step // config.decay_every)


def desk_profile(loss: LossConfig | None = None) -> tuple[EncoderConfig, TrainConfig]:
    """Small model + short schedule that trains on a laptop CPU in minutes."""
    enc = EncoderConfig(max_len=50, key_embed_dim=8, hidden=64, layers=2, heads=4, ffn_dim=128, out_dim=32)
    steps = 2_000
    cfg = TrainConfig(
        steps=steps,
        loss=loss or LossConfig(kind="batch_all_triplet"),
        batch_size=64,
        subjects_per_batch=8,
        samples_per_subject=4,
        decay_every=steps // 3,
    )
    return enc, cfg


def paper_profile(loss: LossConfig | None = None) -> tuple[EncoderConfig, TrainConfig]:
    """Full-size model and schedule from the original study."""
    enc = EncoderConfig(max_len=100)
    return enc, TrainConfig(steps=75_000, loss=loss or LossConfig(kind="triplet"))


# --- batch sampling ---------------------------------------------------------


@dataclass(frozen=True)
class SamplePools:
    """Index pools over a vectorized corpus, grouped by subject."""

    labels: np.ndarray  # (N,) int subject index per sequence
    groups: list[np.ndarray]  # per subject: indices into the corpus
    pairable: np.ndarray  # subject indices with >= 2 sequences

    @classmethod
    def build(cls, subject_of: Sequence[str]) -> "SamplePools":
        subjects = sorted(set(subject_of))
        index = {s: i for i, s in enumerate(subjects)}
        labels = np.array([index[s] for s in subject_of], dtype=np.int64)
        groups = [np.flatnonzero(labels == i) for i in range(len(subjects))]
        pairable = np.array([i for i, g in enumerate(groups) if len(g) >= 2], dtype=np.int64)
        if len(pairable) == 0:
            raise DataError("no subject has two or more sessions; cannot form genuine pairs")
        if len(groups) < 2:
            raise DataError("training requires at least two subjects")
        return cls(labels, groups, pairable)


def sample_triplets(rng: np.random.Generator, pools: SamplePools, n: int):
    """(anchor, positive, negative) index arrays; a/p share a subject, n does not."""
    anchors_subj = rng.choice(pools.pairable, size=n, replace=True)
    a = np.empty(n, dtype=np.int64)
    p = np.empty(n, dtype=np.int64)
    neg = np.empty(n, dtype=np.int64)
    n_subjects = len(pools.groups)
    for i, s in enumerate(anchors_subj):
        a[i], p[i] = rng.choice(pools.groups[s], size=2, replace=False)
        other = rng.integers(n_subjects - 1)
        other += other >= s
        neg[i] = rng.choice(pools.groups[other])
    return a, p, neg


def sample_subject_blocks(rng: np.random.Generator, pools: SamplePools, subjects: int, per_subject: int):
    """Indices and labels for a (subjects x per_subject) block batch."""
    avail = pools.pairable
    chosen = rng.choice(avail, size=min(subjects, len(avail)), replace=False)
    if len(chosen) < 2:
        raise DataError("block batches need two or more pairable subjects")
    idx, labels = [], []
    for s in chosen:
        g = pools.groups[s]
        idx.append(rng.choice(g, size=per_subject, replace=len(g) < per_subject))
        labels.append(np.full(per_subject, s, dtype=np.int64))
    return np.concatenate(idx), np.concatenate(labels)


def sample_pairs(rng: np.random.Generator, pools: SamplePools, n: int):
    """n genuine pairs, pair subjects mutually distinct whenever enough exist."""
    replace = len(pools.pairable) < n
    subj = rng.choice(pools.pairable, size=n, replace=replace)
    a = np.empty(n, dtype=np.int64)
    p = np.empty(n, dtype=np.int64)
    for i, s in enumerate(subj):
        a[i], p[i] = rng.choice(pools.groups[s], size=2, replace=False)
    return a, p


def sample_labeled_pairs(rng: np.random.Generator, pools: SamplePools, n: int):
    """Half genuine, half impostor (source, target, label) index arrays."""
    n_gen = n // 2
    src = np.empty(n, dtype=np.int64)
    tgt = np.empty(n, dtype=np.int64)
    y = np.zeros(n, dtype=np.float64)
    src[:n_gen], tgt[:n_gen] = sample_pairs(rng, pools, n_gen)
    y[:n_gen] = 1.0
    n_subjects = len(pools.groups)
    for i in range(n_gen, n):
        s = rng.integers(n_subjects)
        t = rng.integers(n_subjects - 1)
        t += t >= s
        src[i] = rng.choice(pools.groups[s])
        tgt[i] = rng.choice(pools.groups[t])
    return src, tgt, y


# --- training loop ----------------------------------------------------------


@dataclass
class TrainReport:
    steps: int
    final_loss: float
    final_lr: float
    wall_seconds: float
    checkpoint_dir: str
    telemetry_path: str


def _vectorize_corpus(sessions, stats, max_len) -> tuple[list[FeatureSequence], list[str]]:
    seqs, owners = [], []
    for subject, subject_sessions in sorted(by_subject(sessions).items()):
        for sess in subject_sessions:
            seqs.append(vectorize(sess, stats, max_len))
            owners.append(subject)
    return seqs, owners


def _batch_loss(
    model: KeystrokeEncoder,
    seqs: list[FeatureSequence],
    pools: SamplePools,
    rng: np.random.Generator,
    torch_rng: torch.Generator,
    cfg: TrainConfig,
) -> torch.Tensor:
    kind = cfg.loss.kind
    margin = cfg.loss.resolved_margin(cfg.metric)

    def enc(idx: np.ndarray) -> torch.Tensor:
        batch = features_to_tensors([seqs[i] for i in idx], model.dtype)
        return model.encode(*batch, train_mode=True, rng=torch_rng)

    if kind == "triplet":
        a, p, n = sample_triplets(rng, pools, cfg.batch_size)
        z = enc(np.concatenate([a, p, n]))
        za, zp, zn = z.split(len(a))
        return triplet_loss(za, zp, zn, cfg.metric, margin)
    if kind == "batch_all_triplet":
        idx, labels = sample_subject_blocks(rng, pools, cfg.subjects_per_batch, cfg.samples_per_subject)
        z = enc(idx)
        return batch_all_triplet_loss(z, torch.from_numpy(labels), cfg.metric, margin, cfg.loss.reduction)
    if kind == "wdcl":
        a, p = sample_pairs(rng, pools, cfg.batch_size)
        z = enc(np.concatenate([a, p]))
        za, zp = z.split(len(a))
        return wdcl_loss(
            za, zp, k=cfg.loss.wdcl_k,
            negative_variant=cfg.loss.wdcl_negative_variant,
            dcl_literature_form=cfg.loss.dcl_literature_form,
        )
    if kind == "softmax":
        src, tgt, y = sample_labeled_pairs(rng, pools, cfg.batch_size)
        src_batch = features_to_tensors([seqs[i] for i in src], model.dtype)
        tgt_batch = features_to_tensors([seqs[i] for i in tgt], model.dtype)
        probs = model.encode_pair(src_batch, tgt_batch, train_mode=True, rng=torch_rng)
        return cross_entropy_loss(torch.from_numpy(y), probs[:, 0])
    raise ConfigurationError(f"unknown loss kind {kind!r}")


def train(
    sessions: Sequence[KeystrokeSession],
    encoder_config: EncoderConfig,
    train_config: TrainConfig,
    out_dir: str | Path,
) -> tuple[KeystrokeEncoder, TrainReport]:
    """Fit normalization on `sessions`, train a fresh model, checkpoint to out_dir."""
    cfg = train_config
    if cfg.loss.kind == "softmax" and encoder_config.mode != "cross":
        raise ConfigurationError("softmax loss trains a cross-encoder")
    if cfg.loss.kind != "softmax" and encoder_config.mode != "bi":
        raise ConfigurationError(f"{cfg.loss.kind} loss trains a bi-encoder")
    if cfg.loss.kind == "wdcl" and cfg.metric == Metric.MANHATTAN:
        raise ConfigurationError("wdcl is cosine-based; manhattan metric is unsupported")

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stats = fit_norm_stats(sessions, encoder_config.max_len)
    seqs, owners = _vectorize_corpus(sessions, stats, encoder_config.max_len)
    pools = SamplePools.build(owners)

    model = build_model(encoder_config, cfg.seed)
    model.norm_stats = stats
    rng = np.random.default_rng(cfg.seed)
    torch_rng = torch.Generator().manual_seed(cfg.seed + 1)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr, betas=cfg.adam_betas, eps=cfg.adam_eps)

    prev_threads = torch.get_num_threads()
    prev_det = torch.are_deterministic_algorithms_enabled()
    if cfg.determinism:
        torch.set_num_threads(1)
        torch.use_deterministic_algorithms(True)

    telemetry_path = out_dir / "telemetry.jsonl"
    t0 = time.monotonic()
    loss_value = float("nan")
    lr = cfg.lr
    try:
        with telemetry_path.open("w", encoding="utf-8") as tele:
            for step in range(cfg.steps):
                lr = lr_at(step, cfg)
                for group in optimizer.param_groups:
                    group["lr"] = lr
                loss = _batch_loss(model, seqs, pools, rng, torch_rng, cfg)
                if not torch.isfinite(loss):
                    raise NumericFailure(
                        f"non-finite loss {loss.item()} at step {step} (loss={cfg.loss.kind}, lr={lr:.3g})"
                    )
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                loss_value = float(loss.item())
                tele.write(json.dumps({
                    "step": step, "loss": loss_value, "lr": lr,
                    "wall_ms": round((time.monotonic() - t0) * 1e3, 3),
                }) + "\n")
                if cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0 and step + 1 < cfg.steps:
                    save_checkpoint(model, out_dir / f"checkpoint-step{step + 1:06d}")
    finally:
        if cfg.determinism:
            torch.set_num_threads(prev_threads)
            torch.use_deterministic_algorithms(prev_det)

    ckpt_dir = out_dir / "checkpoint"
    save_checkpoint(model, ckpt_dir)
    report = TrainReport(
        steps=cfg.steps,
        final_loss=loss_value,
        final_lr=lr,
        wall_seconds=round(time.monotonic() - t0, 3),
        checkpoint_dir=str(ckpt_dir),
        telemetry_path=str(telemetry_path),
    )
    return model, report
