"""Temporal latency features and per-channel standardization.

Five channels per key i (press p_i, release r_i), digraph channels defined
against the next key and zero on the last real row:

    HL_i = r_i - p_i
    PL_i = p_{i+1} - p_i
    RL_i = r_{i+1} - r_i
    IL_i = p_{i+1} - r_i      (negative under overlapped typing)
    OL_i = r_{i+1} - p_i
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .dataset import KeystrokeSession

N_CHANNELS = 5
CHANNEL_NAMES = ("HL", "PL", "RL", "IL", "OL")
HOLD = 0  # only channel defined on the last real row

STD_FLOOR = 1e-6


@dataclass(frozen=True)
class NormStats:
    """Per-channel mean/std in ms, fitted on the training split only."""

    mean: np.ndarray  # (5,)
    std: np.ndarray  # (5,)

    def __post_init__(self) -> None:
        mean = np.asarray(self.mean, dtype=np.float64).reshape(N_CHANNELS)
        std = np.asarray(self.std, dtype=np.float64).reshape(N_CHANNELS)
        if not np.all(std > 0):
            raise ValueError("std components must be positive")
        mean.setflags(write=False)
        std.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> "NormStats":
        return cls(np.array(doc["mean"]), np.array(doc["std"]))


@dataclass(frozen=True)
class FeatureSequence:
    """Fixed-length standardized feature matrix with padding mask.

    mask is a prefix of True followed by False; rows with mask False are
    all-zero and their keycodes are 0.
    """

    values: np.ndarray  # (L, 5) float32
    mask: np.ndarray  # (L,) bool
    keycodes: np.ndarray  # (L,) int64

    def __post_init__(self) -> None:
        for arr in (self.values, self.mask, self.keycodes):
            arr.setflags(write=False)

    @property
    def length(self) -> int:
        return int(self.mask.sum())


def extract_raw(session: KeystrokeSession, max_len: int) -> tuple[np.ndarray, np.ndarray, int]:
    """Raw latency matrix in ms for the first min(len, max_len) events.

    Returns (raw (n, 5) float64, keycodes (n,) int64, n). Sequences longer
    than max_len are truncated to their first max_len events.
    """
    if max_len < 2:
        raise ValueError(f"max_len must be >= 2, got {max_len}")
    events = session.events[:max_len]
    n = len(events)
    press = np.array([e.press_ms for e in events], dtype=np.float64)
    release = np.array([e.release_ms for e in events], dtype=np.float64)
    raw = np.zeros((n, N_CHANNELS), dtype=np.float64)
    raw[:, 0] = release - press  # HL
    raw[:-1, 1] = press[1:] - press[:-1]  # PL
    raw[:-1, 2] = release[1:] - release[:-1]  # RL
    raw[:-1, 3] = press[1:] - release[:-1]  # IL
    raw[:-1, 4] = release[1:] - press[:-1]  # OL
    keycodes = np.array([e.keycode for e in events], dtype=np.int64)
    return raw, keycodes, n


def fit_norm_stats(sessions: Iterable[KeystrokeSession], max_len: int) -> NormStats:
    """Per-channel mean/std over all real feature entries of the given sessions.

    The hold channel uses every real row; digraph channels exclude the final
    real row of each session, whose entries are structural zeros rather than
    measurements. Stds are floored at STD_FLOOR.
    """
    count = np.zeros(N_CHANNELS, dtype=np.int64)
    total = np.zeros(N_CHANNELS, dtype=np.float64)
    total_sq = np.zeros(N_CHANNELS, dtype=np.float64)
    for session in sessions:
        raw, _, n = extract_raw(session, max_len)
        total[0] += raw[:, 0].sum()
        total_sq[0] += (raw[:, 0] ** 2).sum()
        count[0] += n
        total[1:] += raw[: n - 1, 1:].sum(axis=0)
        total_sq[1:] += (raw[: n - 1, 1:] ** 2).sum(axis=0)
        count[1:] += n - 1
    if count.min() == 0:
        raise ValueError("no sessions provided to fit_norm_stats")
    mean = total / count
    var = np.maximum(total_sq / count - mean**2, 0.0)
    std = np.maximum(np.sqrt(var), STD_FLOOR)
    return NormStats(mean, std)


def vectorize(session: KeystrokeSession, stats: NormStats, max_len: int) -> FeatureSequence:
    """Standardize a session into a fixed-length FeatureSequence."""
    if len(session.events) < 2:
        raise ValueError("session must have at least 2 events")
    raw, keycodes, n = extract_raw(session, max_len)
    values = np.zeros((max_len, N_CHANNELS), dtype=np.float32)
    values[:n] = ((raw - stats.mean) / stats.std).astype(np.float32)
    mask = np.zeros(max_len, dtype=bool)
    mask[:n] = True
    codes = np.zeros(max_len, dtype=np.int64)
    codes[:n] = keycodes
    return FeatureSequence(values=values, mask=mask, keycodes=codes)


def vectorize_all(
    sessions: Sequence[KeystrokeSession], stats: NormStats, max_len: int
) -> list[FeatureSequence]:
    return [vectorize(s, stats, max_len) for s in sessions]
