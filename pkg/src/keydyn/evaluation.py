"""Equal-error-rate computation and the enrollment/verification protocol.

EER is read off the convex hull of the ROC: raw operating points form a
staircase whose upper hull is the achievable ROC under threshold
randomization, and the equal-error rate is the hull's intersection with the
miss-rate = false-alarm-rate diagonal. This keeps the estimate exact for the
tiny score sets that appear in per-subject evaluation.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .dataset import KeystrokeSession, by_subject
from .encoder import KeystrokeEncoder, embed_sequences, pair_similarity
from .errors import ConfigurationError, DataError
from .features import vectorize
from .scoring import ScorerConfig, fit_scorer, score_batch

SESSIONS_PER_SUBJECT = 15
ENROLL_POOL = 10  # enrollment comes from the first ten sessions
QUERY_POOL = 5  # genuine queries are the last five


def roc_points(genuine: np.ndarray, impostor: np.ndarray) -> np.ndarray:
    """Raw ROC staircase as (false-accept rate, true-accept rate) rows.

    Thresholds sweep the pooled score values from high to low; the accept rule
    is score >= threshold. First row is (0, 0), last is (1, 1).
    """
    genuine = np.asarray(genuine, dtype=np.float64)
    impostor = np.asarray(impostor, dtype=np.float64)
    if genuine.size == 0 or impostor.size == 0:
        raise ValueError("need at least one genuine and one impostor score")
    thresholds = np.unique(np.concatenate([genuine, impostor]))[::-1]
    far = [0.0]
    tar = [0.0]
    for t in thresholds:
        far.append(float((impostor >= t).mean()))
        tar.append(float((genuine >= t).mean()))
    if far[-1] != 1.0 or tar[-1] != 1.0:
        far.append(1.0)
        tar.append(1.0)
    return np.column_stack([far, tar])


def _upper_hull(points: np.ndarray) -> np.ndarray:
    """Upper convex hull of 2-D points, left to right (monotone chain)."""
    pts = points[np.lexsort((points[:, 1], points[:, 0]))]
    hull: list[np.ndarray] = []
    for p in pts:
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
            if cross >= 0:  # b is on or below the chord a->p
                hull.pop()
            else:
                break
        hull.append(p)
    return np.array(hull)


def eer(genuine: Iterable[float], impostor: Iterable[float]) -> float:
    """Equal error rate of "higher score = more genuine" score sets."""
    pts = roc_points(np.fromiter(genuine, dtype=np.float64), np.fromiter(impostor, dtype=np.float64))
    hull = _upper_hull(pts)
    # miss - false-alarm changes sign exactly once along the hull
    gap = (1.0 - hull[:, 1]) - hull[:, 0]
    for (f0, t0), (f1, t1), d0, d1 in zip(hull[:-1], hull[1:], gap[:-1], gap[1:]):
        if d0 >= 0.0 >= d1:
            if d0 == d1:
                return float(f0)
            s = d0 / (d0 - d1)
            return float(f0 + s * (f1 - f0))
    return float(hull[-1][0])  # unreachable for well-formed hulls


@dataclass(frozen=True)
class ScoreSet:
    subject_id: str
    genuine: np.ndarray
    impostor: np.ndarray

    @property
    def eer(self) -> float:
        return eer(self.genuine, self.impostor)


def adaptive_eer(score_sets: Sequence[ScoreSet]) -> float:
    """Mean of per-subject EERs (each subject keeps its own threshold)."""
    if not score_sets:
        raise ValueError("no score sets")
    return float(np.mean([s.eer for s in score_sets]))


def global_eer(score_sets: Sequence[ScoreSet]) -> float:
    """EER of all scores pooled under a single shared threshold."""
    if not score_sets:
        raise ValueError("no score sets")
    genuine = np.concatenate([s.genuine for s in score_sets])
    impostor = np.concatenate([s.impostor for s in score_sets])
    return eer(genuine, impostor)


@dataclass(frozen=True)
class ProtocolConfig:
    n_enroll: int = 10
    seq_len: int = 50
    scorer: ScorerConfig = field(default_factory=ScorerConfig)
    impostors_per_subject: int | None = None  # None: one per other subject
    seed: int = 0

    def __post_init__(self) -> None:
        if not 1 <= self.n_enroll <= ENROLL_POOL:
            raise ConfigurationError(f"n_enroll must be in 1..{ENROLL_POOL}")
        if self.seq_len < 2:
            raise ConfigurationError("seq_len must be at least 2")
        if self.impostors_per_subject is not None and self.impostors_per_subject < 1:
            raise ConfigurationError("impostors_per_subject must be >= 1 when set")


@dataclass
class EvalReport:
    adaptive_eer: float
    global_eer: float
    per_subject: dict[str, float]
    n_subjects: int
    skipped_subjects: list[str]
    roc: np.ndarray
    config: dict
    warnings: list[str]

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["roc"] = [[float(f), float(t)] for f, t in self.roc]
        return doc


def _embed_subject(model, sessions, stats, seq_len) -> np.ndarray:
    seqs = [vectorize(s, stats, seq_len) for s in sessions]
    return embed_sequences(model, seqs)


def _cross_scores(model, enroll_sessions, query_sessions, stats, seq_len) -> np.ndarray:
    """Mean P(similar) of each query against every enrollment session."""
    enroll = [vectorize(s, stats, seq_len) for s in enroll_sessions]
    queries = [vectorize(s, stats, seq_len) for s in query_sessions]
    scores = np.zeros(len(queries))
    for i, q in enumerate(queries):
        probs = pair_similarity(model, enroll, [q] * len(enroll))
        scores[i] = probs.mean()
    return scores


def run_protocol(
    model: KeystrokeEncoder,
    sessions: Sequence[KeystrokeSession],
    config: ProtocolConfig = ProtocolConfig(),
) -> tuple[list[ScoreSet], list[str]]:
    """Enrollment/verification score sets per subject.

    Each subject enrolls n_enroll sessions sampled (seeded) from its first
    ten; its last five sessions are genuine queries; impostor queries are
    drawn one per other subject from that subject's query pool (capped by
    impostors_per_subject). Subjects with fewer than fifteen sessions are
    skipped and reported.
    """
    if model.norm_stats is None:
        raise DataError("model has no normalization stats; train or load a checkpoint first")
    if model.config.max_len < config.seq_len:
        raise ConfigurationError(
            f"seq_len {config.seq_len} exceeds model max_len {model.config.max_len}"
        )
    stats = model.norm_stats
    rng = np.random.default_rng(config.seed)
    grouped = by_subject(sessions)
    eligible: dict[str, list[KeystrokeSession]] = {}
    skipped: list[str] = []
    for subject in sorted(grouped):
        if len(grouped[subject]) >= SESSIONS_PER_SUBJECT:
            eligible[subject] = grouped[subject][:SESSIONS_PER_SUBJECT]
        else:
            skipped.append(subject)
    if len(eligible) < 2:
        raise DataError("protocol needs at least two subjects with fifteen sessions")
    if skipped:
        warnings.warn(f"skipping {len(skipped)} subject(s) with fewer than 15 sessions")

    subjects = sorted(eligible)
    cross = model.config.mode == "cross"
    query_embeddings: dict[str, np.ndarray] = {}
    if not cross:
        for s in subjects:
            query_embeddings[s] = _embed_subject(model, eligible[s][ENROLL_POOL:], stats, config.seq_len)

    score_sets = []
    for s in subjects:
        enroll_idx = sorted(rng.choice(ENROLL_POOL, size=config.n_enroll, replace=False))
        enroll_sessions = [eligible[s][i] for i in enroll_idx]
        others = [o for o in subjects if o != s]
        if config.impostors_per_subject is not None and len(others) > config.impostors_per_subject:
            chosen = rng.choice(len(others), size=config.impostors_per_subject, replace=False)
            others = [others[i] for i in sorted(chosen)]
        impostor_picks = {o: int(rng.integers(QUERY_POOL)) for o in others}

        if cross:
            genuine = _cross_scores(model, enroll_sessions, eligible[s][ENROLL_POOL:], stats, config.seq_len)
            impostor_sessions = [eligible[o][ENROLL_POOL + impostor_picks[o]] for o in others]
            impostor = _cross_scores(model, enroll_sessions, impostor_sessions, stats, config.seq_len)
        else:
            scorer = fit_scorer(
                _embed_subject(model, enroll_sessions, stats, config.seq_len), config.scorer
            )
            genuine = score_batch(scorer, query_embeddings[s])
            impostor = score_batch(
                scorer, np.stack([query_embeddings[o][impostor_picks[o]] for o in others])
            )
        score_sets.append(ScoreSet(s, genuine, impostor))
    return score_sets, skipped


def evaluate(
    model: KeystrokeEncoder,
    sessions: Sequence[KeystrokeSession],
    config: ProtocolConfig = ProtocolConfig(),
) -> EvalReport:
    score_sets, skipped = run_protocol(model, sessions, config)
    adaptive = adaptive_eer(score_sets)
    pooled = global_eer(score_sets)
    notes = []
    for label, value in (("adaptive", adaptive), ("global", pooled)):
        if value > 0.5:
            notes.append(
                f"{label} EER {value:.3f} exceeds 0.5; scores may have inverted polarity"
            )
    genuine = np.concatenate([s.genuine for s in score_sets])
    impostor = np.concatenate([s.impostor for s in score_sets])
    cfg_doc = asdict(config)
    cfg_doc["scorer"]["metric"] = str(config.scorer.metric)
    return EvalReport(
        adaptive_eer=adaptive,
        global_eer=pooled,
        per_subject={s.subject_id: s.eer for s in score_sets},
        n_subjects=len(score_sets),
        skipped_subjects=skipped,
        roc=roc_points(genuine, impostor),
        config=cfg_doc,
        warnings=notes,
    )


def sweep(
    model: KeystrokeEncoder,
    sessions: Sequence[KeystrokeSession],
    enroll_sizes: Sequence[int],
    seq_lens: Sequence[int],
    scorers: Sequence[ScorerConfig],
    seed: int = 0,
) -> list[dict]:
    """Grid of protocol runs; one result row per (enroll, seq_len, scorer)."""
    rows = []
    for n_enroll in enroll_sizes:
        for seq_len in seq_lens:
            for scorer in scorers:
                config = ProtocolConfig(n_enroll=n_enroll, seq_len=seq_len, scorer=scorer, seed=seed)
                report = evaluate(model, sessions, config)
                rows.append(
                    {
                        "n_enroll": n_enroll,
                        "seq_len": seq_len,
                        "scorer": scorer.kind,
                        "adaptive_eer": report.adaptive_eer,
                        "global_eer": report.global_eer,
                        "config_hash": config_hash(report.config),
                    }
                )
    return rows


def config_hash(config_doc: dict) -> str:
    blob = json.dumps(config_doc, sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def write_report(report: EvalReport, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")


def write_roc_csv(report: EvalReport, path: str | Path) -> None:
    lines = ["far,tar"] + [f"{f:.10g},{t:.10g}" for f, t in report.roc]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
