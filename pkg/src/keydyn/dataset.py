"""Session ingest, synthetic desk-scale data, and subject splits.

Canonical on-disk format is JSON lines, one session per line:
    {"subject_id": ..., "session_id": ..., "events": [{"keycode": k, "press_ms": p, "release_ms": r}, ...]}
Timestamps are session-relative milliseconds (first press at 0).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigurationError, DataError

MIN_SESSION_EVENTS = 2

DEFAULT_COLUMNS = {
    "subject": "participant",
    "session": "section",
    "keycode": "keycode",
    "press": "press",
    "release": "release",
}


@dataclass(frozen=True)
class KeyEvent:
    keycode: int
    press_ms: int
    release_ms: int

    def __post_init__(self) -> None:
        if not 0 <= self.keycode <= 255:
            raise ValueError(f"keycode {self.keycode} outside 0..255")
        if self.release_ms < self.press_ms:
            raise ValueError(f"release {self.release_ms} before press {self.press_ms}")


@dataclass(frozen=True)
class KeystrokeSession:
    subject_id: str
    session_id: str
    events: tuple[KeyEvent, ...]

    def __post_init__(self) -> None:
        if len(self.events) < MIN_SESSION_EVENTS:
            raise ValueError(f"session needs >= {MIN_SESSION_EVENTS} events, got {len(self.events)}")
        keys = [(e.press_ms, e.release_ms) for e in self.events]
        if keys != sorted(keys):
            raise ValueError("events not sorted by (press_ms, release_ms)")

    def __len__(self) -> int:
        return len(self.events)


@dataclass(frozen=True)
class DatasetSplit:
    train_subjects: frozenset[str]
    eval_subjects: frozenset[str]

    def __post_init__(self) -> None:
        if self.train_subjects & self.eval_subjects:
            raise ValueError("train and eval subject sets overlap")


@dataclass(frozen=True)
class SynthProfile:
    """Per-subject generator parameters, all in milliseconds."""

    hold_mean: float
    hold_std: float
    gap_mean: float
    gap_std: float
    alphabet: tuple[int, ...]

    def __post_init__(self) -> None:
        if min(self.hold_mean, self.gap_mean) <= 0 or min(self.hold_std, self.gap_std) <= 0:
            raise ValueError("profile means and stddevs must be positive")


@dataclass
class ImportReport:
    sessions: list[KeystrokeSession] = field(default_factory=list)
    dropped_sessions: int = 0
    skipped_rows: int = 0


def _sniff_delimiter(header_line: str) -> str:
    return "\t" if header_line.count("\t") >= header_line.count(",") else ","


def import_sessions(
    path: str | Path,
    column_map: Mapping[str, str] | None = None,
    delimiter: str | None = None,
) -> ImportReport:
    """Parse a delimited keystroke log into sessions.

    `column_map` maps the logical names subject/session/keycode/press/release
    to header names in the file; unspecified entries fall back to
    DEFAULT_COLUMNS. Rows with non-numeric fields are skipped and counted;
    sessions left with fewer than two events are dropped and counted.
    """
    path = Path(path)
    cols = dict(DEFAULT_COLUMNS)
    if column_map:
        unknown = set(column_map) - set(DEFAULT_COLUMNS)
        if unknown:
            raise ConfigurationError(f"unknown column-map keys: {sorted(unknown)}")
        cols.update(column_map)

    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    lines = text.splitlines()
    if not lines:
        raise DataError(f"{path} is empty")
    delim = delimiter or _sniff_delimiter(lines[0])

    reader = csv.DictReader(lines, delimiter=delim)
    header = reader.fieldnames or []
    missing = [name for name in cols.values() if name not in header]
    if missing:
        raise ConfigurationError(f"missing columns {missing} in {path} (header: {header})")

    report = ImportReport()
    raw: dict[tuple[str, str], list[tuple[int, int, int]]] = {}
    order: list[tuple[str, str]] = []
    for row in reader:
        try:
            key = (str(row[cols["subject"]]).strip(), str(row[cols["session"]]).strip())
            event = (
                int(float(row[cols["keycode"]])),
                int(float(row[cols["press"]])),
                int(float(row[cols["release"]])),
            )
        except (TypeError, ValueError, KeyError):
            report.skipped_rows += 1
            continue
        if key not in raw:
            raw[key] = []
            order.append(key)
        raw[key].append(event)

    for subject_id, session_id in order:
        events = raw[(subject_id, session_id)]
        if len(events) < MIN_SESSION_EVENTS:
            report.dropped_sessions += 1
            continue
        events.sort(key=lambda e: (e[1], e[2]))
        t0 = events[0][1]
        try:
            session = KeystrokeSession(
                subject_id=subject_id,
                session_id=session_id,
                events=tuple(KeyEvent(k, p - t0, r - t0) for k, p, r in events),
            )
        except ValueError:
            report.dropped_sessions += 1
            continue
        report.sessions.append(session)
    return report


def write_sessions(sessions: Iterable[KeystrokeSession], path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for s in sessions:
            doc = {
                "subject_id": s.subject_id,
                "session_id": s.session_id,
                "events": [
                    {"keycode": e.keycode, "press_ms": e.press_ms, "release_ms": e.release_ms}
                    for e in s.events
                ],
            }
            fh.write(json.dumps(doc, separators=(",", ":")) + "\n")


def read_sessions(path: str | Path) -> list[KeystrokeSession]:
    path = Path(path)
    sessions = []
    try:
        fh = path.open("r", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
                events = tuple(
                    KeyEvent(e["keycode"], e["press_ms"], e["release_ms"]) for e in doc["events"]
                )
                sessions.append(KeystrokeSession(doc["subject_id"], doc["session_id"], events))
            except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
                raise DataError(f"{path}:{lineno}: bad session record: {exc}") from exc
    return sessions


def generate_synthetic(
    n_subjects: int,
    sessions_per_subject: int,
    keys_per_session: int,
    seed: int,
) -> list[KeystrokeSession]:
    """Sample a deterministic desk-scale dataset of separable typists.

    Subject profiles are drawn from population distributions (hold mean
    N(90, 25) ms, press-to-press gap mean N(220, 60) ms, within-session
    noise 10-20 ms) so same-subject sessions sit closer in feature space
    than cross-subject ones.
    """
    if min(n_subjects, sessions_per_subject, keys_per_session) <= 0:
        raise ValueError("all counts must be positive")
    if keys_per_session < MIN_SESSION_EVENTS:
        raise ValueError(f"keys_per_session must be >= {MIN_SESSION_EVENTS}")
    rng = np.random.default_rng(seed)
    sessions: list[KeystrokeSession] = []
    for s in range(n_subjects):
        profile = SynthProfile(
            hold_mean=float(max(30.0, rng.normal(90.0, 25.0))),
            hold_std=float(rng.uniform(10.0, 20.0)),
            gap_mean=float(max(80.0, rng.normal(220.0, 60.0))),
            gap_std=float(rng.uniform(10.0, 20.0)),
            alphabet=tuple(int(c) for c in rng.choice(np.arange(32, 127), size=12, replace=False)),
        )
        for j in range(sessions_per_subject):
            events = []
            press = 0
            for i in range(keys_per_session):
                if i > 0:
                    press += max(1, round(rng.normal(profile.gap_mean, profile.gap_std)))
                hold = max(1, round(rng.normal(profile.hold_mean, profile.hold_std)))
                code = profile.alphabet[rng.integers(len(profile.alphabet))]
                events.append(KeyEvent(code, press, press + hold))
            sessions.append(
                KeystrokeSession(f"synth-{s:04d}", f"{j:04d}", tuple(events))
            )
    return sessions


def subjects_of(sessions: Iterable[KeystrokeSession]) -> list[str]:
    return sorted({s.subject_id for s in sessions})


def by_subject(sessions: Iterable[KeystrokeSession]) -> dict[str, list[KeystrokeSession]]:
    """Group sessions per subject, each group sorted by session_id."""
    groups: dict[str, list[KeystrokeSession]] = {}
    for s in sessions:
        groups.setdefault(s.subject_id, []).append(s)
    for group in groups.values():
        group.sort(key=lambda s: s.session_id)
    return groups


def split_subjects(
    sessions: Sequence[KeystrokeSession], n_train: int, seed: int
) -> DatasetSplit:
    """Disjoint train/eval subject split with exactly n_train training subjects."""
    subjects = subjects_of(sessions)
    if n_train <= 0 or n_train >= len(subjects):
        raise ValueError(f"n_train must be in 1..{len(subjects) - 1}, got {n_train}")
    rng = np.random.default_rng(seed)
    train = rng.choice(np.array(subjects, dtype=object), size=n_train, replace=False)
    train_set = frozenset(str(s) for s in train)
    return DatasetSplit(train_set, frozenset(subjects) - train_set)
