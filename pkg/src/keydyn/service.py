"""Verification service: enrollment storage plus scoring over HTTP.

State is an append-only JSONL journal of enroll/delete operations; replaying
it rebuilds the store, so a restart preserves enrollments exactly (embeddings
are serialized as JSON floats, which round-trip bit-exactly). The journal is
compacted to a snapshot once it accumulates enough dead entries.
"""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, Field

from .dataset import KeyEvent, KeystrokeSession
from .encoder import KeystrokeEncoder, checkpoint_hash, embed_sequences, load_checkpoint
from .errors import KeydynError, ProtocolError
from .features import vectorize
from .scoring import MIN_ENROLLMENT, ScorerConfig, fit_scorer

MAX_ENROLLMENTS = 10
COMPACT_THRESHOLD = 1024  # journal ops before rewriting the snapshot
POLICIES = ("evict", "reject")

ENV_PORT = "KEYDYN_PORT"
ENV_CKPT = "KEYDYN_CKPT"
ENV_SCORER = "KEYDYN_SCORER"
ENV_THRESHOLD = "KEYDYN_THRESHOLD"
ENV_STORE = "KEYDYN_STORE"
ENV_POLICY = "KEYDYN_POLICY"


@dataclass
class ServiceSettings:
    checkpoint: str
    store_path: Optional[str] = None  # None: in-memory only
    scorer: ScorerConfig = field(default_factory=ScorerConfig)
    threshold: float = 0.0
    policy: str = "evict"
    host: str = "127.0.0.1"
    port: int = 8321

    def __post_init__(self) -> None:
        if self.policy not in POLICIES:
            raise ValueError(f"policy must be one of {POLICIES}")


def settings_from_env(**overrides) -> ServiceSettings:
    """Build settings from KEYDYN_* environment variables; kwargs win."""
    values = {
        "checkpoint": os.environ.get(ENV_CKPT, ""),
        "store_path": os.environ.get(ENV_STORE),
        "threshold": float(os.environ.get(ENV_THRESHOLD, "0.0")),
        "policy": os.environ.get(ENV_POLICY, "evict"),
        "port": int(os.environ.get(ENV_PORT, "8321")),
    }
    if os.environ.get(ENV_SCORER):
        values["scorer"] = ScorerConfig(kind=os.environ[ENV_SCORER])
    values.update({k: v for k, v in overrides.items() if v is not None})
    if not values["checkpoint"]:
        raise ValueError(f"no checkpoint given (flag or {ENV_CKPT})")
    return ServiceSettings(**values)


class SubjectStore:
    """Per-subject embedding lists, capped, journaled to disk when configured."""

    def __init__(self, path: Optional[str | Path], max_enrollments: int = MAX_ENROLLMENTS, policy: str = "evict"):
        self.path = Path(path) if path else None
        self.max_enrollments = max_enrollments
        self.policy = policy
        self._lock = threading.RLock()
        self._subjects: dict[str, list[list[float]]] = {}
        self._ops = 0
        if self.path and self.path.exists():
            self._replay()

    def _replay(self) -> None:
        with self.path.open(encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                op = json.loads(line)
                self._ops += 1
                if op["op"] == "enroll":
                    self._apply_enroll(op["subject"], op["embedding"])
                elif op["op"] == "delete":
                    self._subjects.pop(op["subject"], None)

    def _apply_enroll(self, subject: str, embedding: list[float]) -> None:
        rows = self._subjects.setdefault(subject, [])
        if len(rows) >= self.max_enrollments:
            del rows[0]  # replay only sees evict-mode growth; reject never journals
        rows.append(embedding)

    def _journal(self, op: dict) -> None:
        if self.path is None:
            return
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with self.path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(op) + "\n")
        self._ops += 1
        live = sum(len(v) for v in self._subjects.values())
        if self._ops > COMPACT_THRESHOLD and self._ops > 2 * live:
            self.compact()

    def compact(self) -> None:
        if self.path is None:
            return
        with self._lock:
            tmp = self.path.with_suffix(".tmp")
            with tmp.open("w", encoding="utf-8") as fh:
                for subject, rows in sorted(self._subjects.items()):
                    for row in rows:
                        fh.write(json.dumps({"op": "enroll", "subject": subject, "embedding": row}) + "\n")
            tmp.replace(self.path)
            self._ops = sum(len(v) for v in self._subjects.values())

    def enroll(self, subject: str, embedding: np.ndarray) -> int:
        """Returns the new enrollment count; raises ProtocolError when full in reject mode."""
        row = [float(x) for x in np.asarray(embedding).ravel()]
        with self._lock:
            rows = self._subjects.setdefault(subject, [])
            if len(rows) >= self.max_enrollments and self.policy == "reject":
                raise ProtocolError(
                    f"subject {subject} already has {self.max_enrollments} enrollments"
                )
            self._apply_enroll(subject, row)
            self._journal({"op": "enroll", "subject": subject, "embedding": row})
            return len(rows)

    def delete(self, subject: str) -> bool:
        with self._lock:
            if subject not in self._subjects:
                return False
            del self._subjects[subject]
            self._journal({"op": "delete", "subject": subject})
            return True

    def embeddings(self, subject: str) -> Optional[np.ndarray]:
        with self._lock:
            rows = self._subjects.get(subject)
            return np.array(rows, dtype=np.float64) if rows else None

    def counts(self) -> dict[str, int]:
        with self._lock:
            return {s: len(rows) for s, rows in sorted(self._subjects.items())}


class EventIn(BaseModel):
    keycode: int
    press_ms: int
    release_ms: int


class SessionIn(BaseModel):
    events: list[EventIn] = Field(min_length=1)


def _session_from_request(subject: str, body: SessionIn) -> KeystrokeSession:
    try:
        events = [KeyEvent(e.keycode, e.press_ms, e.release_ms) for e in body.events]
        return KeystrokeSession(subject_id=subject, session_id="request", events=tuple(events))
    except (ValueError, KeydynError) as exc:
        raise HTTPException(status_code=422, detail=str(exc)) from exc


def create_app(settings: ServiceSettings) -> FastAPI:
    model = load_checkpoint(settings.checkpoint)
    if model.norm_stats is None:
        raise ValueError("checkpoint has no normalization stats; cannot vectorize raw events")
    if model.config.mode != "bi":
        raise ValueError("the service embeds sessions independently and needs a bi-encoder")
    model_hash = checkpoint_hash(settings.checkpoint)
    store = SubjectStore(settings.store_path, policy=settings.policy)
    infer_lock = threading.Lock()
    app = FastAPI(title="keydyn verification service")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    app.state.store = store
    app.state.model = model

    def embed(session: KeystrokeSession) -> np.ndarray:
        try:
            seq = vectorize(session, model.norm_stats, model.config.max_len)
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        with infer_lock:
            return embed_sequences(model, [seq])[0]

    @app.get("/health")
    def health():
        return {
            "status": "ok",
            "model_sha256": model_hash,
            "scorer": settings.scorer.kind,
            "threshold": settings.threshold,
            "max_len": model.config.max_len,
            "subjects": len(store.counts()),
        }

    @app.get("/subjects")
    def list_subjects():
        return [{"subject_id": s, "enrollments": n} for s, n in store.counts().items()]

    @app.get("/subjects/{subject_id}")
    def get_subject(subject_id: str):
        rows = store.embeddings(subject_id)
        if rows is None:
            raise HTTPException(status_code=404, detail=f"unknown subject {subject_id}")
        return {
            "subject_id": subject_id,
            "enrollments": int(rows.shape[0]),
            "can_verify": rows.shape[0] >= MIN_ENROLLMENT[settings.scorer.kind],
        }

    @app.delete("/subjects/{subject_id}")
    def delete_subject(subject_id: str):
        if not store.delete(subject_id):
            raise HTTPException(status_code=404, detail=f"unknown subject {subject_id}")
        return {"subject_id": subject_id, "deleted": True}

    @app.post("/subjects/{subject_id}/enroll")
    def enroll(subject_id: str, body: SessionIn):
        session = _session_from_request(subject_id, body)
        embedding = embed(session)
        try:
            count = store.enroll(subject_id, embedding)
        except ProtocolError as exc:
            raise HTTPException(status_code=409, detail=str(exc)) from exc
        return {"subject_id": subject_id, "enrollments": count}

    @app.post("/subjects/{subject_id}/verify")
    def verify(subject_id: str, body: SessionIn):
        session = _session_from_request(subject_id, body)
        rows = store.embeddings(subject_id)
        if rows is None:
            raise HTTPException(status_code=404, detail=f"unknown subject {subject_id}")
        try:
            scorer = fit_scorer(rows, settings.scorer)
        except ProtocolError as exc:
            raise HTTPException(status_code=409, detail=str(exc)) from exc
        score = float(scorer.score(embed(session)))
        return {
            "subject_id": subject_id,
            "score": score,
            "threshold": settings.threshold,
            "accept": bool(score >= settings.threshold),
            "scorer": settings.scorer.kind,
            "enrollments": int(rows.shape[0]),
        }

    return app


def serve(settings: ServiceSettings) -> None:
    import uvicorn

    uvicorn.run(create_app(settings), host=settings.host, port=settings.port, log_level="info")
