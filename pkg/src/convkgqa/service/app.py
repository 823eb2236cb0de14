"""Session-oriented QA service.

Each session owns one live conversation: encoder history, previous answer and
the append-only turn log. Requests for the same session serialise on a
per-session lock; the model bundle itself is shared read-only, so answers for
identical turn sequences are identical to offline evaluation.
"""

from __future__ import annotations

import threading
import time
import uuid
from dataclasses import dataclass, field

from fastapi import FastAPI, HTTPException

from ..bundle import ModelBundle
from ..data import tokenize
from ..evaluate import ConversationRunner, RunnerSession
from ..kg import nearest_entity_keys
from .schemas import (
    AskRequest,
    AskResponse,
    Candidate,
    CreateSessionRequest,
    CreateSessionResponse,
    SessionView,
    TraceStep,
    TurnLogEntry,
)

DEFAULT_SESSION_TTL_S = 3600.0


@dataclass
class Session:
    session_id: str
    topic_entity: int
    runner_session: RunnerSession
    created_at: float
    turns: list[TurnLogEntry] = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock)
    last_used: float = 0.0


class SessionStore:
    def __init__(self, ttl_s: float = DEFAULT_SESSION_TTL_S):
        self.ttl_s = ttl_s
        self._sessions: dict[str, Session] = {}
        self._lock = threading.Lock()

    def create(self, topic_entity: int, runner_session: RunnerSession) -> Session:
        session = Session(
            session_id=uuid.uuid4().hex,
            topic_entity=topic_entity,
            runner_session=runner_session,
            created_at=time.time(),
        )
        session.last_used = session.created_at
        with self._lock:
            self._purge()
            self._sessions[session.session_id] = session
        return session

    def get(self, session_id: str) -> Session:
        with self._lock:
            self._purge()
            session = self._sessions.get(session_id)
        if session is None:
            raise HTTPException(status_code=404, detail={
                "code": "unknown_session",
                "message": f"no session '{session_id}'",
                "suggestions": [],
            })
        session.last_used = time.time()
        return session

    def delete(self, session_id: str) -> bool:
        with self._lock:
            return self._sessions.pop(session_id, None) is not None

    def _purge(self) -> None:
        if self.ttl_s <= 0:
            return
        cutoff = time.time() - self.ttl_s
        stale = [sid for sid, s in self._sessions.items() if s.last_used < cutoff]
        for sid in stale:
            del self._sessions[sid]


def create_app(bundle: ModelBundle, *, ref_mode: str = "template",
               session_ttl_s: float = DEFAULT_SESSION_TTL_S,
               beam_width: int | None = None) -> FastAPI:
    app = FastAPI(title="convkgqa session service", version="0.1.0")
    runner = ConversationRunner(bundle, encoder_role="student",
                                ref_mode=ref_mode, beam_width=beam_width)
    store = SessionStore(ttl_s=session_ttl_s)
    graph = bundle.graph

    def resolve_entity(key: str) -> int:
        if not graph.has_entity(key):
            raise HTTPException(status_code=404, detail={
                "code": "unknown_entity",
                "message": f"entity '{key}' is not in the graph",
                "suggestions": nearest_entity_keys(graph, key),
            })
        return graph.entity_id(key)

    @app.post("/sessions", response_model=CreateSessionResponse)
    def create_session(request: CreateSessionRequest) -> CreateSessionResponse:
        topic = resolve_entity(request.topic_entity_key)
        session = store.create(topic, runner.start(topic))
        return CreateSessionResponse(session_id=session.session_id,
                                     topic_entity=graph.entity_keys[topic])

    @app.post("/sessions/{session_id}/ask", response_model=AskResponse)
    def ask(session_id: str, request: AskRequest) -> AskResponse:
        session = store.get(session_id)
        with session.lock:
            question = tokenize(request.question, bundle.vocab,
                                bundle.config.encoder.max_len)
            result = runner.ask(session.runner_session, question,
                                reformulations=request.reformulations)
            top = [
                Candidate(entity=graph.entity_keys[r.entity_id],
                          entity_id=r.entity_id, score=r.score, source=r.source)
                for r in result.ranked[:request.top_k]
            ]
            trace = [
                TraceStep(hop=i + 1, relation=graph.relation_labels[rel],
                          entity=graph.entity_keys[ent])
                for i, (rel, ent) in enumerate(result.ranked[0].trace)
            ]
            response = AskResponse(
                answer=graph.entity_keys[result.predicted],
                answer_id=result.predicted,
                topic_used=graph.entity_keys[result.topic_used],
                top_k=top,
                trace=trace,
                turn_index=result.turn_index,
            )
            session.turns.append(TurnLogEntry(
                turn_index=result.turn_index,
                question=request.question,
                answer=response.answer,
                topic_used=response.topic_used,
                top_k=top,
                trace=trace,
            ))
        return response

    @app.get("/sessions/{session_id}", response_model=SessionView)
    def inspect(session_id: str) -> SessionView:
        session = store.get(session_id)
        return SessionView(
            session_id=session.session_id,
            topic_entity=graph.entity_keys[session.topic_entity],
            created_at=session.created_at,
            turns=list(session.turns),
        )

    @app.delete("/sessions/{session_id}")
    def delete(session_id: str) -> dict:
        if not store.delete(session_id):
            raise HTTPException(status_code=404, detail={
                "code": "unknown_session",
                "message": f"no session '{session_id}'",
                "suggestions": [],
            })
        return {"deleted": True}

    @app.get("/health")
    def health() -> dict:
        return {
            "status": "ok",
            "entities": graph.n_entities,
            "config_hash": bundle.config.config_hash(),
        }

    return app
