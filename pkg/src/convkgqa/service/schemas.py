"""Request/response models for the session service."""

from __future__ import annotations

from pydantic import BaseModel, Field


class CreateSessionRequest(BaseModel):
    topic_entity_key: str = Field(min_length=1)


class CreateSessionResponse(BaseModel):
    session_id: str
    topic_entity: str


class AskRequest(BaseModel):
    question: str = Field(min_length=1)
    reformulations: list[str] | None = None
    top_k: int = Field(default=10, ge=1, le=100_000)


class Candidate(BaseModel):
    entity: str
    entity_id: int
    score: float
    source: str  # "beam" | "fallback"


class TraceStep(BaseModel):
    hop: int
    relation: str
    entity: str


class AskResponse(BaseModel):
    answer: str
    answer_id: int
    topic_used: str
    top_k: list[Candidate]
    trace: list[TraceStep]
    turn_index: int


class TurnLogEntry(BaseModel):
    turn_index: int
    question: str
    answer: str
    topic_used: str
    top_k: list[Candidate]
    trace: list[TraceStep]


class SessionView(BaseModel):
    session_id: str
    topic_entity: str
    created_at: float
    turns: list[TurnLogEntry]


class ErrorPayload(BaseModel):
    code: str
    message: str
    suggestions: list[str] = []
