"""Request/response models for the session service."""

from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, Field


class SessionConfigOverrides(BaseModel):
    mask_k: int = Field(default=1, ge=0)
    similarity_fn: str = "cosine"
    top_k: int = Field(default=10, ge=1, le=100)
    max_replacements: int = Field(default=1, ge=0)


class CreateSessionRequest(BaseModel):
    history: Optional[list[str]] = None
    user_id: Optional[str] = None
    config: SessionConfigOverrides = SessionConfigOverrides()


class RecommendationCard(BaseModel):
    rank: int
    item_id: str
    title: str
    attributes: dict[str, list[str]]
    score: float
    rank_delta: Optional[int] = None  # previous rank minus current; None on round 0


class MaskedItem(BaseModel):
    item_id: str
    title: str
    position: int
    score: float


class ReplacementDiff(BaseModel):
    position: int
    old_item_id: str
    old_title: str
    new_item_id: str
    new_title: str


class SequenceEntry(BaseModel):
    item_id: str
    title: str
    status: str  # kept | masked | replaced


class RoundResult(BaseModel):
    round: int
    recommendations: list[RecommendationCard]
    sequence: list[SequenceEntry]
    masked: list[MaskedItem]
    replacements: list[ReplacementDiff]
    feedback_text: Optional[str] = None
    warnings: list[str] = []


class SessionCreated(BaseModel):
    session_id: str
    round0: RoundResult


class StructuredFeedback(BaseModel):
    attribute: str
    value: str


class FeedbackRequest(BaseModel):
    text: Optional[str] = None
    dislike: Optional[StructuredFeedback] = None
    prefer: Optional[StructuredFeedback] = None


class TraceRound(BaseModel):
    round: int
    input_sequence: list[str]
    feedback_text: Optional[str] = None
    masked: list[MaskedItem] = []
    replacements: list[ReplacementDiff] = []
    recommendations: list[RecommendationCard] = []
    warnings: list[str] = []
    failed: Optional[str] = None
    timings: dict[str, float] = {}


class TraceResponse(BaseModel):
    session_id: str
    rounds: list[TraceRound]


class ErrorBody(BaseModel):
    code: str
    message: str
    details: dict = {}
