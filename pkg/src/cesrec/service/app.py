"""HTTP session service around the recommendation loop.

Each session owns a sequence refined round by round from human feedback:
mask history outliers, rewrite disliked items, re-rank. All model state is
read-only after startup; per-session mutation is serialized (concurrent
submits get 409).
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse

from ..alignment import detect_and_mask
from ..catalog import Catalog, InteractionSequence
from ..constructor import ConstructorBackend, RuleBasedBackend, construct_pseudo
from ..feedback import FeedbackError, Feedback, parse_feedback_text
from ..semantic import EmbeddingTable
from ..srs import SRSModel, rank_items
from .schemas import (
    CreateSessionRequest,
    FeedbackRequest,
    MaskedItem,
    RecommendationCard,
    ReplacementDiff,
    RoundResult,
    SequenceEntry,
    SessionCreated,
    TraceResponse,
    TraceRound,
)
from .store import SessionNotFound, SessionStore

log = logging.getLogger(__name__)

RANK_MAP_SIZE = 1000  # previous-round ranks kept per session for delta arrows


def _error(status: int, code: str, message: str, details: dict | None = None) -> HTTPException:
    return HTTPException(status, {"code": code, "message": message, "details": details or {}})


@dataclass
class ServiceRuntime:
    catalog: Catalog
    model: SRSModel
    hybrid_table: EmbeddingTable
    backend: ConstructorBackend
    store: SessionStore
    sequences: dict[str, InteractionSequence] = field(default_factory=dict)

    def item_card_pool(self, sequence: list[str], consumed: set[str]) -> list[str]:
        # Exclude the current sequence plus everything the user ever
        # interacted with (masked items stay consumed, never re-recommended).
        exclude = set(sequence) | consumed
        return [i for i in self.catalog.item_ids if i not in exclude]


def _cards(
    runtime: ServiceRuntime,
    sequence: list[str],
    top_k: int,
    prev_ranks: dict[str, int],
    consumed: set[str] = frozenset(),
) -> tuple[list[RecommendationCard], dict[str, int]]:
    ranking = rank_items(runtime.model, sequence, runtime.item_card_pool(sequence, set(consumed)))
    cards = []
    for rank, (item_id, score) in enumerate(ranking[:top_k], start=1):
        item = runtime.catalog.get(item_id)
        prev = prev_ranks.get(item_id)
        cards.append(
            RecommendationCard(
                rank=rank,
                item_id=item_id,
                title=item.title,
                attributes={k: list(v) for k, v in item.attributes.items()},
                score=score,
                rank_delta=(prev - rank) if prev is not None else None,
            )
        )
    new_ranks = {item_id: rank for rank, (item_id, _) in enumerate(ranking[:RANK_MAP_SIZE], start=1)}
    return cards, new_ranks


def _timeline(
    runtime: ServiceRuntime,
    input_sequence: list[str],
    masked_positions: list[int],
    working: list[str],
    pseudo_items: list[str],
) -> tuple[list[SequenceEntry], list[ReplacementDiff]]:
    masked = set(masked_positions)
    retained_positions = [i for i in range(len(input_sequence)) if i not in masked]
    entries: list[SequenceEntry] = []
    for i, item_id in enumerate(input_sequence):
        status = "masked" if i in masked else "kept"
        entries.append(
            SequenceEntry(item_id=item_id, title=runtime.catalog.get(item_id).title, status=status)
        )
    diffs: list[ReplacementDiff] = []
    for j, (old_id, new_id) in enumerate(zip(working, pseudo_items)):
        if old_id == new_id:
            continue
        timeline_pos = retained_positions[j]
        entries[timeline_pos] = SequenceEntry(
            item_id=new_id, title=runtime.catalog.get(new_id).title, status="replaced"
        )
        diffs.append(
            ReplacementDiff(
                position=timeline_pos,
                old_item_id=old_id,
                old_title=runtime.catalog.get(old_id).title,
                new_item_id=new_id,
                new_title=runtime.catalog.get(new_id).title,
            )
        )
    return entries, diffs


def _round_result(
    runtime: ServiceRuntime,
    round_no: int,
    cards: list[RecommendationCard],
    entries: list[SequenceEntry],
    masked_items: list[MaskedItem],
    diffs: list[ReplacementDiff],
    feedback_text: str | None,
    warnings: list[str],
) -> RoundResult:
    return RoundResult(
        round=round_no,
        recommendations=cards,
        sequence=entries,
        masked=masked_items,
        replacements=diffs,
        feedback_text=feedback_text,
        warnings=warnings,
    )


def _parse_feedback(runtime: ServiceRuntime, body: FeedbackRequest) -> Feedback:
    if body.dislike is None and body.prefer is None and not (body.text or "").strip():
        raise _error(400, "invalid_feedback", "feedback must carry text or structured fields")
    if body.dislike is not None or body.prefer is not None:
        disliked = (body.dislike.attribute, body.dislike.value) if body.dislike else None
        preferred = (body.prefer.attribute, body.prefer.value) if body.prefer else None
        polarity = "negative" if disliked else "positive"
        raw = body.text or _structured_text(disliked, preferred)
        return Feedback(polarity=polarity, disliked=disliked, preferred=preferred, raw_text=raw)
    try:
        return parse_feedback_text(body.text, runtime.catalog)
    except FeedbackError as err:
        if runtime.backend.kind == "remote-chat":
            # The chat model interprets raw text itself.
            return Feedback(polarity="negative", disliked=("", body.text), preferred=None, raw_text=body.text)
        raise _error(
            502,
            "backend_failure",
            f"rule-based backend could not parse feedback: {err}",
            {"text": body.text},
        ) from err


def _structured_text(disliked, preferred) -> str:
    parts = []
    if disliked:
        parts.append(f"I don't like {disliked[1]}")
    if preferred:
        parts.append(f"I prefer {preferred[1]}")
    return "; ".join(parts) + "."


def create_app(runtime: ServiceRuntime) -> FastAPI:
    app = FastAPI(title="cesrec session service", version="0.1.0")

    @app.exception_handler(HTTPException)
    async def _format_error(_request: Request, exc: HTTPException):
        if isinstance(exc.detail, dict) and "code" in exc.detail:
            body = exc.detail
        else:
            body = {"code": "error", "message": str(exc.detail), "details": {}}
        return JSONResponse(status_code=exc.status_code, content=body)

    @app.post("/sessions", response_model=SessionCreated, status_code=201)
    def create_session(request: CreateSessionRequest) -> SessionCreated:
        if request.history is not None:
            history = list(request.history)
        elif request.user_id is not None:
            seq = runtime.sequences.get(request.user_id)
            if seq is None:
                raise _error(404, "unknown_user", f"no loaded history for user {request.user_id!r}")
            history = seq.item_ids
        else:
            raise _error(400, "invalid_request", "provide history or user_id")
        unknown = [i for i in history if i not in runtime.catalog]
        if unknown:
            raise _error(400, "unknown_items", "history contains unknown items", {"items": unknown})
        if len(history) < 2:
            raise _error(400, "history_too_short", "history needs at least 2 items")

        session_id = runtime.store.new_id()
        cards, rank_map = _cards(runtime, history, request.config.top_k, {}, set(history))
        entries = [
            SequenceEntry(item_id=i, title=runtime.catalog.get(i).title, status="kept")
            for i in history
        ]
        round0 = _round_result(runtime, 0, cards, entries, [], [], None, [])
        session = {
            "session_id": session_id,
            "created_at": time.time(),
            "config": request.config.model_dump(),
            "sequence": history,
            "consumed": sorted(set(history)),
            "from_history": [True] * len(history),
            "round": 0,
            "trace": [
                TraceRound(
                    round=0,
                    input_sequence=history,
                    recommendations=cards,
                    timings={},
                ).model_dump()
            ],
            "prev_ranks": rank_map,
        }
        runtime.store.save(session)
        return SessionCreated(session_id=session_id, round0=round0)

    @app.get("/sessions/{session_id}/recommendations", response_model=RoundResult)
    def get_recommendations(session_id: str) -> RoundResult:
        session = _load(session_id)
        last = TraceRound(**session["trace"][-1])
        sequence_entries = [
            SequenceEntry(item_id=i, title=runtime.catalog.get(i).title, status="kept")
            for i in session["sequence"]
        ]
        return _round_result(
            runtime,
            last.round,
            last.recommendations,
            sequence_entries,
            last.masked,
            last.replacements,
            last.feedback_text,
            last.warnings,
        )

    @app.post("/sessions/{session_id}/feedback", response_model=RoundResult)
    def submit_feedback(session_id: str, body: FeedbackRequest) -> RoundResult:
        lock = runtime.store.lock(session_id)
        if not lock.acquire(blocking=False):
            raise _error(409, "busy", "another feedback round is in flight for this session")
        try:
            session = _load(session_id)
            feedback = _parse_feedback(runtime, body)
            return _run_round(session, feedback)
        finally:
            lock.release()

    def _run_round(session: dict, feedback: Feedback) -> RoundResult:
        config = session["config"]
        sequence: list[str] = list(session["sequence"])
        from_history: list[bool] = list(session["from_history"])
        round_no = session["round"] + 1
        timings: dict[str, float] = {}

        try:
            t0 = time.perf_counter()
            k_eff = min(config["mask_k"], len(sequence) - 1)
            maskable = [i for i, flag in enumerate(from_history) if flag]
            masking = detect_and_mask(
                sequence,
                runtime.hybrid_table,
                k_eff,
                config["similarity_fn"],
                maskable=maskable,
            )
            timings["mask"] = time.perf_counter() - t0
            working = list(masking.retained)
            from_history = [
                flag for i, flag in enumerate(from_history) if i not in set(masking.masked_positions)
            ]

            t0 = time.perf_counter()
            pseudo = construct_pseudo(
                working,
                feedback,
                runtime.backend,
                runtime.catalog,
                runtime.hybrid_table,
                round_no,
            )
            timings["construct"] = time.perf_counter() - t0
            for position, _old, _new in pseudo.replacements():
                from_history[position] = False

            t0 = time.perf_counter()
            consumed = set(session.get("consumed", [])) | set(sequence)
            cards, rank_map = _cards(
                runtime, list(pseudo.items), config["top_k"], session["prev_ranks"], consumed
            )
            timings["rank"] = time.perf_counter() - t0
        except Exception as err:  # noqa: BLE001 - failures belong in the trace
            failed = TraceRound(
                round=round_no,
                input_sequence=sequence,
                feedback_text=feedback.raw_text,
                failed=f"{type(err).__name__}: {err}",
                timings=timings,
            )
            session["trace"].append(failed.model_dump())
            session["round"] = round_no
            runtime.store.save(session)
            raise _error(502, "backend_failure", f"round failed: {err}") from err

        masked_items = [
            MaskedItem(
                item_id=item_id,
                title=runtime.catalog.get(item_id).title,
                position=pos,
                score=masking.scores[pos],
            )
            for item_id, pos in zip(masking.masked_item_ids, masking.masked_positions)
        ]
        entries, diffs = _timeline(
            runtime, sequence, list(masking.masked_positions), working, list(pseudo.items)
        )
        trace_round = TraceRound(
            round=round_no,
            input_sequence=sequence,
            feedback_text=feedback.raw_text,
            masked=masked_items,
            replacements=diffs,
            recommendations=cards,
            warnings=list(pseudo.warnings),
            timings=timings,
        )
        session["sequence"] = list(pseudo.items)
        session["consumed"] = sorted(consumed)
        session["from_history"] = from_history
        session["round"] = round_no
        session["trace"].append(trace_round.model_dump())
        session["prev_ranks"] = rank_map
        runtime.store.save(session)
        return _round_result(
            runtime,
            round_no,
            cards,
            entries,
            masked_items,
            diffs,
            feedback.raw_text,
            list(pseudo.warnings),
        )

    @app.get("/sessions/{session_id}/trace", response_model=TraceResponse)
    def get_trace(session_id: str) -> TraceResponse:
        session = _load(session_id)
        return TraceResponse(
            session_id=session_id,
            rounds=[TraceRound(**r) for r in session["trace"]],
        )

    @app.delete("/sessions/{session_id}", status_code=204)
    def delete_session(session_id: str) -> None:
        lock = runtime.store.lock(session_id)
        if not lock.acquire(blocking=False):
            raise _error(409, "busy", "a feedback round is in flight for this session")
        try:
            runtime.store.delete(session_id)
        except SessionNotFound:
            raise _error(404, "unknown_session", f"no session {session_id!r}") from None
        finally:
            lock.release()

    def _load(session_id: str) -> dict:
        try:
            return runtime.store.load(session_id)
        except SessionNotFound:
            raise _error(404, "unknown_session", f"no session {session_id!r}") from None

    return app


def load_runtime(
    checkpoint_dir: str | Path,
    catalog_path: str | Path,
    backend: str = "rule-based",
    store_dir: str | Path | None = None,
    sequences_path: str | Path | None = None,
    chat_endpoint: str | None = None,
    max_replacements: int = 1,
) -> ServiceRuntime:
    """Assemble a runtime from serialized artifacts on disk."""
    from ..alignment import AdapterParams, build_hybrid_table
    from ..catalog import load_sequences

    checkpoint_dir = Path(checkpoint_dir)
    catalog = Catalog.load(catalog_path)
    model = SRSModel.load(checkpoint_dir / "srs.npz")
    adapter = AdapterParams.load(checkpoint_dir / "adapter.npz")
    semantic = EmbeddingTable.load(checkpoint_dir / "semantic.jsonl")
    hybrid = build_hybrid_table(adapter, semantic)

    if backend == "rule-based":
        constructor: ConstructorBackend = RuleBasedBackend(max_replacements=max_replacements)
    elif backend == "remote":
        from ..chat import ChatClient
        from ..constructor import RemoteChatBackend

        if not chat_endpoint:
            raise ValueError("remote backend requires a chat endpoint")
        constructor = RemoteChatBackend(ChatClient(chat_endpoint))
    else:
        raise ValueError(f"unknown backend {backend!r}")

    store = SessionStore(store_dir or (checkpoint_dir / "sessions"))
    sequences = {}
    if sequences_path is not None:
        sequences = {seq.user_id: seq for seq in load_sequences(sequences_path)}
    return ServiceRuntime(
        catalog=catalog,
        model=model,
        hybrid_table=hybrid,
        backend=constructor,
        store=store,
        sequences=sequences,
    )
