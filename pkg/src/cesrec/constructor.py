"""Pseudo-interaction sequence construction from user feedback.

Two backends rewrite a masked sequence: a remote chat model prompted with the
instruction template, and a deterministic rule-based stand-in that swaps the
disliked items least similar to the user vector for the best-matching
preferred items. Also generates the instruction-tuning dataset used to
fine-tune a constructor model externally.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .alignment import fuse_user, similarity
from .catalog import Catalog, SplitTriple, normalize_title
from .chat import ChatClient, ChatError
from .feedback import Feedback, priority_order, render_negative
from .semantic import EmbeddingTable, EmbeddingProvider

log = logging.getLogger(__name__)

TITLE_DELIMITER = " | "
TITLE_MATCH_THRESHOLD = 0.85
OUTPUT_PREFIX = "pseudo-interaction sequence:"

CONSTRUCTOR_INSTRUCTION = (
    "Based on the preferences mentioned in the user feedback and the "
    "information about <items> contained in the historical interaction "
    "sequence, replace the <items> the user dislikes with <items> user may "
    "currently prefer."
)


class ConstructorError(ValueError):
    pass


class TitleParseError(ConstructorError):
    """A reply fragment could not be resolved to any catalog title."""

    def __init__(self, fragments: list[str]):
        super().__init__(f"unresolvable title fragments: {fragments}")
        self.fragments = fragments


@dataclass(frozen=True)
class PseudoSequence:
    """Rewritten sequence with per-position provenance."""

    items: tuple[str, ...]
    provenance: tuple[tuple[str, ...], ...]  # ("kept",) or ("replaced", old_item_id)
    round: int = 1
    warnings: tuple[str, ...] = ()
    raw_exchange: tuple[str, str] | None = None  # (request, response) for remote backends

    def __post_init__(self):
        if len(self.items) != len(self.provenance):
            raise ConstructorError("provenance must cover every position")

    def replacements(self) -> list[tuple[int, str, str]]:
        """(position, old_item_id, new_item_id) for every replaced slot."""
        return [
            (i, tag[1], item)
            for i, (item, tag) in enumerate(zip(self.items, self.provenance))
            if tag[0] == "replaced"
        ]


def _provenance(old: Sequence[str], new: Sequence[str]) -> tuple[tuple[str, ...], ...]:
    return tuple(
        ("kept",) if o == n else ("replaced", o) for o, n in zip(old, new)
    )


class TitleMatcher:
    """Resolve free-text titles to catalog ids.

    Exact match on normalized titles first, then nearest neighbor in an
    embedding space: the supplied semantic provider's, or (by default)
    character-bigram count vectors, which tolerate small typos.
    """

    def __init__(self, catalog: Catalog, provider: EmbeddingProvider | None = None):
        self.catalog = catalog
        self.exact = catalog.title_index()
        self.provider = provider
        if provider is None:
            self._bigrams = {
                item.item_id: _bigram_counts(item.title) for item in catalog
            }
            self._title_table = None
        else:
            titles = [item.title for item in catalog]
            vecs = provider.embed_texts(titles)
            self._title_table = {
                item.item_id: vecs[i] / (np.linalg.norm(vecs[i]) or 1.0)
                for i, item in enumerate(catalog)
            }
            self._bigrams = None

    def match(self, fragment: str, threshold: float = TITLE_MATCH_THRESHOLD) -> str | None:
        exact = self.exact.get(normalize_title(fragment))
        if exact is not None:
            return exact
        best_id, best_score = None, -1.0
        if self._title_table is not None:
            query = self.provider.embed_texts([fragment])[0]
            query = query / (np.linalg.norm(query) or 1.0)
            for item_id, vec in self._title_table.items():
                score = float(query @ vec)
                if score > best_score or (score == best_score and item_id < (best_id or "")):
                    best_id, best_score = item_id, score
        else:
            query = _bigram_counts(fragment)
            for item_id, counts in self._bigrams.items():
                score = _counter_cosine(query, counts)
                if score > best_score or (score == best_score and item_id < (best_id or "")):
                    best_id, best_score = item_id, score
        return best_id if best_score >= threshold else None


def _bigram_counts(title: str) -> Counter:
    text = f" {normalize_title(title)} "
    return Counter(text[i : i + 2] for i in range(len(text) - 1))


def _counter_cosine(a: Counter, b: Counter) -> float:
    dot = sum(count * b[gram] for gram, count in a.items())
    norm_a = sum(c * c for c in a.values()) ** 0.5
    norm_b = sum(c * c for c in b.values()) ** 0.5
    if norm_a == 0.0 or norm_b == 0.0:
        return 0.0
    return dot / (norm_a * norm_b)


def parse_llm_sequence(
    reply_text: str, catalog: Catalog, matcher: TitleMatcher | None = None
) -> list[str]:
    """Resolve a delimiter-separated title list back into item ids."""
    if matcher is None:
        matcher = TitleMatcher(catalog)
    payload = reply_text.strip()
    lowered = payload.lower()
    if OUTPUT_PREFIX in lowered:
        payload = payload[lowered.index(OUTPUT_PREFIX) + len(OUTPUT_PREFIX) :].strip()
    payload = payload.strip("[]")
    fragments = [f.strip().strip('"').strip("'") for f in payload.split("|")]
    fragments = [f for f in fragments if f]
    ids, unmatched = [], []
    for fragment in fragments:
        match = matcher.match(fragment)
        if match is None:
            unmatched.append(fragment)
        else:
            ids.append(match)
    if unmatched:
        raise TitleParseError(unmatched)
    return ids


def render_titles(item_ids: Sequence[str], catalog: Catalog) -> str:
    return TITLE_DELIMITER.join(catalog.get(i).title for i in item_ids)


def render_constructor_input(sequence_titles: str, feedback_text: str) -> str:
    return f"historical interaction sequence: {sequence_titles}; user feedback: {feedback_text}."


class ConstructorBackend:
    kind = "base"

    def construct(
        self,
        masked_sequence: Sequence[str],
        feedback: Feedback,
        catalog: Catalog,
        hybrid_table: EmbeddingTable,
        round_no: int = 1,
    ) -> PseudoSequence:
        raise NotImplementedError


class RuleBasedBackend(ConstructorBackend):
    kind = "rule-based"

    def __init__(self, max_replacements: int = 1, similarity_fn: str = "cosine"):
        self.max_replacements = max_replacements
        self.similarity_fn = similarity_fn

    def construct(self, masked_sequence, feedback, catalog, hybrid_table, round_no=1):
        items = rule_based_construct(
            masked_sequence,
            feedback,
            catalog,
            hybrid_table,
            self.max_replacements,
            self.similarity_fn,
        )
        warnings = ()
        if list(items) == list(masked_sequence):
            warnings = ("no applicable replacement found; sequence unchanged",)
        return PseudoSequence(
            items=tuple(items),
            provenance=_provenance(masked_sequence, items),
            round=round_no,
            warnings=warnings,
        )


class RemoteChatBackend(ConstructorBackend):
    """Prompts a chat model with the instruction template; falls back to rules."""

    kind = "remote-chat"

    def __init__(
        self,
        chat: ChatClient,
        fallback: RuleBasedBackend | None = None,
        matcher: TitleMatcher | None = None,
    ):
        self.chat = chat
        self.fallback = fallback or RuleBasedBackend()
        self.matcher = matcher

    def construct(self, masked_sequence, feedback, catalog, hybrid_table, round_no=1):
        request = render_constructor_input(render_titles(masked_sequence, catalog), feedback.raw_text)
        messages = [
            {"role": "system", "content": CONSTRUCTOR_INSTRUCTION},
            {"role": "user", "content": request},
        ]
        try:
            reply = self.chat.complete(messages)
            ids = parse_llm_sequence(reply, catalog, self.matcher)
            if len(ids) != len(masked_sequence):
                raise ConstructorError(
                    f"reply length {len(ids)} != input length {len(masked_sequence)}"
                )
            return PseudoSequence(
                items=tuple(ids),
                provenance=_provenance(masked_sequence, ids),
                round=round_no,
                raw_exchange=(json.dumps(messages), reply),
            )
        except (ChatError, ConstructorError) as err:
            log.warning("remote constructor failed (%s); using rule-based fallback", err)
            result = self.fallback.construct(masked_sequence, feedback, catalog, hybrid_table, round_no)
            return PseudoSequence(
                items=result.items,
                provenance=result.provenance,
                round=round_no,
                warnings=result.warnings + (f"remote constructor fell back: {err}",),
                raw_exchange=(json.dumps(messages), ""),
            )


def rule_based_construct(
    masked_sequence: Sequence[str],
    feedback: Feedback,
    catalog: Catalog,
    hybrid_table: EmbeddingTable,
    max_replacements: int = 1,
    similarity_fn: str = "cosine",
) -> list[str]:
    """Deterministic rewrite: swap disliked items for preferred catalog items.

    Replacement targets are the sequence items carrying the disliked value
    (or, for purely positive feedback, lacking the preferred value), lowest
    user-similarity first. Each is replaced by the unused catalog item
    carrying the preferred value (or free of the disliked one) whose hybrid
    vector is closest to the user vector. Ties break by ascending item_id.
    """
    if not masked_sequence:
        raise ConstructorError("masked sequence is empty")
    disliked, preferred = feedback.disliked, feedback.preferred
    if (disliked and not disliked[0]) or (preferred and not preferred[0]):
        raise ConstructorError("raw feedback requires remote backend")
    if disliked is None and preferred is None:
        raise ConstructorError("raw feedback requires remote backend")
    if max_replacements == 0:
        return list(masked_sequence)

    items = list(masked_sequence)
    vectors = hybrid_table.vectors(items)
    user = fuse_user(vectors)
    sims = [similarity(vectors[i], user, similarity_fn) for i in range(len(items))]

    def carries(item_id: str, pair: tuple[str, str]) -> bool:
        return catalog.get(item_id).has_value(pair[0], pair[1])

    if disliked is not None:
        target_positions = [i for i, item in enumerate(items) if carries(item, disliked)]
    else:
        target_positions = [i for i, item in enumerate(items) if not carries(item, preferred)]
    target_positions.sort(key=lambda i: (sims[i], items[i], i))
    target_positions = target_positions[:max_replacements]
    if not target_positions:
        log.warning("no sequence item matches the feedback; sequence unchanged")
        return items

    in_sequence = set(items)
    pool = []
    for item_id in catalog.item_ids:
        if item_id in in_sequence or item_id not in hybrid_table:
            continue
        if preferred is not None and not carries(item_id, preferred):
            continue
        if disliked is not None and carries(item_id, disliked):
            continue
        pool.append(item_id)
    pool.sort(key=lambda i: (-similarity(hybrid_table.vector(i), user, similarity_fn), i))
    if not pool:
        log.warning("no catalog item satisfies the feedback; sequence unchanged")
        return items

    for position, replacement in zip(target_positions, pool):
        items[position] = replacement
    return items


def construct_pseudo(
    masked_sequence: Sequence[str],
    feedback: Feedback,
    backend: ConstructorBackend,
    catalog: Catalog,
    hybrid_table: EmbeddingTable,
    round_no: int = 1,
) -> PseudoSequence:
    """Rewrite the masked sequence via the backend, validating the result.

    Any backend failure degrades to returning the input unchanged with a
    warning tag rather than raising.
    """
    if not masked_sequence:
        raise ConstructorError("masked sequence is empty")
    try:
        result = backend.construct(masked_sequence, feedback, catalog, hybrid_table, round_no)
        unknown = [i for i in result.items if i not in catalog]
        if unknown:
            raise ConstructorError(f"backend produced unknown items: {unknown}")
        if len(result.items) != len(masked_sequence):
            raise ConstructorError("backend changed the sequence length")
        return result
    except ConstructorError as err:
        log.warning("constructor failed (%s); returning sequence unchanged", err)
        return PseudoSequence(
            items=tuple(masked_sequence),
            provenance=tuple(("kept",) for _ in masked_sequence),
            round=round_no,
            warnings=(f"constructor failed: {err}",),
        )


@dataclass(frozen=True)
class TuningRecord:
    instruction: str
    input: str
    output: str


def generate_tuning_data(
    split_triples: Sequence[SplitTriple],
    catalog: Catalog,
    per_user: int = 1,
    seed: int = 0,
    max_items: int = 20,
    max_candidate_tries: int = 50,
) -> list[TuningRecord]:
    """Corrupt-and-restore training records for fine-tuning a constructor.

    Each record plants a random off-preference item into the user's sequence;
    the model's target output is the original sequence, and the feedback text
    voices the (planted value -> original value) transition. Deterministic
    given the seed. Users whose sampled window has no attribute-bearing item
    are skipped (count logged).
    """
    rng = np.random.default_rng(seed)
    ordered_attrs = priority_order(catalog.attribute_schema)
    all_ids = catalog.item_ids
    records: list[TuningRecord] = []
    skipped = 0

    for triple in split_triples:
        window = triple.train.item_ids[-max_items:]
        attributed = [
            i for i, item_id in enumerate(window) if catalog.get(item_id).attributes
        ]
        if not attributed:
            skipped += 1
            continue
        for _ in range(per_user):
            position = int(rng.choice(attributed))
            original = catalog.get(window[position])
            planted = None
            transition = None
            for _try in range(max_candidate_tries):
                candidate = catalog.get(all_ids[int(rng.integers(0, len(all_ids)))])
                if candidate.item_id in window:
                    continue
                transition = _first_disjoint_attribute(candidate, original, ordered_attrs)
                if transition is not None:
                    planted = candidate
                    break
            if planted is None:
                skipped += 1
                continue
            attr, planted_value, original_value = transition
            corrupted = list(window)
            corrupted[position] = planted.item_id
            feedback_text = render_negative(attr, planted_value, original_value)
            records.append(
                TuningRecord(
                    instruction=CONSTRUCTOR_INSTRUCTION,
                    input=render_constructor_input(render_titles(corrupted, catalog), feedback_text),
                    output=f"{OUTPUT_PREFIX} {render_titles(window, catalog)}",
                )
            )
    if skipped:
        log.info("tuning data: skipped %d user draws without usable attributes", skipped)
    return records


def _first_disjoint_attribute(
    planted, original, ordered_attrs: Sequence[str]
) -> tuple[str, str, str] | None:
    for attr in ordered_attrs:
        planted_values = planted.values(attr)
        original_values = original.values(attr)
        if planted_values and original_values and not set(planted_values) & set(original_values):
            return attr, planted_values[0], original_values[0]
    return None


def save_tuning_records(records: Sequence[TuningRecord], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(
                json.dumps(
                    {"instruction": rec.instruction, "input": rec.input, "output": rec.output},
                    sort_keys=True,
                )
                + "\n"
            )
