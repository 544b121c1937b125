"""User feedback: simulation, rendering, and parsing back into structure.

The deterministic simulator compares the recommended item's attributes with
the target item's attributes in priority order and voices the first
disagreement; the remote mode defers to a chat endpoint but never reveals the
target item itself, only its attributes.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from typing import Mapping, Sequence

from .catalog import ATTRIBUTE_PRIORITY, Catalog, Item
from .chat import ChatClient, ChatError
from .srs import RankedResult

log = logging.getLogger(__name__)

# How an attribute value reads inside a feedback sentence.
_ATTR_PHRASES = {"director": "film directed by"}

SIMULATOR_PROMPT = (
    "You are a user interacting with a recommender system. Based on the "
    "information about your <target item> and the <recommended item> "
    "provided by the recommender, give feedback to the recommender."
)


class FeedbackError(ValueError):
    pass


@dataclass(frozen=True)
class Feedback:
    """Parsed preference signal: polarity plus optional attribute pairs."""

    polarity: str  # "negative" | "positive"
    disliked: tuple[str, str] | None  # (attribute, value)
    preferred: tuple[str, str] | None
    raw_text: str

    def __post_init__(self):
        if self.polarity not in ("negative", "positive"):
            raise FeedbackError(f"unknown polarity {self.polarity!r}")
        if self.polarity == "negative" and self.disliked is None:
            raise FeedbackError("negative feedback requires a disliked attribute")
        if self.polarity == "positive" and self.preferred is None:
            raise FeedbackError("positive feedback requires a preferred attribute")
        if not self.raw_text:
            raise FeedbackError("raw_text must be non-empty")


def attribute_phrase(attribute: str, value: str) -> str:
    prefix = _ATTR_PHRASES.get(attribute)
    return f"{prefix} {value}" if prefix else value


def render_negative(attribute: str, disliked_value: str, preferred_value: str) -> str:
    return (
        f"I don't like {attribute_phrase(attribute, disliked_value)}; "
        f"I prefer {preferred_value}."
    )


def render_positive(attribute: str, value: str) -> str:
    return f"I like {attribute_phrase(attribute, value)}."


def priority_order(schema: Sequence[str]) -> list[str]:
    """genre, director, category first; then remaining schema order."""
    ordered = [a for a in ATTRIBUTE_PRIORITY if a in schema]
    ordered += [a for a in schema if a not in ordered]
    return ordered


def simulate_feedback(
    recommended_item: Item,
    target_attrs: Mapping[str, Sequence[str]],
    mode: str = "deterministic",
    schema: Sequence[str] = ATTRIBUTE_PRIORITY,
    chat: ChatClient | None = None,
) -> Feedback:
    """Voice the first attribute disagreement between recommendation and target."""
    if not target_attrs:
        raise FeedbackError("target_attrs must be non-empty")
    if mode not in ("deterministic", "remote"):
        raise FeedbackError(f"unknown simulator mode {mode!r}")
    if mode == "remote":
        try:
            return _remote_feedback(recommended_item, target_attrs, schema, chat)
        except (ChatError, FeedbackError) as err:
            log.warning("remote simulator failed (%s); falling back to deterministic", err)

    for attr in priority_order(schema):
        rec_values = recommended_item.values(attr)
        tgt_values = tuple(target_attrs.get(attr, ()))
        if rec_values and tgt_values and not set(rec_values) & set(tgt_values):
            disliked = (attr, rec_values[0])
            preferred = (attr, sorted(tgt_values)[0])
            return Feedback(
                polarity="negative",
                disliked=disliked,
                preferred=preferred,
                raw_text=render_negative(attr, disliked[1], preferred[1]),
            )
    # Nothing differs: accept.
    for attr in priority_order(schema):
        tgt_values = tuple(target_attrs.get(attr, ()))
        if tgt_values:
            preferred = (attr, sorted(tgt_values)[0])
            return Feedback(
                polarity="positive",
                disliked=None,
                preferred=preferred,
                raw_text=render_positive(attr, preferred[1]),
            )
    raise FeedbackError("target has no attribute values to speak about")


def render_simulator_prompt(
    recommended_item: Item, target_attrs: Mapping[str, Sequence[str]], schema: Sequence[str]
) -> str:
    """The remote prompt: target is described by attributes only, never named."""
    target_desc = "; ".join(
        f"{attr}: {', '.join(sorted(target_attrs[attr]))}"
        for attr in priority_order(schema)
        if target_attrs.get(attr)
    )
    rec_desc = recommended_item.content(list(schema))
    prompt = SIMULATOR_PROMPT.replace("<target item>", f"target item ({target_desc})")
    prompt = prompt.replace("<recommended item>", f"recommended item ({rec_desc})")
    return prompt


def _remote_feedback(
    recommended_item: Item,
    target_attrs: Mapping[str, Sequence[str]],
    schema: Sequence[str],
    chat: ChatClient | None,
) -> Feedback:
    if chat is None:
        raise FeedbackError("remote mode requires a chat client")
    prompt = render_simulator_prompt(recommended_item, target_attrs, schema)
    text = chat.complete([{"role": "user", "content": prompt}]).strip()
    if not text:
        raise FeedbackError("remote simulator returned empty text")
    parsed = parse_feedback_text(text, catalog=None)
    return parsed


_NEGATIVE_RE = re.compile(r"(?:don'?t like|do not like|dislike|hate)\s+(.+?)(?:[;.]|$)", re.IGNORECASE)
_POSITIVE_RE = re.compile(r"(?:i\s+(?:prefer|like|love|want))\s+(.+?)(?:[;.]|$)", re.IGNORECASE)
_PHRASE_PREFIX_RE = re.compile(r"^(?:films?|movies?)?\s*directed by\s+", re.IGNORECASE)


def _clean_fragment(fragment: str) -> str:
    fragment = fragment.strip().strip('"').strip()
    fragment = _PHRASE_PREFIX_RE.sub("", fragment)
    return fragment.rstrip(".;,").strip()


def _singular_forms(value: str) -> list[str]:
    forms = [value]
    if value.endswith("ies"):
        forms.append(value[:-3] + "y")
    if value.endswith("es"):
        forms.append(value[:-2])
    if value.endswith("s"):
        forms.append(value[:-1])
    return forms


def resolve_attribute_value(fragment: str, catalog: Catalog) -> tuple[str, str] | None:
    """Map free text like "comedies" onto a known (attribute, value) pair."""
    lookup: dict[str, tuple[str, str]] = {}
    for attr in reversed(priority_order(catalog.attribute_schema)):
        for item in catalog:
            for value in item.values(attr):
                lookup[value.casefold()] = (attr, value)
    for form in _singular_forms(_clean_fragment(fragment).casefold()):
        if form in lookup:
            return lookup[form]
    return None


def parse_feedback_text(text: str, catalog: Catalog | None) -> Feedback:
    """Best-effort parse of natural-language feedback into structure.

    Without a catalog, fragments are kept verbatim; with one, they resolve to
    known attribute values (handling simple plurals).
    """
    if not text.strip():
        raise FeedbackError("empty feedback text")
    disliked = preferred = None

    neg = _NEGATIVE_RE.search(text)
    remainder = text
    if neg:
        remainder = text[neg.end() :]
    pos = _POSITIVE_RE.search(remainder) or (None if neg else _POSITIVE_RE.search(text))

    if neg:
        fragment = _clean_fragment(neg.group(1))
        disliked = resolve_attribute_value(fragment, catalog) if catalog else ("", fragment)
    if pos:
        fragment = _clean_fragment(pos.group(1))
        preferred = resolve_attribute_value(fragment, catalog) if catalog else ("", fragment)

    if disliked is None and preferred is None:
        raise FeedbackError(f"could not parse feedback: {text!r}")
    polarity = "negative" if disliked is not None else "positive"
    return Feedback(polarity=polarity, disliked=disliked, preferred=preferred, raw_text=text)


def check_acceptance(ranked: RankedResult, target: str, k: int) -> bool:
    """Loop-termination test: did the target land in the top k?"""
    if k < 1:
        raise FeedbackError("k must be >= 1")
    if ranked.target != target:
        raise FeedbackError(f"ranked result's target {ranked.target!r} is not {target!r}")
    return ranked.target_rank <= k
