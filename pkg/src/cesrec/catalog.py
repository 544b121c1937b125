"""Catalogs, interaction sequences, leave-one-out splits and candidate sampling.

Items carry a title plus typed attributes (genre, director, category, ...).
The rendered ``content`` string is the deterministic text handed to semantic
embedding providers.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

log = logging.getLogger(__name__)

CATALOG_FORMAT = "cesrec.catalog"
SEQUENCES_FORMAT = "cesrec.sequences"
STORE_VERSION = 1

# Attribute names scanned first when comparing items or phrasing feedback.
ATTRIBUTE_PRIORITY = ("genre", "director", "category")


class CatalogError(ValueError):
    pass


@dataclass(frozen=True)
class Item:
    """A catalog entry: opaque id, title, and attribute name -> value set."""

    item_id: str
    title: str
    attributes: Mapping[str, tuple[str, ...]] = field(default_factory=dict)
    placeholder: bool = False

    def __post_init__(self):
        if not self.title:
            raise CatalogError(f"item {self.item_id!r} has an empty title")
        # Normalize attribute values to sorted tuples: set semantics with a
        # deterministic rendering order.
        norm = {
            name: tuple(sorted(set(values)))
            for name, values in self.attributes.items()
            if values
        }
        object.__setattr__(self, "attributes", norm)

    def values(self, attribute: str) -> tuple[str, ...]:
        return self.attributes.get(attribute, ())

    def has_value(self, attribute: str, value: str) -> bool:
        return value in self.attributes.get(attribute, ())

    def content(self, schema: Sequence[str]) -> str:
        """Render ``"{title}. genre: {g1, g2}. director: {d}."`` in schema order."""
        parts = [f"{self.title}."]
        for name in schema:
            values = self.attributes.get(name)
            if values:
                parts.append(f"{name}: {', '.join(values)}.")
        return " ".join(parts)


class Catalog:
    """Immutable item collection with an ordered attribute schema."""

    def __init__(self, items: Iterable[Item], attribute_schema: Sequence[str] = ()):
        self._items: dict[str, Item] = {}
        for item in items:
            if item.item_id in self._items:
                raise CatalogError(f"duplicate item_id {item.item_id!r}")
            self._items[item.item_id] = item
        schema = list(attribute_schema)
        seen = set(schema)
        # Schema must cover every attribute in use; priority names lead.
        for name in ATTRIBUTE_PRIORITY:
            if name not in seen and any(name in it.attributes for it in self._items.values()):
                schema.append(name)
                seen.add(name)
        for item in self._items.values():
            for name in item.attributes:
                if name not in seen:
                    schema.append(name)
                    seen.add(name)
        self.attribute_schema: tuple[str, ...] = tuple(schema)

    def __len__(self) -> int:
        return len(self._items)

    def __contains__(self, item_id: str) -> bool:
        return item_id in self._items

    def __iter__(self):
        return iter(self._items.values())

    @property
    def item_ids(self) -> list[str]:
        return list(self._items.keys())

    def get(self, item_id: str) -> Item:
        try:
            return self._items[item_id]
        except KeyError:
            raise CatalogError(f"unknown item_id {item_id!r}") from None

    def content(self, item_id: str) -> str:
        return self.get(item_id).content(self.attribute_schema)

    def title_index(self) -> dict[str, str]:
        """Normalized title -> item_id (first wins on collisions)."""
        index: dict[str, str] = {}
        for item in self:
            key = normalize_title(item.title)
            index.setdefault(key, item.item_id)
        return index

    def save(self, path: str | Path) -> None:
        path = Path(path)
        with path.open("w", encoding="utf-8") as fh:
            header = {
                "format": CATALOG_FORMAT,
                "version": STORE_VERSION,
                "attribute_schema": list(self.attribute_schema),
            }
            fh.write(json.dumps(header, sort_keys=True) + "\n")
            for item in self:
                record = {
                    "item_id": item.item_id,
                    "title": item.title,
                    "attributes": {k: list(v) for k, v in item.attributes.items()},
                    "placeholder": item.placeholder,
                }
                fh.write(json.dumps(record, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Catalog":
        path = Path(path)
        with path.open("r", encoding="utf-8") as fh:
            header = json.loads(fh.readline())
            _check_header(header, CATALOG_FORMAT, path)
            items = []
            for line in fh:
                rec = json.loads(line)
                items.append(
                    Item(
                        item_id=rec["item_id"],
                        title=rec["title"],
                        attributes={k: tuple(v) for k, v in rec["attributes"].items()},
                        placeholder=rec.get("placeholder", False),
                    )
                )
        return cls(items, header["attribute_schema"])


def normalize_title(title: str) -> str:
    """Case-fold and strip punctuation so near-identical titles compare equal."""
    folded = title.casefold()
    cleaned = "".join(c if c.isalnum() or c.isspace() else " " for c in folded)
    return " ".join(cleaned.split())


@dataclass(frozen=True)
class InteractionSequence:
    """A user's chronologically ordered (item_id, unix timestamp) events."""

    user_id: str
    events: tuple[tuple[str, int], ...]

    def __post_init__(self):
        events = tuple((str(i), int(t)) for i, t in self.events)
        times = [t for _, t in events]
        if any(a > b for a, b in zip(times, times[1:])):
            raise CatalogError(f"events for user {self.user_id!r} are not time-ordered")
        object.__setattr__(self, "events", events)

    def __len__(self) -> int:
        return len(self.events)

    @property
    def item_ids(self) -> list[str]:
        return [i for i, _ in self.events]

    def prefix(self, n: int) -> "InteractionSequence":
        return InteractionSequence(self.user_id, self.events[:n])


@dataclass(frozen=True)
class SplitTriple:
    """Leave-one-out split: train prefix, validation target, test target."""

    train: InteractionSequence
    valid_target: str
    test_target: str

    @property
    def user_id(self) -> str:
        return self.train.user_id

    def full_item_ids(self) -> list[str]:
        return self.train.item_ids + [self.valid_target, self.test_target]


@dataclass(frozen=True)
class CandidateSet:
    """Fixed-size candidate list containing the target exactly once."""

    candidates: tuple[str, ...]
    target_index: int
    seed: int

    def __post_init__(self):
        if len(set(self.candidates)) != len(self.candidates):
            raise CatalogError("candidate set contains duplicates")
        if not 0 <= self.target_index < len(self.candidates):
            raise CatalogError("target_index out of range")

    @property
    def target(self) -> str:
        return self.candidates[self.target_index]


@dataclass
class IngestStats:
    """Per-load bookkeeping: what was skipped or synthesized."""

    skipped_lines: int = 0
    unknown_item_events: int = 0
    placeholder_items: int = 0


def load_movielens(
    ratings_path: str | Path, movies_path: str | Path
) -> tuple[Catalog, list[InteractionSequence], IngestStats]:
    """Load MovieLens ``.dat`` files (``::`` separators, latin-1 encoded)."""
    stats = IngestStats()
    items = []
    with Path(movies_path).open("r", encoding="latin-1") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("::")
            if len(parts) != 3 or not parts[0] or not parts[1]:
                stats.skipped_lines += 1
                continue
            movie_id, title, genres = parts
            genre_values = tuple(g.strip() for g in genres.split("|") if g.strip())
            items.append(Item(movie_id, title, {"genre": genre_values}))
    catalog = Catalog(items, ("genre",))
    if len(catalog) == 0:
        log.warning("movies file %s yielded an empty catalog", movies_path)

    events_by_user: dict[str, list[tuple[str, int]]] = {}
    with Path(ratings_path).open("r", encoding="latin-1") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("::")
            if len(parts) != 4:
                stats.skipped_lines += 1
                continue
            user_id, movie_id, _rating, ts = parts
            try:
                ts_val = int(ts)
            except ValueError:
                stats.skipped_lines += 1
                continue
            if movie_id not in catalog:
                stats.unknown_item_events += 1
                log.warning("rating references unknown movie %s; skipped", movie_id)
                continue
            events_by_user.setdefault(user_id, []).append((movie_id, ts_val))

    sequences = _build_sequences(events_by_user)
    if not sequences:
        log.warning("ratings file %s yielded zero sequences", ratings_path)
    return catalog, sequences, stats


def load_amazon(
    reviews_path: str | Path, metadata_path: str | Path
) -> tuple[Catalog, list[InteractionSequence], IngestStats]:
    """Load Amazon-style newline-delimited JSON reviews plus item metadata."""
    stats = IngestStats()
    items: dict[str, Item] = {}
    with Path(metadata_path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                item_id = str(rec["asin"])
                title = str(rec.get("title") or "").strip()
            except (json.JSONDecodeError, KeyError):
                stats.skipped_lines += 1
                continue
            categories = _amazon_categories(rec)
            if not title:
                title = f"unknown-{item_id}"
            if item_id not in items:
                items[item_id] = Item(item_id, title, {"category": categories})

    events_by_user: dict[str, list[tuple[str, int]]] = {}
    with Path(reviews_path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                user_id = str(rec["reviewerID"])
                item_id = str(rec["asin"])
                ts = int(rec["unixReviewTime"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError):
                stats.skipped_lines += 1
                continue
            if item_id not in items:
                # Reviewed item missing from metadata: keep the event against a
                # flagged placeholder so sequences stay complete.
                items[item_id] = Item(item_id, f"unknown-{item_id}", placeholder=True)
                stats.placeholder_items += 1
                log.warning("review references item %s absent from metadata", item_id)
            events_by_user.setdefault(user_id, []).append((item_id, ts))

    catalog = Catalog(items.values(), ("category",))
    return catalog, _build_sequences(events_by_user), stats


def _amazon_categories(rec: dict) -> tuple[str, ...]:
    raw = rec.get("category")
    if raw is None:
        nested = rec.get("categories") or []
        raw = [c for group in nested for c in group] if nested else []
    if isinstance(raw, str):
        raw = [raw]
    return tuple(str(c).strip() for c in raw if str(c).strip())


def _build_sequences(events_by_user: dict[str, list[tuple[str, int]]]) -> list[InteractionSequence]:
    sequences = []
    for user_id, events in events_by_user.items():
        # Stable sort keeps original file order for equal timestamps.
        events.sort(key=lambda e: e[1])
        sequences.append(InteractionSequence(user_id, tuple(events)))
    return sequences


def save_sequences(sequences: Iterable[InteractionSequence], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        header = {"format": SEQUENCES_FORMAT, "version": STORE_VERSION}
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for seq in sequences:
            rec = {"user_id": seq.user_id, "events": [list(e) for e in seq.events]}
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def load_sequences(path: str | Path) -> list[InteractionSequence]:
    sequences = []
    with Path(path).open("r", encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        _check_header(header, SEQUENCES_FORMAT, path)
        for line in fh:
            rec = json.loads(line)
            sequences.append(
                InteractionSequence(rec["user_id"], tuple((i, t) for i, t in rec["events"]))
            )
    return sequences


def _check_header(header: dict, expected_format: str, path) -> None:
    if header.get("format") != expected_format:
        raise CatalogError(f"{path}: expected format {expected_format!r}, got {header.get('format')!r}")
    if header.get("version") != STORE_VERSION:
        raise CatalogError(f"{path}: unsupported store version {header.get('version')!r}")


def leave_one_out_split(
    sequences: Iterable[InteractionSequence], min_length: int = 5
) -> list[SplitTriple]:
    """Last event held out for test, second-to-last for validation.

    Users with fewer than ``min_length`` events are dropped.
    """
    if min_length < 3:
        raise ValueError("min_length must be >= 3 for a leave-one-out split")
    triples = []
    for seq in sequences:
        if len(seq) < min_length:
            continue
        ids = seq.item_ids
        triples.append(
            SplitTriple(
                train=seq.prefix(len(seq) - 2),
                valid_target=ids[-2],
                test_target=ids[-1],
            )
        )
    return triples


def sample_candidates(
    user_history: Sequence[str],
    catalog: Catalog,
    target: str,
    candidate_size: int = 100,
    seed: int = 0,
) -> CandidateSet:
    """Seeded draw of ``candidate_size`` items: the target plus non-interacted negatives."""
    history = set(user_history)
    pool = [i for i in catalog.item_ids if i not in history and i != target]
    pool.sort()
    needed = candidate_size - 1
    if len(pool) < needed:
        raise CatalogError(
            f"catalog too small: need {needed} non-interacted items beyond the "
            f"target (catalog {len(catalog)}, history {len(history)}, pool {len(pool)})"
        )
    rng = np.random.default_rng(seed)
    negatives = [pool[i] for i in rng.choice(len(pool), size=needed, replace=False)]
    target_index = int(rng.integers(0, candidate_size))
    candidates = negatives[:target_index] + [target] + negatives[target_index:]
    return CandidateSet(tuple(candidates), target_index, seed)
