"""Semantic item embeddings: pluggable providers, persistent cache, tables.

Providers are pure functions of the rendered item content string. Two mock
providers keep the whole pipeline runnable offline; the remote provider talks
to an HTTP embedding endpoint.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .catalog import Catalog, Item

log = logging.getLogger(__name__)

EMBEDDINGS_FORMAT = "cesrec.embeddings"
STORE_VERSION = 1
EMBED_TOKEN_ENV = "CESREC_EMBED_TOKEN"

SPACES = ("semantic", "collaborative", "hybrid")


class EmbeddingError(ValueError):
    pass


@dataclass
class EmbeddingTable:
    """item_id -> vector in one of the three embedding spaces."""

    space: str
    dim: int
    rows: dict[str, np.ndarray] = field(default_factory=dict)
    provider: str = ""

    def __post_init__(self):
        if self.space not in SPACES:
            raise EmbeddingError(f"unknown embedding space {self.space!r}")
        for key, vec in self.rows.items():
            self.rows[key] = self._check(key, vec)

    def _check(self, key: str, vec) -> np.ndarray:
        arr = np.asarray(vec, dtype=np.float64)
        if arr.shape != (self.dim,):
            raise EmbeddingError(f"row {key!r} has dim {arr.shape}, expected ({self.dim},)")
        if not np.all(np.isfinite(arr)):
            raise EmbeddingError(f"row {key!r} contains non-finite values")
        return arr

    def __len__(self) -> int:
        return len(self.rows)

    def __contains__(self, key: str) -> bool:
        return key in self.rows

    def vector(self, key: str) -> np.ndarray:
        try:
            return self.rows[key]
        except KeyError:
            raise EmbeddingError(f"no {self.space} embedding for {key!r}") from None

    def vectors(self, keys: Sequence[str]) -> np.ndarray:
        return np.stack([self.vector(k) for k in keys])

    def set(self, key: str, vec) -> None:
        self.rows[key] = self._check(key, vec)

    def save(self, path: str | Path) -> None:
        with Path(path).open("w", encoding="utf-8") as fh:
            header = {
                "format": EMBEDDINGS_FORMAT,
                "version": STORE_VERSION,
                "space": self.space,
                "dim": self.dim,
                "provider": self.provider,
            }
            fh.write(json.dumps(header, sort_keys=True) + "\n")
            for key, vec in self.rows.items():
                rec = {"key": key, "dim": self.dim, "vector": vec.tolist()}
                fh.write(json.dumps(rec) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "EmbeddingTable":
        with Path(path).open("r", encoding="utf-8") as fh:
            header = json.loads(fh.readline())
            if header.get("format") != EMBEDDINGS_FORMAT or header.get("version") != STORE_VERSION:
                raise EmbeddingError(f"{path}: not a version-{STORE_VERSION} embedding table")
            table = cls(header["space"], header["dim"], provider=header.get("provider", ""))
            for line in fh:
                rec = json.loads(line)
                table.set(rec["key"], rec["vector"])
        return table


def stable_hash(*parts) -> int:
    digest = hashlib.sha256(repr(parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def content_key(content: str) -> str:
    return hashlib.sha256(content.encode("utf-8")).hexdigest()


class EmbeddingProvider:
    """Base contract: identical text -> identical vector of ``dim`` floats."""

    kind = "base"
    dim: int

    @property
    def identity(self) -> str:
        return f"{self.kind}:d{self.dim}"

    def embed_texts(self, texts: Sequence[str]) -> np.ndarray:
        raise NotImplementedError


_ATTR_SEGMENT = re.compile(r"^([a-z][a-z0-9_-]*): (.*)$")


def parse_content(content: str) -> tuple[str, list[tuple[str, str]]]:
    """Split rendered item content back into (title, attribute pairs).

    Attribute segments are lowercase ``name: v1, v2`` sentences appended after
    the title, which is how ``Item.content`` renders them. Titles keep their
    own colons because attribute names are lowercase identifiers.
    """
    segments = [s.strip() for s in content.split(".") if s.strip()]
    pairs: list[tuple[str, str]] = []
    title_parts: list[str] = []
    for seg in segments:
        m = _ATTR_SEGMENT.match(seg)
        if m and not title_parts:
            # No title yet: a leading lowercase-colon segment is still the title.
            title_parts.append(seg)
        elif m:
            name, values = m.groups()
            for value in values.split(","):
                if value.strip():
                    pairs.append((name, value.strip()))
        else:
            title_parts.append(seg)
    return ". ".join(title_parts), pairs


class MockAttributeProvider(EmbeddingProvider):
    """Attribute-anchored deterministic embeddings for offline tests.

    Each attribute value maps to a fixed unit anchor drawn from a seeded
    stream; an item's vector is the normalized sum of its anchors plus small
    seeded title noise. Semantic similarity therefore tracks shared attribute
    values, which is what the outlier-masking tests need.
    """

    kind = "mock-attribute"

    def __init__(self, dim: int = 384, seed: int = 0, title_noise: float = 0.05):
        self.dim = dim
        self.seed = seed
        self.title_noise = title_noise
        self.calls = 0

    @property
    def identity(self) -> str:
        return f"{self.kind}:d{self.dim}:s{self.seed}:n{self.title_noise}"

    def _anchor(self, name: str, value: str) -> np.ndarray:
        rng = np.random.default_rng(stable_hash("anchor", self.seed, name, value.casefold()))
        vec = rng.standard_normal(self.dim)
        return vec / np.linalg.norm(vec)

    def embed_texts(self, texts: Sequence[str]) -> np.ndarray:
        self.calls += 1
        out = np.zeros((len(texts), self.dim))
        for row, text in enumerate(texts):
            title, pairs = parse_content(text)
            vec = np.zeros(self.dim)
            for name, value in sorted(set(pairs)):
                vec += self._anchor(name, value)
            noise_rng = np.random.default_rng(stable_hash("title", self.seed, title))
            noise = noise_rng.standard_normal(self.dim)
            # noise norm ~= title_noise, small relative to the unit anchors
            vec += self.title_noise * noise / np.linalg.norm(noise)
            norm = np.linalg.norm(vec)
            if norm == 0.0:
                vec = self._anchor("__text__", text)
                norm = 1.0
            out[row] = vec / norm
        return out


class MockHashProvider(EmbeddingProvider):
    """Content-hash embeddings: pure, fast, no structure beyond identity."""

    kind = "mock-hash"

    def __init__(self, dim: int = 384, seed: int = 0):
        self.dim = dim
        self.seed = seed
        self.calls = 0

    @property
    def identity(self) -> str:
        return f"{self.kind}:d{self.dim}:s{self.seed}"

    def embed_texts(self, texts: Sequence[str]) -> np.ndarray:
        self.calls += 1
        out = np.zeros((len(texts), self.dim))
        for row, text in enumerate(texts):
            rng = np.random.default_rng(stable_hash("hash", self.seed, text))
            vec = rng.standard_normal(self.dim)
            out[row] = vec / np.linalg.norm(vec)
        return out


class RemoteEmbeddingProvider(EmbeddingProvider):
    """HTTP provider: POST {"texts": [...]}, response {"embeddings": [[...]]}.

    Pooling (last-token vs mean) is a server-side property; the declared
    ``pooling`` tag only feeds the provider identity so caches separate.
    """

    kind = "remote"

    def __init__(
        self,
        endpoint: str,
        dim: int,
        batch_size: int = 32,
        pooling: str = "last-token",
        timeout: float = 30.0,
        max_attempts: int = 3,
    ):
        self.endpoint = endpoint
        self.dim = dim
        self.batch_size = batch_size
        self.pooling = pooling
        self.timeout = timeout
        self.max_attempts = max_attempts
        self.calls = 0

    @property
    def identity(self) -> str:
        return f"{self.kind}:{self.endpoint}:d{self.dim}:{self.pooling}"

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(EMBED_TOKEN_ENV)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def _post(self, texts: Sequence[str]) -> list[list[float]]:
        import requests

        last_err: Exception | None = None
        for attempt in range(self.max_attempts):
            try:
                resp = requests.post(
                    self.endpoint,
                    json={"texts": list(texts)},
                    headers=self._headers(),
                    timeout=self.timeout,
                )
                resp.raise_for_status()
                return resp.json()["embeddings"]
            except Exception as err:  # noqa: BLE001 - retry any transport failure
                last_err = err
                if attempt < self.max_attempts - 1:
                    time.sleep(2.0**attempt)
        raise EmbeddingError(f"embedding endpoint failed after {self.max_attempts} attempts: {last_err}")

    def embed_texts(self, texts: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dim))
        for start in range(0, len(texts), self.batch_size):
            batch = texts[start : start + self.batch_size]
            self.calls += 1
            embeddings = self._post(batch)
            if len(embeddings) != len(batch):
                raise EmbeddingError("endpoint returned wrong number of embeddings")
            for offset, vec in enumerate(embeddings):
                arr = np.asarray(vec, dtype=np.float64)
                if arr.shape != (self.dim,):
                    raise EmbeddingError(
                        f"endpoint returned dim {arr.shape[-1]}, provider declares {self.dim}"
                    )
                out[start + offset] = arr
        return out


def extract_semantic(item: Item, provider: EmbeddingProvider, schema: Sequence[str] | None = None) -> np.ndarray:
    """Embed one item's rendered content."""
    if schema is None:
        schema = list(item.attributes)
    content = item.content(schema)
    if not content.strip():
        raise EmbeddingError(f"item {item.item_id!r} has empty content")
    vec = provider.embed_texts([content])[0]
    if vec.shape != (provider.dim,):
        raise EmbeddingError(f"provider returned dim {vec.shape}, declared {provider.dim}")
    return vec


def embed_catalog(
    catalog: Catalog,
    provider: EmbeddingProvider,
    cache_path: str | Path | None = None,
) -> EmbeddingTable:
    """One semantic vector per catalog item, cached by (provider, content hash)."""
    cache: dict[str, np.ndarray] = {}
    if cache_path is not None:
        cache = _read_cache(Path(cache_path), provider)

    contents = {item.item_id: catalog.content(item.item_id) for item in catalog}
    keys = {item_id: content_key(text) for item_id, text in contents.items()}
    missing = [item_id for item_id, key in keys.items() if key not in cache]

    new_entries: dict[str, np.ndarray] = {}
    for start in range(0, len(missing), 256):
        chunk = missing[start : start + 256]
        vecs = provider.embed_texts([contents[i] for i in chunk])
        for item_id, vec in zip(chunk, vecs):
            new_entries[keys[item_id]] = np.asarray(vec, dtype=np.float64)

    if cache_path is not None and new_entries:
        _append_cache(Path(cache_path), provider, new_entries, had_header=bool(cache))
    cache.update(new_entries)

    table = EmbeddingTable("semantic", provider.dim, provider=provider.identity)
    for item_id, key in keys.items():
        table.set(item_id, cache[key])
    return table


def _read_cache(path: Path, provider: EmbeddingProvider) -> dict[str, np.ndarray]:
    if not path.exists():
        return {}
    entries: dict[str, np.ndarray] = {}
    with path.open("r", encoding="utf-8") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line)
        except json.JSONDecodeError:
            log.warning("cache %s has a corrupt header; recomputing", path)
            path.unlink()
            return {}
        if header.get("provider") != provider.identity or header.get("version") != STORE_VERSION:
            log.warning("cache %s was built by %r; recomputing", path, header.get("provider"))
            path.unlink()
            return {}
        for line in fh:
            try:
                rec = json.loads(line)
                vec = np.asarray(rec["vector"], dtype=np.float64)
                if vec.shape != (provider.dim,) or not np.all(np.isfinite(vec)):
                    raise ValueError("bad vector")
                entries[rec["key"]] = vec
            except (json.JSONDecodeError, KeyError, ValueError):
                log.warning("cache %s: corrupt entry skipped; will recompute", path)
    return entries


def _append_cache(
    path: Path, provider: EmbeddingProvider, entries: dict[str, np.ndarray], had_header: bool
) -> None:
    fresh = not path.exists() or not had_header
    mode = "a" if path.exists() and had_header else "w"
    with path.open(mode, encoding="utf-8") as fh:
        if fresh:
            header = {
                "format": EMBEDDINGS_FORMAT,
                "version": STORE_VERSION,
                "provider": provider.identity,
            }
            fh.write(json.dumps(header, sort_keys=True) + "\n")
        for key, vec in entries.items():
            fh.write(json.dumps({"key": key, "dim": len(vec), "vector": vec.tolist()}) + "\n")
