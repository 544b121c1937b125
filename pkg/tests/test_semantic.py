import json

import numpy as np
import pytest

from cesrec.catalog import Catalog, Item
from cesrec.semantic import (
    EmbeddingError,
    EmbeddingTable,
    MockAttributeProvider,
    MockHashProvider,
    RemoteEmbeddingProvider,
    embed_catalog,
    extract_semantic,
    parse_content,
)


def cosine(a, b):
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


class TestProviders:
    def test_same_content_same_vector(self, mock_provider):
        text = "Scream. genre: horror, thriller."
        a = mock_provider.embed_texts([text])[0]
        b = mock_provider.embed_texts([text])[0]
        assert np.array_equal(a, b)

    def test_shared_genre_high_similarity(self, mock_provider):
        a = extract_semantic(Item("a", "Scream", {"genre": ("horror",)}), mock_provider, ["genre"])
        b = extract_semantic(Item("b", "The Thing", {"genre": ("horror",)}), mock_provider, ["genre"])
        assert cosine(a, b) > 0.5

    def test_disjoint_attributes_low_similarity(self, mock_provider):
        a = extract_semantic(Item("a", "Scream", {"genre": ("horror",)}), mock_provider, ["genre"])
        b = extract_semantic(Item("b", "Dogma", {"genre": ("comedy",)}), mock_provider, ["genre"])
        assert abs(cosine(a, b)) < 0.2

    def test_value_order_irrelevant(self, mock_provider):
        a = extract_semantic(Item("a", "Scream", {"genre": ("horror", "thriller")}), mock_provider, ["genre"])
        b = extract_semantic(Item("a", "Scream", {"genre": ("thriller", "horror")}), mock_provider, ["genre"])
        assert np.array_equal(a, b)

    def test_parse_content_keeps_title_colons(self):
        title, pairs = parse_content("Halloween: H20. genre: horror, thriller.")
        assert title == "Halloween: H20"
        assert pairs == [("genre", "horror"), ("genre", "thriller")]

    def test_hash_provider_is_pure(self):
        provider = MockHashProvider(dim=32, seed=1)
        a = provider.embed_texts(["anything"])[0]
        b = provider.embed_texts(["anything"])[0]
        assert np.array_equal(a, b)
        assert a.shape == (32,)

    def test_title_only_item_still_embeds(self, mock_provider):
        vec = extract_semantic(Item("a", "X"), mock_provider)
        assert vec.shape == (384,)


class TestEmbeddingTable:
    def test_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        table = EmbeddingTable("semantic", 8, {f"i{k}": rng.standard_normal(8) for k in range(5)})
        path = tmp_path / "table.jsonl"
        table.save(path)
        loaded = EmbeddingTable.load(path)
        assert loaded.space == "semantic"
        assert loaded.dim == 8
        for key in table.rows:
            assert np.array_equal(table.rows[key], loaded.rows[key])

    def test_dim_mismatch_rejected(self):
        with pytest.raises(EmbeddingError):
            EmbeddingTable("semantic", 4, {"a": np.zeros(5)})

    def test_non_finite_rejected(self):
        with pytest.raises(EmbeddingError):
            EmbeddingTable("semantic", 2, {"a": np.array([1.0, np.nan])})

    def test_unknown_space_rejected(self):
        with pytest.raises(EmbeddingError):
            EmbeddingTable("latent", 2)


def small_catalog():
    return Catalog(
        [
            Item("a", "Scream", {"genre": ("horror",)}),
            Item("b", "Dogma", {"genre": ("comedy",)}),
            Item("c", "Alien", {"genre": ("horror", "sci-fi")}),
        ],
        ("genre",),
    )


class TestCache:
    def test_second_run_hits_cache(self, tmp_path):
        catalog = small_catalog()
        provider = MockAttributeProvider(dim=16, seed=0)
        cache = tmp_path / "cache.jsonl"
        first = embed_catalog(catalog, provider, cache)
        calls_after_first = provider.calls
        second = embed_catalog(catalog, provider, cache)
        assert provider.calls == calls_after_first
        for key in first.rows:
            assert np.array_equal(first.rows[key], second.rows[key])

    def test_title_edit_triggers_one_call(self, tmp_path):
        catalog = small_catalog()
        provider = MockAttributeProvider(dim=16, seed=0)
        cache = tmp_path / "cache.jsonl"
        embed_catalog(catalog, provider, cache)
        calls = provider.calls
        edited = Catalog(
            [
                Item("a", "Scream 2", {"genre": ("horror",)}),
                Item("b", "Dogma", {"genre": ("comedy",)}),
                Item("c", "Alien", {"genre": ("horror", "sci-fi")}),
            ],
            ("genre",),
        )
        embed_catalog(edited, provider, cache)
        assert provider.calls == calls + 1

    def test_corrupt_entry_recomputed(self, tmp_path):
        catalog = small_catalog()
        provider = MockAttributeProvider(dim=16, seed=0)
        cache = tmp_path / "cache.jsonl"
        table = embed_catalog(catalog, provider, cache)
        lines = cache.read_text().splitlines()
        broken = json.loads(lines[1])
        broken["vector"] = broken["vector"][:3]
        lines[1] = json.dumps(broken)
        cache.write_text("\n".join(lines) + "\n")
        again = embed_catalog(catalog, provider, cache)
        for key in table.rows:
            assert np.array_equal(table.rows[key], again.rows[key])

    def test_provider_change_invalidates_cache(self, tmp_path):
        catalog = small_catalog()
        cache = tmp_path / "cache.jsonl"
        embed_catalog(catalog, MockAttributeProvider(dim=16, seed=0), cache)
        other = MockHashProvider(dim=16, seed=0)
        table = embed_catalog(catalog, other, cache)
        assert table.provider == other.identity

    def test_catalog_size_matches_table(self, tmp_path):
        items = [Item(f"i{k}", f"Title {k}", {"genre": (f"g{k % 5}",)}) for k in range(120)]
        catalog = Catalog(items, ("genre",))
        table = embed_catalog(catalog, MockAttributeProvider(dim=16, seed=0))
        assert len(table) == 120


class FakeResponse:
    def __init__(self, payload, status=200):
        self.payload = payload
        self.status_code = status

    def raise_for_status(self):
        if self.status_code >= 400:
            raise RuntimeError(f"status {self.status_code}")

    def json(self):
        return self.payload


class TestRemoteProvider:
    def test_retries_then_succeeds(self, monkeypatch):
        calls = []

        def fake_post(url, json=None, headers=None, timeout=None):
            calls.append(json)
            if len(calls) < 3:
                raise ConnectionError("boom")
            return FakeResponse({"embeddings": [[1.0, 2.0]] * len(json["texts"])})

        import requests

        monkeypatch.setattr(requests, "post", fake_post)
        monkeypatch.setattr("time.sleep", lambda s: None)
        provider = RemoteEmbeddingProvider("http://embed.test/v1", dim=2)
        out = provider.embed_texts(["a", "b"])
        assert out.shape == (2, 2)
        assert len(calls) == 3

    def test_gives_up_after_three_attempts(self, monkeypatch):
        import requests

        monkeypatch.setattr(requests, "post", lambda *a, **k: (_ for _ in ()).throw(ConnectionError("down")))
        monkeypatch.setattr("time.sleep", lambda s: None)
        provider = RemoteEmbeddingProvider("http://embed.test/v1", dim=2)
        with pytest.raises(EmbeddingError, match="after 3 attempts"):
            provider.embed_texts(["a"])

    def test_dim_mismatch_rejected(self, monkeypatch):
        import requests

        monkeypatch.setattr(
            requests, "post", lambda *a, **k: FakeResponse({"embeddings": [[1.0, 2.0, 3.0]]})
        )
        provider = RemoteEmbeddingProvider("http://embed.test/v1", dim=2)
        with pytest.raises(EmbeddingError, match="dim"):
            provider.embed_texts(["a"])

    def test_auth_header_from_env(self, monkeypatch):
        captured = {}

        def fake_post(url, json=None, headers=None, timeout=None):
            captured.update(headers)
            return FakeResponse({"embeddings": [[0.0, 0.0]]})

        import requests

        monkeypatch.setattr(requests, "post", fake_post)
        monkeypatch.setenv("CESREC_EMBED_TOKEN", "secret-token")
        RemoteEmbeddingProvider("http://embed.test/v1", dim=2).embed_texts(["a"])
        assert captured["Authorization"] == "Bearer secret-token"
