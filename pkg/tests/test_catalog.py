import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cesrec.catalog import (
    Catalog,
    CatalogError,
    InteractionSequence,
    Item,
    leave_one_out_split,
    load_amazon,
    load_movielens,
    load_sequences,
    sample_candidates,
    save_sequences,
)
from conftest import make_sequence


MOVIES = """1::Toy Story (1995)::Animation|Children's|Comedy
2::Jumanji (1995)::Adventure|Children's|Fantasy
3::Heat (1995)::Action|Crime|Thriller
"""


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text, encoding="latin-1")
    return path


class TestMovieLens:
    def test_three_line_fixture_with_one_malformed_line(self, tmp_path):
        ratings = write(tmp_path, "ratings.dat", "1::1::5::978300760\nBROKEN LINE\n1::2::3::978302109\n")
        movies = write(tmp_path, "movies.dat", MOVIES)
        catalog, sequences, stats = load_movielens(ratings, movies)
        assert stats.skipped_lines == 1
        assert len(sequences) == 1
        assert len(sequences[0]) == 2

    def test_empty_ratings_file(self, tmp_path):
        ratings = write(tmp_path, "ratings.dat", "")
        movies = write(tmp_path, "movies.dat", MOVIES)
        _, sequences, _ = load_movielens(ratings, movies)
        assert sequences == []

    def test_genres_parsed(self, tmp_path):
        ratings = write(tmp_path, "ratings.dat", "1::1::5::978300760\n")
        movies = write(tmp_path, "movies.dat", MOVIES)
        catalog, _, _ = load_movielens(ratings, movies)
        assert catalog.get("1").values("genre") == ("Animation", "Children's", "Comedy")
        assert len(catalog) == 3

    def test_unknown_movie_rating_skipped(self, tmp_path):
        ratings = write(tmp_path, "ratings.dat", "1::999::5::978300760\n1::1::4::978300761\n")
        movies = write(tmp_path, "movies.dat", MOVIES)
        _, sequences, stats = load_movielens(ratings, movies)
        assert stats.unknown_item_events == 1
        assert len(sequences[0]) == 1

    def test_timestamp_ties_keep_file_order(self, tmp_path):
        ratings = write(
            tmp_path, "ratings.dat",
            "1::3::5::978300760\n1::1::5::978300760\n1::2::5::978300000\n",
        )
        movies = write(tmp_path, "movies.dat", MOVIES)
        _, sequences, _ = load_movielens(ratings, movies)
        assert sequences[0].item_ids == ["2", "3", "1"]

    def test_ingest_idempotent(self, tmp_path):
        ratings = write(tmp_path, "ratings.dat", "1::1::5::978300760\n2::2::3::978300999\n")
        movies = write(tmp_path, "movies.dat", MOVIES)
        paths = []
        for run in range(2):
            catalog, sequences, _ = load_movielens(ratings, movies)
            out = tmp_path / f"cat{run}.jsonl"
            catalog.save(out)
            seq_out = tmp_path / f"seq{run}.jsonl"
            save_sequences(sequences, seq_out)
            paths.append((out.read_bytes(), seq_out.read_bytes()))
        assert paths[0] == paths[1]


class TestAmazon:
    def test_missing_metadata_yields_flagged_placeholder(self, tmp_path):
        reviews = tmp_path / "reviews.jsonl"
        reviews.write_text(
            json.dumps({"reviewerID": "u1", "asin": "b1", "unixReviewTime": 100})
            + "\n"
            + json.dumps({"reviewerID": "u1", "asin": "b2", "unixReviewTime": 200})
            + "\n"
        )
        metadata = tmp_path / "meta.jsonl"
        metadata.write_text(json.dumps({"asin": "b1", "title": "Game One", "category": ["Video Games"]}) + "\n")
        catalog, sequences, stats = load_amazon(reviews, metadata)
        assert stats.placeholder_items == 1
        placeholder = catalog.get("b2")
        assert placeholder.placeholder
        assert placeholder.title == "unknown-b2"
        assert sequences[0].item_ids == ["b1", "b2"]

    def test_category_attribute(self, tmp_path):
        reviews = tmp_path / "reviews.jsonl"
        reviews.write_text(json.dumps({"reviewerID": "u1", "asin": "b1", "unixReviewTime": 100}) + "\n")
        metadata = tmp_path / "meta.jsonl"
        metadata.write_text(json.dumps({"asin": "b1", "title": "Game One", "category": ["Video Games", "RPG"]}) + "\n")
        catalog, _, _ = load_amazon(reviews, metadata)
        assert catalog.get("b1").values("category") == ("RPG", "Video Games")
        assert catalog.attribute_schema[0] == "category"


class TestTypes:
    def test_item_requires_title(self):
        with pytest.raises(CatalogError):
            Item("x", "")

    def test_duplicate_item_ids_rejected(self):
        with pytest.raises(CatalogError):
            Catalog([Item("a", "A"), Item("a", "A again")])

    def test_content_rendering_order_and_set_semantics(self):
        item1 = Item("a", "Scream", {"genre": ("thriller", "horror"), "director": ("Wes Craven",)})
        item2 = Item("a", "Scream", {"genre": ("horror", "thriller"), "director": ("Wes Craven",)})
        schema = ("genre", "director")
        assert item1.content(schema) == "Scream. genre: horror, thriller. director: Wes Craven."
        assert item1.content(schema) == item2.content(schema)

    def test_unsorted_events_rejected(self):
        with pytest.raises(CatalogError):
            InteractionSequence("u", (("a", 100), ("b", 50)))

    def test_schema_covers_used_attributes(self):
        catalog = Catalog([Item("a", "A", {"mood": ("dark",)})])
        assert "mood" in catalog.attribute_schema

    def test_sequence_store_round_trip(self, tmp_path):
        seqs = [make_sequence("u1", ["a", "b"]), make_sequence("u2", ["c"])]
        path = tmp_path / "seqs.jsonl"
        save_sequences(seqs, path)
        loaded = load_sequences(path)
        assert [s.user_id for s in loaded] == ["u1", "u2"]
        assert loaded[0].events == seqs[0].events

    def test_store_rejects_wrong_version(self, tmp_path):
        path = tmp_path / "seqs.jsonl"
        path.write_text(json.dumps({"format": "cesrec.sequences", "version": 99}) + "\n")
        with pytest.raises(CatalogError):
            load_sequences(path)


class TestLeaveOneOut:
    def test_five_event_split(self):
        seq = make_sequence("u", ["a", "b", "c", "d", "e"])
        triple = leave_one_out_split([seq], min_length=3)[0]
        assert triple.train.item_ids == ["a", "b", "c"]
        assert triple.valid_target == "d"
        assert triple.test_target == "e"

    def test_short_sequences_dropped(self):
        seq = make_sequence("u", ["a", "b"])
        assert leave_one_out_split([seq], min_length=3) == []

    def test_hundred_users_ten_events(self):
        seqs = [make_sequence(f"u{i}", [f"i{j}" for j in range(10)]) for i in range(100)]
        triples = leave_one_out_split(seqs)
        assert len(triples) == 100
        assert all(len(t.train) == 8 for t in triples)

    def test_min_length_validation(self):
        with pytest.raises(ValueError):
            leave_one_out_split([], min_length=2)


def big_catalog(n=300):
    return Catalog([Item(f"i{k:03d}", f"Item {k}") for k in range(n)])


class TestCandidates:
    def test_exact_size_and_target_once(self):
        catalog = big_catalog()
        history = [f"i{k:03d}" for k in range(40)]
        cs = sample_candidates(history, catalog, "i250", candidate_size=100, seed=3)
        assert len(cs.candidates) == 100
        assert cs.candidates.count("i250") == 1
        assert cs.candidates[cs.target_index] == "i250"

    def test_same_seed_is_deterministic(self):
        catalog = big_catalog()
        history = [f"i{k:03d}" for k in range(40)]
        a = sample_candidates(history, catalog, "i250", 100, seed=9)
        b = sample_candidates(history, catalog, "i250", 100, seed=9)
        assert a == b

    def test_headroom_error(self):
        catalog = big_catalog(101)
        history = [f"i{k:03d}" for k in range(50)]
        with pytest.raises(CatalogError, match="catalog too small"):
            sample_candidates(history, catalog, "i100", candidate_size=100, seed=0)

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**31 - 1))
    def test_no_history_leakage(self, seed):
        catalog = big_catalog(250)
        rng = np.random.default_rng(seed)
        history = [f"i{k:03d}" for k in rng.choice(250, size=60, replace=False)]
        target = history[-1]
        cs = sample_candidates(history, catalog, target, candidate_size=100, seed=seed)
        leaked = (set(cs.candidates) - {target}) & set(history)
        assert leaked == set()
