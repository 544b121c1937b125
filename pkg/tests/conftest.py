"""Shared fixtures: small catalogs, mock embeddings, the movie case study."""

from __future__ import annotations

import numpy as np
import pytest

from cesrec.catalog import Catalog, InteractionSequence, Item, SplitTriple
from cesrec.semantic import EmbeddingTable, MockAttributeProvider, embed_catalog

# The 14-movie history driving the case-study tests: a comedy-heavy sequence
# with two horror entries and one action/animation outlier.
CASE_STUDY_SEQUENCE = [
    "I Still Know What You Did Last Summer",
    "Jungle 2 Jungle",
    "Two if by Sea",
    "M. Butterfly",
    "Super Mario Bros.",
    "Blank Check",
    "Repossessed",
    "The Evening Star",
    "The Beautician and the Beast",
    "Mr. Wrong",
    "A Night at the Roxbury",
    "Halloween: The Curse of Michael Myers",
    "Stop! Or My Mom Will Shoot",
    "Cops and Robbersons",
]

MOVIE_GENRES = {
    "I Still Know What You Did Last Summer": ("horror", "thriller"),
    "Jungle 2 Jungle": ("comedy", "children"),
    "Two if by Sea": ("comedy", "romance"),
    "M. Butterfly": ("drama", "romance"),
    "Super Mario Bros.": ("action", "animation"),
    "Blank Check": ("comedy", "children"),
    "Repossessed": ("comedy",),
    "The Evening Star": ("comedy", "drama"),
    "The Beautician and the Beast": ("comedy", "romance"),
    "Mr. Wrong": ("comedy",),
    "A Night at the Roxbury": ("comedy",),
    "Halloween: The Curse of Michael Myers": ("horror", "thriller"),
    "Stop! Or My Mom Will Shoot": ("comedy",),
    "Cops and Robbersons": ("comedy",),
    # Catalog-only titles available for replacement and recommendation.
    "Halloween: H20": ("horror", "thriller"),
    "Carnosaur 2": ("horror", "sci-fi"),
    "Scream": ("horror", "thriller"),
    "The Conjuring": ("horror",),
    "Hereditary": ("horror",),
    "The Exorcist": ("horror",),
    "A Nightmare on Elm Street": ("horror",),
    "The Babadook": ("horror",),
    "It": ("horror",),
    "Sleepy Hollow": ("horror",),
    "Dogma": ("comedy",),
    "Dumb and Dumber": ("comedy",),
    "The Hangover": ("comedy",),
    "Bridesmaids": ("comedy",),
    "Anchorman": ("comedy",),
    "Superbad": ("comedy",),
    "Step Brothers": ("comedy",),
    "Billy Madison": ("comedy",),
    "Happy Gilmore": ("comedy",),
    "Die Hard": ("action", "thriller"),
    "Speed": ("action", "thriller"),
    "Toy Story": ("animation", "children"),
}


@pytest.fixture(scope="session")
def movie_catalog() -> Catalog:
    items = [
        Item(f"m{i:02d}", title, {"genre": genres})
        for i, (title, genres) in enumerate(MOVIE_GENRES.items())
    ]
    return Catalog(items, ("genre",))


@pytest.fixture(scope="session")
def title_to_id(movie_catalog) -> dict[str, str]:
    return {item.title: item.item_id for item in movie_catalog}


@pytest.fixture(scope="session")
def case_study_history(title_to_id) -> list[str]:
    return [title_to_id[t] for t in CASE_STUDY_SEQUENCE]


@pytest.fixture(scope="session")
def mock_provider() -> MockAttributeProvider:
    return MockAttributeProvider(dim=384, seed=0)


@pytest.fixture(scope="session")
def movie_semantic(movie_catalog, mock_provider) -> EmbeddingTable:
    return embed_catalog(movie_catalog, mock_provider)


@pytest.fixture(scope="session")
def movie_hybrid(movie_semantic) -> EmbeddingTable:
    """Hybrid table from an adapter trained on an affine-realizable target."""
    from cesrec.alignment import AdapterHyper, build_hybrid_table, train_adapter

    keys = sorted(movie_semantic.rows)
    x = movie_semantic.vectors(keys)
    projection = np.random.default_rng(7).standard_normal((16, movie_semantic.dim)) * 0.4
    collab = EmbeddingTable(
        "collaborative", 16, {k: x[i] @ projection.T for i, k in enumerate(keys)}
    )
    adapter = train_adapter(
        movie_semantic,
        collab,
        AdapterHyper(hidden_dim=64, lr=3e-3, epochs=120, batch=64, seed=0),
    )
    return build_hybrid_table(adapter, movie_semantic)


def make_sequence(user_id: str, item_ids: list[str], start_ts: int = 1_000_000) -> InteractionSequence:
    return InteractionSequence(
        user_id, tuple((item, start_ts + 60 * i) for i, item in enumerate(item_ids))
    )


def make_triple(user_id: str, item_ids: list[str]) -> SplitTriple:
    seq = make_sequence(user_id, item_ids)
    return SplitTriple(
        train=seq.prefix(len(item_ids) - 2),
        valid_target=item_ids[-2],
        test_target=item_ids[-1],
    )


@pytest.fixture(scope="session")
def genre_training_users(movie_catalog, title_to_id):
    """Genre-coherent viewing histories so a model can learn co-occurrence."""
    by_genre: dict[str, list[str]] = {}
    for item in movie_catalog:
        primary = item.values("genre")[0]
        by_genre.setdefault(primary, []).append(item.item_id)
    rng = np.random.default_rng(11)
    triples = []
    uid = 0
    for genre in ("comedy", "horror"):
        pool = sorted(by_genre[genre])
        for _ in range(40):
            length = 8
            ids = [pool[i] for i in rng.choice(len(pool), size=length, replace=False)]
            triples.append(make_triple(f"train{uid:03d}", ids))
            uid += 1
    action_pool = sorted(by_genre.get("action", []) + by_genre.get("animation", []))
    for _ in range(10):
        ids = [action_pool[i] for i in rng.choice(len(action_pool), size=3, replace=False)]
        comedy = sorted(by_genre["comedy"])
        ids = ids + [comedy[i] for i in rng.choice(len(comedy), size=3, replace=False)]
        triples.append(make_triple(f"train{uid:03d}", ids))
        uid += 1
    return triples
