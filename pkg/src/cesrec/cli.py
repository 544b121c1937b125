"""Command-line entry points.

Batch commands operate on a dataset directory (catalog.jsonl +
sequences.jsonl) and a checkpoint directory (srs.npz, adapter.npz,
semantic.jsonl). The ``session`` group is a thin HTTP client for a running
service.
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from . import catalog as cat
from .alignment import AdapterHyper, AdapterParams, build_hybrid_table, train_adapter
from .constructor import RuleBasedBackend, generate_tuning_data, save_tuning_records
from .evaluation import (
    LoopConfig,
    PipelineComponents,
    make_preference_shift_dataset,
    render_table,
    run_experiment,
    run_sweeps,
    run_table,
    save_reports,
    save_traces,
    sweep_csv,
)
from .semantic import (
    EmbeddingTable,
    MockAttributeProvider,
    MockHashProvider,
    RemoteEmbeddingProvider,
    embed_catalog,
)
from .srs import SRSConfig, SRSModel, export_collaborative_embeddings, train_srs

log = logging.getLogger(__name__)


def _load_dataset(dataset_dir: str) -> tuple[cat.Catalog, list[cat.InteractionSequence]]:
    root = Path(dataset_dir)
    return cat.Catalog.load(root / "catalog.jsonl"), cat.load_sequences(root / "sequences.jsonl")


def _make_provider(provider: str, dim: int, endpoint: str | None, seed: int):
    if provider == "mock-attribute":
        return MockAttributeProvider(dim=dim, seed=seed)
    if provider == "mock-hash":
        return MockHashProvider(dim=dim, seed=seed)
    if provider == "remote":
        if not endpoint:
            raise click.UsageError("--endpoint is required for the remote provider")
        return RemoteEmbeddingProvider(endpoint, dim=dim)
    raise click.UsageError(f"unknown provider {provider!r}")


@click.group()
@click.option("--verbose", is_flag=True, help="Enable debug logging.")
def main(verbose: bool):
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )


@main.group()
def ingest():
    """Load raw interaction files into the serialized dataset store."""


@ingest.command("movielens")
@click.option("--ratings", required=True, type=click.Path(exists=True))
@click.option("--movies", required=True, type=click.Path(exists=True))
@click.option("--out-dir", required=True, type=click.Path())
def ingest_movielens(ratings: str, movies: str, out_dir: str):
    catalog, sequences, stats = cat.load_movielens(ratings, movies)
    _write_dataset(catalog, sequences, out_dir)
    click.echo(
        f"{len(catalog)} items, {len(sequences)} users, "
        f"{sum(len(s) for s in sequences)} events (skipped {stats.skipped_lines} lines, "
        f"{stats.unknown_item_events} unknown-item events)"
    )


@ingest.command("amazon")
@click.option("--reviews", required=True, type=click.Path(exists=True))
@click.option("--metadata", required=True, type=click.Path(exists=True))
@click.option("--out-dir", required=True, type=click.Path())
def ingest_amazon(reviews: str, metadata: str, out_dir: str):
    catalog, sequences, stats = cat.load_amazon(reviews, metadata)
    _write_dataset(catalog, sequences, out_dir)
    click.echo(
        f"{len(catalog)} items, {len(sequences)} users, "
        f"{sum(len(s) for s in sequences)} events (skipped {stats.skipped_lines} lines, "
        f"{stats.placeholder_items} placeholder items)"
    )


def _write_dataset(catalog, sequences, out_dir: str):
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    catalog.save(root / "catalog.jsonl")
    cat.save_sequences(sequences, root / "sequences.jsonl")


@main.command("embed-catalog")
@click.option("--dataset-dir", required=True, type=click.Path(exists=True))
@click.option("--provider", default="mock-attribute", show_default=True)
@click.option("--dim", default=384, show_default=True)
@click.option("--endpoint", default=None, help="Embedding endpoint for the remote provider.")
@click.option("--seed", default=0, show_default=True)
@click.option("--cache", default=None, type=click.Path(), help="Embedding cache file.")
@click.option("--out", required=True, type=click.Path())
def embed_catalog_cmd(dataset_dir, provider, dim, endpoint, seed, cache, out):
    """Compute the semantic embedding table for a catalog."""
    catalog, _ = _load_dataset(dataset_dir)
    prov = _make_provider(provider, dim, endpoint, seed)
    table = embed_catalog(catalog, prov, cache)
    table.save(out)
    click.echo(f"embedded {len(table)} items with {prov.identity} -> {out}")


@main.command("train-srs")
@click.option("--dataset", "dataset_dir", required=True, type=click.Path(exists=True))
@click.option("--config", "config_path", default=None, type=click.Path(exists=True))
@click.option("--min-length", default=5, show_default=True)
@click.option("--out", required=True, type=click.Path())
def train_srs_cmd(dataset_dir, config_path, min_length, out):
    """Train the sequential recommender on leave-one-out train prefixes."""
    catalog, sequences = _load_dataset(dataset_dir)
    config = SRSConfig(**json.loads(Path(config_path).read_text())) if config_path else SRSConfig()
    triples = cat.leave_one_out_split(sequences, min_length)
    model = train_srs(triples, catalog, config)
    model.save(out)
    click.echo(
        f"trained on {len(triples)} users, final loss {model.loss_history[-1]:.4f} -> {out}"
    )


@main.command("train-adapter")
@click.option("--semantic", "semantic_path", required=True, type=click.Path(exists=True))
@click.option("--collab", "collab_path", required=True, type=click.Path(exists=True), help="SRS checkpoint supplying collaborative embeddings.")
@click.option("--hidden-dim", default=256, show_default=True)
@click.option("--lr", default=1e-3, show_default=True)
@click.option("--epochs", default=200, show_default=True)
@click.option("--batch", default=128, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", required=True, type=click.Path())
def train_adapter_cmd(semantic_path, collab_path, hidden_dim, lr, epochs, batch, seed, out):
    """Fit the semantic-to-collaborative adapter by MSE."""
    semantic = EmbeddingTable.load(semantic_path)
    model = SRSModel.load(collab_path)
    collab = export_collaborative_embeddings(model)
    hyper = AdapterHyper(hidden_dim=hidden_dim, lr=lr, epochs=epochs, batch=batch, seed=seed)
    adapter = train_adapter(semantic, collab, hyper)
    adapter.save(out)
    click.echo(
        f"adapter MSE {adapter.loss_curve[0]:.4f} -> {adapter.final_loss:.4f} "
        f"({adapter.final_loss / adapter.loss_curve[0]:.2%} of initial) -> {out}"
    )


@main.command("generate-tuning-data")
@click.option("--dataset-dir", required=True, type=click.Path(exists=True))
@click.option("--per-user", default=1, show_default=True)
@click.option("--min-length", default=5, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", required=True, type=click.Path())
def generate_tuning_data_cmd(dataset_dir, per_user, min_length, seed, out):
    """Emit the corrupt-and-restore instruction-tuning file for the constructor."""
    catalog, sequences = _load_dataset(dataset_dir)
    triples = cat.leave_one_out_split(sequences, min_length)
    records = generate_tuning_data(triples, catalog, per_user=per_user, seed=seed)
    save_tuning_records(records, out)
    click.echo(f"{len(records)} records -> {out}")


@main.command("run-eval")
@click.option("--dataset", required=True, help="Dataset directory, or 'synthetic' for the preference-shift scenario.")
@click.option("--variant", "variants", multiple=True, default=("baseline", "full", "no_dual_alignment", "no_constructor"), show_default=True)
@click.option("--rounds", default=3, show_default=True)
@click.option("--mask-k", default=1, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--accept-k", default=10, show_default=True)
@click.option("--candidate-size", default=100, show_default=True)
@click.option("--similarity-fn", default="cosine", show_default=True)
@click.option("--checkpoint-dir", default=None, type=click.Path(), help="srs.npz / adapter.npz / semantic.jsonl for real datasets.")
@click.option("--min-length", default=5, show_default=True)
@click.option("--max-users", default=0, show_default=True, help="Cap evaluated users (0 = all).")
@click.option("--synthetic-users", default=1000, show_default=True)
@click.option("--synthetic-epochs", default=250, show_default=True)
@click.option("--sweeps", is_flag=True, help="Also run rounds/mask/length sweeps.")
@click.option("--out", "out_dir", required=True, type=click.Path())
def run_eval_cmd(
    dataset, variants, rounds, mask_k, seed, accept_k, candidate_size,
    similarity_fn, checkpoint_dir, min_length, max_users, synthetic_users,
    synthetic_epochs, sweeps, out_dir,
):
    """Run the ablation table (and optional sweeps) and write reports."""
    if dataset == "synthetic":
        catalog, triples, components = _synthetic_bundle(seed, synthetic_users, synthetic_epochs)
        name = "synthetic-preference-shift"
    else:
        if checkpoint_dir is None:
            raise click.UsageError("--checkpoint-dir is required for non-synthetic datasets")
        catalog, sequences = _load_dataset(dataset)
        triples = cat.leave_one_out_split(sequences, min_length)
        ckpt = Path(checkpoint_dir)
        model = SRSModel.load(ckpt / "srs.npz")
        adapter = AdapterParams.load(ckpt / "adapter.npz")
        semantic = EmbeddingTable.load(ckpt / "semantic.jsonl")
        components = PipelineComponents(
            catalog=catalog,
            model=model,
            hybrid_table=build_hybrid_table(adapter, semantic),
            backend=RuleBasedBackend(),
        )
        name = Path(dataset).name
    if max_users:
        triples = triples[:max_users]

    config = LoopConfig(
        rounds=rounds,
        mask_k=mask_k,
        similarity_fn=similarity_fn,
        accept_k=accept_k,
        candidate_size=candidate_size,
        seed=seed,
    )
    reports = run_table(triples, components, config, variants)
    save_reports(reports, out_dir, name)
    click.echo(render_table(reports, name))

    _, traces = run_experiment(triples, components, config)
    save_traces(traces, out_dir)
    if sweeps:
        grid = run_sweeps(triples, components, config)
        (Path(out_dir) / "sweeps.csv").write_text(sweep_csv(grid))
        click.echo(f"sweeps -> {Path(out_dir) / 'sweeps.csv'}")
    click.echo(f"reports -> {out_dir}")


def _synthetic_bundle(seed: int, n_users: int = 1000, epochs: int = 250):
    """Self-contained preference-shift scenario: data, model, adapter."""
    catalog, triples = make_preference_shift_dataset(n_users=n_users, seed=seed)
    srs_config = SRSConfig(
        embed_dim=64, num_blocks=2, num_heads=1, max_seq_len=16,
        dropout=0.1, lr=0.003, batch_size=128, epochs=epochs, seed=seed,
    )
    model = train_srs(triples, catalog, srs_config)
    provider = MockAttributeProvider(dim=384, seed=seed)
    semantic = embed_catalog(catalog, provider)
    collab = export_collaborative_embeddings(model)
    adapter = train_adapter(
        semantic, collab, AdapterHyper(hidden_dim=128, lr=3e-3, epochs=200, batch=128, seed=seed)
    )
    hybrid = build_hybrid_table(adapter, semantic)
    components = PipelineComponents(
        catalog=catalog, model=model, hybrid_table=hybrid, backend=RuleBasedBackend()
    )
    return catalog, triples, components


@main.command("serve")
@click.option("--checkpoint-dir", required=True, type=click.Path(exists=True))
@click.option("--catalog", "catalog_path", required=True, type=click.Path(exists=True))
@click.option("--sequences", "sequences_path", default=None, type=click.Path(exists=True))
@click.option("--port", default=8000, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--backend", default="rule-based", type=click.Choice(["rule-based", "remote"]), show_default=True)
@click.option("--chat-endpoint", default=None)
@click.option("--store-dir", default=None, type=click.Path())
def serve_cmd(checkpoint_dir, catalog_path, sequences_path, port, host, backend, chat_endpoint, store_dir):
    """Serve the interactive session API."""
    import uvicorn

    from .service import create_app, load_runtime

    runtime = load_runtime(
        checkpoint_dir,
        catalog_path,
        backend=backend,
        store_dir=store_dir,
        sequences_path=sequences_path,
        chat_endpoint=chat_endpoint,
    )
    uvicorn.run(create_app(runtime), host=host, port=port)


@main.group()
@click.option("--url", default="http://127.0.0.1:8000", show_default=True)
@click.pass_context
def session(ctx, url):
    """Thin client for a running session service."""
    ctx.obj = url.rstrip("/")


def _request(method: str, url: str, **kwargs):
    import requests

    resp = requests.request(method, url, timeout=60, **kwargs)
    if resp.status_code >= 400:
        click.echo(f"error {resp.status_code}: {resp.text}", err=True)
        sys.exit(1)
    return resp


@session.command("create")
@click.option("--items", required=True, help="Comma-separated item ids for the history.")
@click.option("--mask-k", default=1, show_default=True)
@click.option("--top-k", default=10, show_default=True)
@click.pass_obj
def session_create(url, items, mask_k, top_k):
    body = {
        "history": [i.strip() for i in items.split(",") if i.strip()],
        "config": {"mask_k": mask_k, "top_k": top_k},
    }
    resp = _request("POST", f"{url}/sessions", json=body)
    data = resp.json()
    click.echo(f"session {data['session_id']}")
    for card in data["round0"]["recommendations"]:
        click.echo(f"  #{card['rank']:>2} {card['title']} ({card['score']:.3f})")


@session.command("feedback")
@click.option("--id", "session_id", required=True)
@click.option("--text", required=True)
@click.pass_obj
def session_feedback(url, session_id, text):
    resp = _request("POST", f"{url}/sessions/{session_id}/feedback", json={"text": text})
    data = resp.json()
    for m in data["masked"]:
        click.echo(f"  masked: {m['title']}")
    for r in data["replacements"]:
        click.echo(f"  replaced: {r['old_title']} -> {r['new_title']}")
    for card in data["recommendations"]:
        delta = card.get("rank_delta")
        arrow = "" if delta is None else (f" (+{delta})" if delta > 0 else f" ({delta})" if delta else " (=)")
        click.echo(f"  #{card['rank']:>2} {card['title']} ({card['score']:.3f}){arrow}")


@session.command("trace")
@click.option("--id", "session_id", required=True)
@click.pass_obj
def session_trace(url, session_id):
    resp = _request("GET", f"{url}/sessions/{session_id}/trace")
    click.echo(json.dumps(resp.json(), indent=2))


@session.command("delete")
@click.option("--id", "session_id", required=True)
@click.pass_obj
def session_delete(url, session_id):
    _request("DELETE", f"{url}/sessions/{session_id}")
    click.echo("deleted")


if __name__ == "__main__":
    main()
