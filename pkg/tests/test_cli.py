import json

from click.testing import CliRunner
from fastapi.testclient import TestClient

from cesrec.cli import main
from cesrec.service import create_app, load_runtime

MOVIES = "\n".join(
    f"{k}::Film {k} ({1990 + k})::{'Comedy' if k % 2 else 'Horror'}" for k in range(1, 13)
)


def _ratings_lines():
    lines = []
    for user in range(1, 11):
        # 8 events per user over the 12 movies
        for step in range(8):
            movie = (user + step) % 12 + 1
            lines.append(f"{user}::{movie}::4::{978300000 + step * 60}")
    return "\n".join(lines)


def _bootstrap(tmp_path, runner):
    dataset = tmp_path / "dataset"
    (tmp_path / "ratings.dat").write_text(_ratings_lines(), encoding="latin-1")
    (tmp_path / "movies.dat").write_text(MOVIES, encoding="latin-1")
    result = runner.invoke(
        main,
        [
            "ingest", "movielens",
            "--ratings", str(tmp_path / "ratings.dat"),
            "--movies", str(tmp_path / "movies.dat"),
            "--out-dir", str(dataset),
        ],
    )
    assert result.exit_code == 0, result.output
    return dataset


def test_full_cli_workflow(tmp_path):
    runner = CliRunner()
    dataset = _bootstrap(tmp_path, runner)
    assert (dataset / "catalog.jsonl").exists()
    assert (dataset / "sequences.jsonl").exists()

    checkpoints = tmp_path / "ckpt"
    checkpoints.mkdir()
    semantic_path = checkpoints / "semantic.jsonl"
    result = runner.invoke(
        main,
        [
            "embed-catalog", "--dataset-dir", str(dataset),
            "--provider", "mock-attribute", "--dim", "96",
            "--cache", str(tmp_path / "cache.jsonl"),
            "--out", str(semantic_path),
        ],
    )
    assert result.exit_code == 0, result.output

    srs_config = tmp_path / "srs.json"
    srs_config.write_text(json.dumps({
        "embed_dim": 16, "num_blocks": 1, "num_heads": 1, "max_seq_len": 8,
        "dropout": 0.1, "lr": 0.01, "batch_size": 8, "epochs": 3, "seed": 0,
    }))
    result = runner.invoke(
        main,
        [
            "train-srs", "--dataset", str(dataset),
            "--config", str(srs_config), "--min-length", "5",
            "--out", str(checkpoints / "srs.npz"),
        ],
    )
    assert result.exit_code == 0, result.output

    result = runner.invoke(
        main,
        [
            "train-adapter", "--semantic", str(semantic_path),
            "--collab", str(checkpoints / "srs.npz"),
            "--hidden-dim", "32", "--epochs", "20",
            "--out", str(checkpoints / "adapter.npz"),
        ],
    )
    assert result.exit_code == 0, result.output

    result = runner.invoke(
        main,
        [
            "generate-tuning-data", "--dataset-dir", str(dataset),
            "--per-user", "1", "--out", str(tmp_path / "tuning.jsonl"),
        ],
    )
    assert result.exit_code == 0, result.output
    lines = (tmp_path / "tuning.jsonl").read_text().splitlines()
    assert lines and all(set(json.loads(l)) == {"instruction", "input", "output"} for l in lines)

    out_dir = tmp_path / "eval"
    result = runner.invoke(
        main,
        [
            "run-eval", "--dataset", str(dataset),
            "--checkpoint-dir", str(checkpoints),
            "--rounds", "1", "--mask-k", "1", "--seed", "0",
            "--candidate-size", "4", "--sweeps", "--out", str(out_dir),
        ],
    )
    assert result.exit_code == 0, result.output
    reports = json.loads((out_dir / "reports.json").read_text())
    assert set(reports) == {"baseline", "full", "no_dual_alignment", "no_constructor"}
    assert (out_dir / "table.txt").exists()
    assert (out_dir / "traces.jsonl").exists()
    sweep_lines = (out_dir / "sweeps.csv").read_text().splitlines()
    assert sweep_lines[0] == "sweep,param,hr5,ndcg5,hr10,ndcg10,n_users"

    # the checkpoint directory is exactly what `serve` loads
    runtime = load_runtime(checkpoints, dataset / "catalog.jsonl", backend="rule-based",
                           store_dir=tmp_path / "sessions",
                           sequences_path=dataset / "sequences.jsonl")
    client = TestClient(create_app(runtime))
    created = client.post("/sessions", json={"user_id": "1"})
    assert created.status_code == 201
    sid = created.json()["session_id"]
    assert client.get(f"/sessions/{sid}/trace").status_code == 200


def test_run_eval_synthetic_smoke(tmp_path):
    runner = CliRunner()
    out_dir = tmp_path / "eval"
    result = runner.invoke(
        main,
        [
            "run-eval", "--dataset", "synthetic",
            "--variant", "baseline", "--variant", "full",
            "--rounds", "1", "--seed", "0",
            "--synthetic-users", "30", "--synthetic-epochs", "3",
            "--max-users", "10", "--out", str(out_dir),
        ],
    )
    assert result.exit_code == 0, result.output
    reports = json.loads((out_dir / "reports.json").read_text())
    assert set(reports) == {"baseline", "full"}


def test_missing_checkpoint_dir_is_usage_error(tmp_path):
    runner = CliRunner()
    result = runner.invoke(
        main, ["run-eval", "--dataset", str(tmp_path), "--out", str(tmp_path / "o")]
    )
    assert result.exit_code != 0
