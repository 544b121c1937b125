"""Metrics, the feedback-loop runner, and experiment harnesses.

The loop alternates rank -> feedback -> mask -> rewrite -> re-rank against a
fixed per-user candidate set, tracing every stage. Experiment runners produce
ablation tables and sweep grids; a synthetic preference-shift dataset makes
the end-to-end trends testable without any LLM.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .alignment import MaskingReport, detect_and_mask
from .catalog import (
    Catalog,
    CandidateSet,
    InteractionSequence,
    Item,
    SplitTriple,
    sample_candidates,
)
from .constructor import ConstructorBackend, PseudoSequence, RuleBasedBackend
from .feedback import Feedback, simulate_feedback
from .semantic import EmbeddingTable, stable_hash
from .srs import RankedResult, SRSModel, score_candidates

log = logging.getLogger(__name__)

VARIANTS = ("baseline", "full", "no_dual_alignment", "no_constructor")


class EvalError(ValueError):
    pass


def hr_at_k(ranked: RankedResult, k: int) -> float:
    return 1.0 if ranked.target_rank <= k else 0.0


def ndcg_at_k(ranked: RankedResult, k: int) -> float:
    """Single relevant target, so ideal DCG is 1 and gain is rank-discounted."""
    if ranked.target_rank <= k:
        return 1.0 / math.log2(ranked.target_rank + 1)
    return 0.0


@dataclass
class LoopConfig:
    rounds: int = 1
    mask_k: int = 1
    similarity_fn: str = "cosine"
    accept_k: int = 10
    candidate_size: int = 100
    seed: int = 0
    simulator_mode: str = "deterministic"
    # Recompute the fused user vector every round (an ambiguity we default to
    # True); False freezes the round-1 vector for masking and construction.
    refuse_per_round: bool = True

    def fingerprint_dict(self) -> dict:
        return {
            "rounds": self.rounds,
            "mask_k": self.mask_k,
            "similarity_fn": self.similarity_fn,
            "accept_k": self.accept_k,
            "candidate_size": self.candidate_size,
            "seed": self.seed,
            "simulator_mode": self.simulator_mode,
            "refuse_per_round": self.refuse_per_round,
        }


@dataclass
class PipelineComponents:
    catalog: Catalog
    model: SRSModel
    hybrid_table: EmbeddingTable
    backend: ConstructorBackend
    chat = None


@dataclass
class RoundRecord:
    round: int
    input_sequence: list[str]
    masking: MaskingReport | None
    feedback: Feedback | None
    pseudo: PseudoSequence | None
    ranked: RankedResult | None
    accepted: bool
    failed: str | None
    timings: dict[str, float] = field(default_factory=dict)

    def to_dict(self, include_timings: bool = True) -> dict:
        out: dict = {
            "round": self.round,
            "input_sequence": list(self.input_sequence),
            "accepted": self.accepted,
            "failed": self.failed,
        }
        if self.masking is not None:
            out["masking"] = {
                "scores": list(self.masking.scores),
                "masked_item_ids": list(self.masking.masked_item_ids),
                "masked_positions": list(self.masking.masked_positions),
                "retained": list(self.masking.retained),
                "similarity_fn": self.masking.similarity_fn,
            }
        if self.feedback is not None:
            out["feedback"] = {
                "polarity": self.feedback.polarity,
                "disliked": list(self.feedback.disliked) if self.feedback.disliked else None,
                "preferred": list(self.feedback.preferred) if self.feedback.preferred else None,
                "raw_text": self.feedback.raw_text,
            }
        if self.pseudo is not None:
            out["pseudo"] = {
                "items": list(self.pseudo.items),
                "provenance": [list(tag) for tag in self.pseudo.provenance],
                "warnings": list(self.pseudo.warnings),
            }
        if self.ranked is not None:
            out["ranked"] = {
                "target_rank": self.ranked.target_rank,
                "top": [[i, s] for i, s in self.ranked.top(10)],
            }
        if include_timings:
            out["timings"] = dict(self.timings)
        return out


@dataclass
class SessionTrace:
    user_id: str
    config_fingerprint: str
    rounds: list[RoundRecord] = field(default_factory=list)

    def final_ranked(self) -> RankedResult | None:
        for record in reversed(self.rounds):
            if record.ranked is not None:
                return record.ranked
        return None

    def ranked_at(self, round_no: int) -> RankedResult | None:
        """Effective ranking at a round: carry the last completed result forward."""
        ranked = None
        for record in self.rounds:
            if record.round > round_no:
                break
            if record.ranked is not None:
                ranked = record.ranked
        return ranked

    def to_dict(self, include_timings: bool = True) -> dict:
        return {
            "user_id": self.user_id,
            "config_fingerprint": self.config_fingerprint,
            "rounds": [r.to_dict(include_timings) for r in self.rounds],
        }

    def canonical_json(self) -> str:
        """Deterministic byte form: wall-clock timings excluded."""
        return json.dumps(self.to_dict(include_timings=False), sort_keys=True)


@dataclass
class MetricReport:
    hr5: float
    ndcg5: float
    hr10: float
    ndcg10: float
    n_users: int
    per_round: list[dict]
    config_fingerprint: str

    def __post_init__(self):
        if self.hr5 > self.hr10 + 1e-12 or self.ndcg5 > self.ndcg10 + 1e-12:
            raise EvalError("metric monotonicity violated: K=5 exceeds K=10")
        if self.ndcg5 > self.hr5 + 1e-12 or self.ndcg10 > self.hr10 + 1e-12:
            raise EvalError("NDCG@K cannot exceed HR@K for single-target candidates")

    def to_dict(self) -> dict:
        return {
            "hr5": self.hr5,
            "ndcg5": self.ndcg5,
            "hr10": self.hr10,
            "ndcg10": self.ndcg10,
            "n_users": self.n_users,
            "per_round": self.per_round,
            "config_fingerprint": self.config_fingerprint,
        }

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def config_fingerprint(loop: LoopConfig, extra: dict | None = None) -> str:
    payload = {"loop": loop.fingerprint_dict(), "extra": extra or {}}
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def run_cesrec_loop(
    triple: SplitTriple,
    components: PipelineComponents,
    config: LoopConfig,
    candidate_set: CandidateSet | None = None,
    enable_mask: bool = True,
    enable_construct: bool = True,
) -> SessionTrace:
    """Run one user's session: baseline ranking plus feedback-driven rounds."""
    catalog, model = components.catalog, components.model
    target = triple.test_target
    if candidate_set is None:
        candidate_set = sample_candidates(
            triple.full_item_ids(),
            catalog,
            target,
            config.candidate_size,
            seed=stable_hash("candidates", config.seed, triple.user_id) % (2**31),
        )

    fingerprint = config_fingerprint(config)
    trace = SessionTrace(user_id=triple.user_id, config_fingerprint=fingerprint)
    sequence = list(triple.train.item_ids)
    target_attrs = catalog.get(target).attributes

    t0 = time.perf_counter()
    ranked = score_candidates(model, sequence, candidate_set)
    accepted = ranked.target_rank <= config.accept_k
    trace.rounds.append(
        RoundRecord(
            round=0,
            input_sequence=list(sequence),
            masking=None,
            feedback=None,
            pseudo=None,
            ranked=ranked,
            accepted=accepted,
            failed=None,
            timings={"rank": time.perf_counter() - t0},
        )
    )

    frozen_user = None
    from_history = [True] * len(sequence)
    for round_no in range(1, config.rounds + 1):
        if accepted:
            break
        record = RoundRecord(
            round=round_no,
            input_sequence=list(sequence),
            masking=None,
            feedback=None,
            pseudo=None,
            ranked=None,
            accepted=False,
            failed=None,
        )
        trace.rounds.append(record)
        try:
            if not config.refuse_per_round and frozen_user is None:
                from .alignment import fuse_user

                frozen_user = fuse_user(components.hybrid_table.vectors(sequence))

            t0 = time.perf_counter()
            k_eff = min(config.mask_k, len(sequence) - 1) if enable_mask else 0
            # Only items surviving from the raw history are outlier candidates;
            # feedback-driven replacements already encode current preferences.
            maskable = [i for i, flag in enumerate(from_history) if flag]
            masking = detect_and_mask(
                sequence,
                components.hybrid_table,
                k_eff,
                config.similarity_fn,
                user_vector=frozen_user,
                maskable=maskable,
            )
            record.timings["mask"] = time.perf_counter() - t0
            record.masking = masking
            masked_positions = set(masking.masked_positions)
            from_history = [
                flag for i, flag in enumerate(from_history) if i not in masked_positions
            ]
            working = list(masking.retained)

            t0 = time.perf_counter()
            rec_item_id = ranked.ranking[0][0]
            fb = simulate_feedback(
                catalog.get(rec_item_id),
                target_attrs,
                mode=config.simulator_mode,
                schema=catalog.attribute_schema,
            )
            record.timings["feedback"] = time.perf_counter() - t0
            record.feedback = fb

            t0 = time.perf_counter()
            if enable_construct:
                from .constructor import construct_pseudo

                pseudo = construct_pseudo(
                    working, fb, components.backend, catalog, components.hybrid_table, round_no
                )
            else:
                pseudo = PseudoSequence(
                    items=tuple(working),
                    provenance=tuple(("kept",) for _ in working),
                    round=round_no,
                )
            record.timings["construct"] = time.perf_counter() - t0
            record.pseudo = pseudo
            for position, _old, _new in pseudo.replacements():
                from_history[position] = False

            t0 = time.perf_counter()
            sequence = list(pseudo.items)
            ranked = score_candidates(model, sequence, candidate_set)
            record.timings["rank"] = time.perf_counter() - t0
            record.ranked = ranked
            accepted = ranked.target_rank <= config.accept_k
            record.accepted = accepted
        except Exception as err:  # noqa: BLE001 - stage failures belong in the trace
            record.failed = f"{type(err).__name__}: {err}"
            log.warning("round %d failed for user %s: %s", round_no, triple.user_id, err)
            break
    return trace


def aggregate_traces(
    traces: Sequence[SessionTrace], rounds: int, fingerprint: str
) -> MetricReport:
    """Per-round carry-forward metrics plus cumulative-best columns."""
    if not traces:
        raise EvalError("no traces to aggregate")
    per_round = []
    for r in range(rounds + 1):
        row = {"round": r}
        vals = {"hr5": [], "ndcg5": [], "hr10": [], "ndcg10": []}
        best = {"hr5": [], "ndcg5": [], "hr10": [], "ndcg10": []}
        for trace in traces:
            ranked = trace.ranked_at(r)
            if ranked is None:
                continue
            vals["hr5"].append(hr_at_k(ranked, 5))
            vals["ndcg5"].append(ndcg_at_k(ranked, 5))
            vals["hr10"].append(hr_at_k(ranked, 10))
            vals["ndcg10"].append(ndcg_at_k(ranked, 10))
            ranks = [
                rec.ranked.target_rank
                for rec in trace.rounds
                if rec.round <= r and rec.ranked is not None
            ]
            best_rank = min(ranks)
            best["hr5"].append(1.0 if best_rank <= 5 else 0.0)
            best["ndcg5"].append(1.0 / math.log2(best_rank + 1) if best_rank <= 5 else 0.0)
            best["hr10"].append(1.0 if best_rank <= 10 else 0.0)
            best["ndcg10"].append(1.0 / math.log2(best_rank + 1) if best_rank <= 10 else 0.0)
        for key, series in vals.items():
            row[key] = float(np.mean(series)) if series else 0.0
        for key, series in best.items():
            row[f"best_{key}"] = float(np.mean(series)) if series else 0.0
        per_round.append(row)

    final = per_round[-1]
    return MetricReport(
        hr5=final["hr5"],
        ndcg5=final["ndcg5"],
        hr10=final["hr10"],
        ndcg10=final["ndcg10"],
        n_users=len(traces),
        per_round=per_round,
        config_fingerprint=fingerprint,
    )


def run_experiment(
    triples: Sequence[SplitTriple],
    components: PipelineComponents,
    config: LoopConfig,
    enable_mask: bool = True,
    enable_construct: bool = True,
) -> tuple[MetricReport, list[SessionTrace]]:
    traces = [
        run_cesrec_loop(
            triple,
            components,
            config,
            enable_mask=enable_mask,
            enable_construct=enable_construct,
        )
        for triple in triples
    ]
    report = aggregate_traces(traces, config.rounds, config_fingerprint(config))
    return report, traces


def run_table(
    triples: Sequence[SplitTriple],
    components: PipelineComponents,
    config: LoopConfig,
    variants: Sequence[str] = VARIANTS,
) -> dict[str, MetricReport]:
    """Ablation table: baseline, full, masking-only, construction-only."""
    reports: dict[str, MetricReport] = {}
    for variant in variants:
        if variant not in VARIANTS:
            raise EvalError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
        cfg = LoopConfig(**{**config.fingerprint_dict()})
        if variant == "baseline":
            cfg.rounds = 0
            report, _ = run_experiment(triples, components, cfg)
        elif variant == "full":
            report, _ = run_experiment(triples, components, cfg)
        elif variant == "no_dual_alignment":
            report, _ = run_experiment(triples, components, cfg, enable_mask=False)
        else:  # no_constructor
            report, _ = run_experiment(triples, components, cfg, enable_construct=False)
        reports[variant] = report
    return reports


def render_table(reports: dict[str, MetricReport], dataset_name: str = "dataset") -> str:
    """Text table in the familiar rows-by-metrics layout."""
    header = f"{'Method':<24} {'HR@5':>8} {'NDCG@5':>8} {'HR@10':>8} {'NDCG@10':>8}"
    lines = [f"[{dataset_name}]", header, "-" * len(header)]
    label = {
        "full": "+CESRec (full)",
        "no_dual_alignment": "+CESRec w/o d.a.",
        "no_constructor": "+CESRec w/o c.",
        "baseline": "SRS baseline",
    }
    for variant in ("full", "no_dual_alignment", "no_constructor", "baseline"):
        if variant not in reports:
            continue
        r = reports[variant]
        lines.append(
            f"{label[variant]:<24} {r.hr5:>8.4f} {r.ndcg5:>8.4f} {r.hr10:>8.4f} {r.ndcg10:>8.4f}"
        )
    return "\n".join(lines)


def run_sweeps(
    triples: Sequence[SplitTriple],
    components: PipelineComponents,
    config: LoopConfig,
    rounds_grid: Sequence[int] = (1, 2, 3, 4, 5),
    mask_grid: Sequence[int] = (0, 1, 2, 3, 4, 5),
    length_bins: Sequence[tuple[int, int]] = ((0, 10), (10, 30), (30, 10**9)),
) -> dict[str, list[dict]]:
    """Grid reports for feedback rounds, mask counts, and history-length bins."""
    sweeps: dict[str, list[dict]] = {"rounds": [], "mask_k": [], "length_bins": []}
    for rounds in rounds_grid:
        cfg = LoopConfig(**{**config.fingerprint_dict(), "rounds": rounds})
        report, _ = run_experiment(triples, components, cfg)
        sweeps["rounds"].append({"rounds": rounds, **_metric_row(report)})
    for k in mask_grid:
        cfg = LoopConfig(**{**config.fingerprint_dict(), "mask_k": k})
        report, _ = run_experiment(triples, components, cfg)
        sweeps["mask_k"].append({"mask_k": k, **_metric_row(report)})
    for lo, hi in length_bins:
        subset = [t for t in triples if lo <= len(t.train) < hi]
        if not subset:
            sweeps["length_bins"].append({"bin": f"[{lo},{hi})", "n_users": 0})
            continue
        report, _ = run_experiment(subset, components, config)
        sweeps["length_bins"].append({"bin": f"[{lo},{hi})", **_metric_row(report)})
    return sweeps


def _metric_row(report: MetricReport) -> dict:
    return {
        "hr5": report.hr5,
        "ndcg5": report.ndcg5,
        "hr10": report.hr10,
        "ndcg10": report.ndcg10,
        "n_users": report.n_users,
    }


def sweep_csv(sweeps: dict[str, list[dict]]) -> str:
    """Plot-ready flat CSV across all sweep grids."""
    lines = ["sweep,param,hr5,ndcg5,hr10,ndcg10,n_users"]
    for name, rows in sweeps.items():
        for row in rows:
            param = row.get("rounds", row.get("mask_k", row.get("bin", "")))
            lines.append(
                f"{name},{param},{row.get('hr5', '')},{row.get('ndcg5', '')},"
                f"{row.get('hr10', '')},{row.get('ndcg10', '')},{row.get('n_users', 0)}"
            )
    return "\n".join(lines) + "\n"


GENRE_NAMES = (
    "horror", "comedy", "drama", "action", "romance",
    "thriller", "animation", "documentary", "western", "musical",
)


def make_preference_shift_dataset(
    n_users: int = 1000,
    n_genres: int = 10,
    items_per_genre: int = 30,
    history_len: int = 10,
    outlier_rate: float = 1.0,
    seed: int = 0,
) -> tuple[Catalog, list[SplitTriple]]:
    """Synthetic scenario: genre-coherent histories, test target from another genre.

    Train prefixes stay within one genre so the recommender learns within-genre
    transitions; the held-out test item comes from a different genre, so only
    feedback-driven rewriting can surface it. ``outlier_rate`` controls how
    many users carry one off-genre noise item for the masker to find.
    """
    if n_genres > len(GENRE_NAMES):
        raise EvalError(f"at most {len(GENRE_NAMES)} genres supported")
    rng = np.random.default_rng(seed)
    genres = GENRE_NAMES[:n_genres]
    items = []
    by_genre: dict[str, list[str]] = {g: [] for g in genres}
    for gi, genre in enumerate(genres):
        for mi in range(items_per_genre):
            item_id = f"{genre[:4]}{gi:02d}-{mi:03d}"
            items.append(Item(item_id, f"{genre.title()} Feature {gi * items_per_genre + mi}", {"genre": (genre,)}))
            by_genre[genre].append(item_id)
    catalog = Catalog(items, ("genre",))

    triples = []
    for u in range(n_users):
        home = genres[int(rng.integers(0, n_genres))]
        away = genres[int((genres.index(home) + 1 + rng.integers(0, n_genres - 1)) % n_genres)]
        history = [
            by_genre[home][i]
            for i in rng.choice(items_per_genre, size=history_len + 1, replace=False)
        ]
        test_target = by_genre[away][int(rng.integers(0, items_per_genre))]
        ids = history + [test_target]
        if rng.random() < outlier_rate:
            noise_genre = genres[int((genres.index(away) + 1 + rng.integers(0, n_genres - 2))) % n_genres]
            if noise_genre in (home, away):
                noise_genre = genres[(genres.index(home) + 2) % n_genres]
            noise_item = by_genre[noise_genre][int(rng.integers(0, items_per_genre))]
            slot = int(rng.integers(1, history_len - 1))
            ids[slot] = noise_item
        events = tuple((item, 1_000_000 + 60 * i) for i, item in enumerate(ids))
        seq = InteractionSequence(f"user{u:05d}", events)
        triples.append(
            SplitTriple(train=seq.prefix(len(ids) - 2), valid_target=ids[-2], test_target=ids[-1])
        )
    return catalog, triples


def save_reports(reports: dict[str, MetricReport], out_dir: str | Path, dataset_name: str) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    payload = {name: report.to_dict() for name, report in reports.items()}
    (out / "reports.json").write_text(json.dumps(payload, indent=2, sort_keys=True))
    (out / "table.txt").write_text(render_table(reports, dataset_name) + "\n")


def save_traces(traces: Sequence[SessionTrace], out_dir: str | Path) -> None:
    """One structured record per session round."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "traces.jsonl").open("w", encoding="utf-8") as fh:
        for trace in traces:
            for record in trace.rounds:
                row = {
                    "user_id": trace.user_id,
                    "config_fingerprint": trace.config_fingerprint,
                    **record.to_dict(),
                }
                fh.write(json.dumps(row, sort_keys=True) + "\n")
