"""Self-attention next-item recommender: training, ranking, embedding export.

SASRec-style causal transformer over item sequences, trained with binary
cross-entropy on (next item, sampled negative) pairs. The learned item
embedding table doubles as the collaborative space for alignment.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .catalog import Catalog, CandidateSet, SplitTriple
from .semantic import EmbeddingTable

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "cesrec.srs"
CHECKPOINT_VERSION = 1


class SRSError(ValueError):
    pass


@dataclass
class SRSConfig:
    embed_dim: int = 64
    num_blocks: int = 2
    num_heads: int = 1
    max_seq_len: int = 50
    dropout: float = 0.2
    lr: float = 0.001
    batch_size: int = 256
    epochs: int = 200
    seed: int = 0
    # Optional early stop on validation NDCG@10; None follows the fixed-epoch run.
    early_stop_patience: int | None = None

    def __post_init__(self):
        if self.embed_dim <= 0 or self.embed_dim % self.num_heads != 0:
            raise SRSError("embed_dim must be positive and divisible by num_heads")
        if self.max_seq_len < 2:
            raise SRSError("max_seq_len must be >= 2")
        if not 0.0 <= self.dropout < 1.0:
            raise SRSError("dropout must be in [0, 1)")
        if min(self.num_blocks, self.num_heads, self.batch_size, self.epochs + 1) <= 0 or self.lr <= 0:
            raise SRSError("num_blocks, num_heads, batch_size, lr must be positive; epochs >= 0")

    def to_dict(self) -> dict:
        return {
            "embed_dim": self.embed_dim,
            "num_blocks": self.num_blocks,
            "num_heads": self.num_heads,
            "max_seq_len": self.max_seq_len,
            "dropout": self.dropout,
            "lr": self.lr,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "seed": self.seed,
        }


class _PointwiseFFN(nn.Module):
    def __init__(self, dim: int, dropout: float):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(dim, dim),
            nn.ReLU(),
            nn.Dropout(dropout),
            nn.Linear(dim, dim),
            nn.Dropout(dropout),
        )

    def forward(self, x):
        return self.net(x)


class _SASRecNet(nn.Module):
    """Causal self-attention encoder over left-padded item index sequences."""

    def __init__(self, num_items: int, config: SRSConfig):
        super().__init__()
        self.config = config
        dim = config.embed_dim
        self.item_emb = nn.Embedding(num_items + 1, dim, padding_idx=0)
        self.pos_emb = nn.Embedding(config.max_seq_len, dim)
        self.emb_dropout = nn.Dropout(config.dropout)
        self.attn_norms = nn.ModuleList()
        self.attns = nn.ModuleList()
        self.ffn_norms = nn.ModuleList()
        self.ffns = nn.ModuleList()
        for _ in range(config.num_blocks):
            self.attn_norms.append(nn.LayerNorm(dim, eps=1e-8))
            self.attns.append(
                nn.MultiheadAttention(dim, config.num_heads, dropout=config.dropout, batch_first=True)
            )
            self.ffn_norms.append(nn.LayerNorm(dim, eps=1e-8))
            self.ffns.append(_PointwiseFFN(dim, config.dropout))
        self.last_norm = nn.LayerNorm(dim, eps=1e-8)

    def forward(self, seqs: torch.Tensor) -> torch.Tensor:
        """(B, L) padded item indexes -> (B, L, dim) position representations."""
        pad_mask = seqs == 0
        x = self.item_emb(seqs) * math.sqrt(self.config.embed_dim)
        positions = torch.arange(seqs.shape[1], device=seqs.device)
        x = x + self.pos_emb(positions)[None, :, :]
        x = self.emb_dropout(x)
        x = x.masked_fill(pad_mask[:, :, None], 0.0)

        causal = torch.triu(
            torch.ones(seqs.shape[1], seqs.shape[1], dtype=torch.bool, device=seqs.device),
            diagonal=1,
        )
        for norm, attn, ffn_norm, ffn in zip(self.attn_norms, self.attns, self.ffn_norms, self.ffns):
            q = norm(x)
            attn_out, _ = attn(q, x, x, attn_mask=causal, key_padding_mask=pad_mask, need_weights=False)
            x = x + attn_out
            x = x + ffn(ffn_norm(x))
            x = x.masked_fill(pad_mask[:, :, None], 0.0)
        return self.last_norm(x)


@dataclass
class SRSModel:
    """Trained recommender plus the item-id <-> index mapping it was built on."""

    net: _SASRecNet
    config: SRSConfig
    index_to_item: list[str]  # position 0 is the padding slot
    item_to_index: dict[str, int]
    loss_history: list[float] = field(default_factory=list)
    epochs_trained: int = 0

    @property
    def num_items(self) -> int:
        return len(self.index_to_item) - 1

    def encode(self, item_ids: Sequence[str]) -> list[int]:
        unknown = [i for i in item_ids if i not in self.item_to_index]
        if unknown:
            raise SRSError(f"sequence contains unknown item ids: {unknown}")
        return [self.item_to_index[i] for i in item_ids]

    def _padded(self, item_ids: Sequence[str]) -> torch.Tensor:
        idx = self.encode(item_ids)[-self.config.max_seq_len :]
        if not idx:
            raise SRSError("sequence is empty after truncation")
        pad = [0] * (self.config.max_seq_len - len(idx))
        return torch.tensor([pad + idx], dtype=torch.long)

    @torch.no_grad()
    def final_representation(self, item_ids: Sequence[str]) -> torch.Tensor:
        self.net.eval()
        return self.net(self._padded(item_ids))[0, -1]

    @torch.no_grad()
    def position_representations(self, item_ids: Sequence[str]) -> np.ndarray:
        self.net.eval()
        return self.net(self._padded(item_ids))[0].numpy()

    def training_loss(
        self, inputs: torch.Tensor, positives: torch.Tensor, negatives: torch.Tensor
    ) -> torch.Tensor:
        """BCE over positive/negative logits at every non-pad position."""
        feats = self.net(inputs)
        pos_logits = (feats * self.net.item_emb(positives)).sum(-1)
        neg_logits = (feats * self.net.item_emb(negatives)).sum(-1)
        mask = positives != 0
        bce = nn.functional.binary_cross_entropy_with_logits
        pos_loss = bce(pos_logits[mask], torch.ones_like(pos_logits[mask]))
        neg_loss = bce(neg_logits[mask], torch.zeros_like(neg_logits[mask]))
        return pos_loss + neg_loss

    def save(self, path: str | Path) -> None:
        arrays = {k: v.detach().cpu().numpy() for k, v in self.net.state_dict().items()}
        meta = {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "config": self.config.to_dict(),
            "index_to_item": self.index_to_item,
            "loss_history": self.loss_history,
            "epochs_trained": self.epochs_trained,
        }
        arrays["meta"] = np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)
        np.savez(path, **arrays)

    @classmethod
    def load(cls, path: str | Path) -> "SRSModel":
        with np.load(path) as data:
            meta = json.loads(bytes(data["meta"].tobytes()).decode("utf-8"))
            if meta.get("format") != CHECKPOINT_FORMAT or meta.get("version") != CHECKPOINT_VERSION:
                raise SRSError(f"{path}: not a version-{CHECKPOINT_VERSION} model checkpoint")
            config = SRSConfig(**meta["config"])
            index_to_item = list(meta["index_to_item"])
            net = _SASRecNet(len(index_to_item) - 1, config)
            state = {k: torch.from_numpy(np.array(data[k])) for k in data.files if k != "meta"}
            net.load_state_dict(state)
            model = cls(
                net=net,
                config=config,
                index_to_item=index_to_item,
                item_to_index={item: i for i, item in enumerate(index_to_item) if i > 0},
                loss_history=list(meta["loss_history"]),
                epochs_trained=meta["epochs_trained"],
            )
        return model


@dataclass(frozen=True)
class RankedResult:
    """Candidates sorted by score (ties by ascending item_id) plus the target's rank."""

    ranking: tuple[tuple[str, float], ...]
    target_rank: int

    @property
    def target(self) -> str:
        return self.ranking[self.target_rank - 1][0]

    def top(self, k: int) -> list[tuple[str, float]]:
        return list(self.ranking[:k])


def build_model(catalog: Catalog, config: SRSConfig) -> SRSModel:
    """Seeded, untrained model over the catalog's item set."""
    torch.manual_seed(config.seed)
    index_to_item = ["<pad>"] + sorted(catalog.item_ids)
    net = _SASRecNet(len(index_to_item) - 1, config)
    with torch.no_grad():
        net.item_emb.weight[0].zero_()
    return SRSModel(
        net=net,
        config=config,
        index_to_item=index_to_item,
        item_to_index={item: i for i, item in enumerate(index_to_item) if i > 0},
    )


def _training_arrays(
    triples: Sequence[SplitTriple], model: SRSModel
) -> tuple[np.ndarray, np.ndarray, list[set[int]]]:
    """Left-padded (input, positive) index arrays plus per-user history sets."""
    L = model.config.max_seq_len
    inputs, positives, histories = [], [], []
    for triple in triples:
        idx = model.encode(triple.train.item_ids)
        if len(idx) < 2:
            continue
        x = idx[:-1][-L:]
        y = idx[1:][-L:]
        pad = [0] * (L - len(x))
        inputs.append(pad + x)
        positives.append([0] * (L - len(y)) + y)
        histories.append(set(model.encode(triple.full_item_ids())))
    if not inputs:
        raise SRSError("no training sequences of length >= 2")
    return np.array(inputs, dtype=np.int64), np.array(positives, dtype=np.int64), histories


def _sample_negatives(
    positives: np.ndarray, histories: list[set[int]], num_items: int, rng: np.random.Generator
) -> np.ndarray:
    """One uniform non-history negative per positive position."""
    negatives = np.zeros_like(positives)
    for row in range(positives.shape[0]):
        history = histories[row]
        for col in np.nonzero(positives[row])[0]:
            neg = int(rng.integers(1, num_items + 1))
            while neg in history:
                neg = int(rng.integers(1, num_items + 1))
            negatives[row, col] = neg
    return negatives


def train_srs(
    triples: Sequence[SplitTriple], catalog: Catalog, config: SRSConfig = SRSConfig()
) -> SRSModel:
    """Train the recommender on leave-one-out train prefixes. Seed-deterministic."""
    if not triples:
        raise SRSError("empty training set")
    model = build_model(catalog, config)
    inputs, positives, histories = _training_arrays(triples, model)
    rng = np.random.default_rng(config.seed)
    optimizer = torch.optim.Adam(model.net.parameters(), lr=config.lr, betas=(0.9, 0.98))

    n = inputs.shape[0]
    best_metric, patience_left = -1.0, config.early_stop_patience
    for epoch in range(config.epochs):
        model.net.train()
        order = rng.permutation(n)
        negatives = _sample_negatives(positives, histories, model.num_items, rng)
        epoch_loss, batches = 0.0, 0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            loss = model.training_loss(
                torch.from_numpy(inputs[idx]),
                torch.from_numpy(positives[idx]),
                torch.from_numpy(negatives[idx]),
            )
            if not torch.isfinite(loss):
                raise SRSError(f"training diverged at epoch {epoch}: loss={loss.item()}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            with torch.no_grad():
                model.net.item_emb.weight[0].zero_()  # padding row never learns
            epoch_loss += float(loss.item())
            batches += 1
        model.loss_history.append(epoch_loss / batches)
        model.epochs_trained = epoch + 1

        if config.early_stop_patience is not None:
            metric = _validation_ndcg(model, triples)
            if metric > best_metric:
                best_metric, patience_left = metric, config.early_stop_patience
            else:
                patience_left -= 1
                if patience_left <= 0:
                    log.info("early stop at epoch %d (val NDCG@10 %.4f)", epoch + 1, best_metric)
                    break
    return model


@torch.no_grad()
def _validation_ndcg(model: SRSModel, triples: Sequence[SplitTriple], k: int = 10) -> float:
    model.net.eval()
    total = 0.0
    for triple in triples:
        feats = model.final_representation(triple.train.item_ids)
        scores = model.net.item_emb.weight[1:] @ feats
        target_idx = model.item_to_index[triple.valid_target] - 1
        rank = int((scores > scores[target_idx]).sum().item()) + 1
        if rank <= k:
            total += 1.0 / math.log2(rank + 1)
    return total / len(triples)


def rank_items(model: SRSModel, sequence: Sequence[str], item_ids: Sequence[str]) -> list[tuple[str, float]]:
    """Score items against the sequence's final representation; sort desc, ties by id."""
    feats = model.final_representation(sequence)
    idx = torch.tensor(model.encode(item_ids), dtype=torch.long)
    scores = (model.net.item_emb(idx) @ feats).tolist()
    pairs = sorted(zip(item_ids, scores), key=lambda p: (-p[1], p[0]))
    return [(i, float(s)) for i, s in pairs]


def score_candidates(model: SRSModel, sequence: Sequence[str], candidate_set: CandidateSet) -> RankedResult:
    """Rank the candidate set; the target's 1-based rank feeds HR/NDCG."""
    ranking = rank_items(model, sequence, list(candidate_set.candidates))
    target = candidate_set.target
    target_rank = next(i for i, (item, _) in enumerate(ranking, start=1) if item == target)
    return RankedResult(tuple(ranking), target_rank)


def export_collaborative_embeddings(model: SRSModel) -> EmbeddingTable:
    """Item embedding rows (padding excluded) as the collaborative space."""
    weights = model.net.item_emb.weight.detach().cpu().numpy()
    table = EmbeddingTable("collaborative", model.config.embed_dim, provider="srs")
    for idx, item_id in enumerate(model.index_to_item):
        if idx == 0:
            continue
        table.set(item_id, weights[idx].astype(np.float64))
    return table
