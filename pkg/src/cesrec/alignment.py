"""Semantic-to-collaborative alignment and outlier masking.

A two-layer GELU adapter projects semantic item vectors into the
recommender's embedding space, trained by MSE against the collaborative
vectors. Hybrid vectors feed a mean-pooled user representation; the k items
least similar to it are masked out of the sequence.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import erf

from .semantic import EmbeddingTable

log = logging.getLogger(__name__)

ADAPTER_FORMAT = "cesrec.adapter"
ADAPTER_VERSION = 1

SIMILARITY_FNS = ("cosine", "euclidean")


class AlignmentError(ValueError):
    pass


def gelu(x: np.ndarray) -> np.ndarray:
    """Exact Gaussian-error-linear unit: x * Phi(x)."""
    return 0.5 * x * (1.0 + erf(x / math.sqrt(2.0)))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    phi = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    return 0.5 * (1.0 + erf(x / math.sqrt(2.0))) + x * phi


@dataclass
class AdapterParams:
    W1: np.ndarray  # (hidden, d_l)
    b1: np.ndarray  # (hidden,)
    W2: np.ndarray  # (d_r, hidden)
    b2: np.ndarray  # (d_r,)
    seed: int = 0
    epochs_trained: int = 0
    final_loss: float = float("nan")
    loss_curve: list[float] = field(default_factory=list)

    def __post_init__(self):
        hidden, d_l = self.W1.shape
        d_r, hidden2 = self.W2.shape
        if hidden != hidden2 or self.b1.shape != (hidden,) or self.b2.shape != (d_r,):
            raise AlignmentError("adapter parameter shapes are inconsistent")
        for name in ("W1", "b1", "W2", "b2"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise AlignmentError(f"adapter parameter {name} contains non-finite values")

    @property
    def input_dim(self) -> int:
        return self.W1.shape[1]

    @property
    def output_dim(self) -> int:
        return self.W2.shape[0]

    def save(self, path: str | Path) -> None:
        meta = {
            "format": ADAPTER_FORMAT,
            "version": ADAPTER_VERSION,
            "seed": self.seed,
            "epochs_trained": self.epochs_trained,
            "final_loss": self.final_loss,
            "loss_curve": self.loss_curve,
        }
        np.savez(
            path,
            W1=self.W1,
            b1=self.b1,
            W2=self.W2,
            b2=self.b2,
            meta=np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8),
        )

    @classmethod
    def load(cls, path: str | Path) -> "AdapterParams":
        with np.load(path) as data:
            meta = json.loads(bytes(data["meta"].tobytes()).decode("utf-8"))
            if meta.get("format") != ADAPTER_FORMAT or meta.get("version") != ADAPTER_VERSION:
                raise AlignmentError(f"{path}: not a version-{ADAPTER_VERSION} adapter checkpoint")
            return cls(
                W1=data["W1"],
                b1=data["b1"],
                W2=data["W2"],
                b2=data["b2"],
                seed=meta["seed"],
                epochs_trained=meta["epochs_trained"],
                final_loss=meta["final_loss"],
                loss_curve=list(meta["loss_curve"]),
            )


def init_adapter(d_l: int, d_r: int, hidden_dim: int = 256, seed: int = 0) -> AdapterParams:
    """Seeded uniform init scaled by 1/sqrt(fan_in); zero biases."""
    rng = np.random.default_rng(seed)
    s1 = 1.0 / math.sqrt(d_l)
    s2 = 1.0 / math.sqrt(hidden_dim)
    return AdapterParams(
        W1=rng.uniform(-s1, s1, size=(hidden_dim, d_l)),
        b1=np.zeros(hidden_dim),
        W2=rng.uniform(-s2, s2, size=(d_r, hidden_dim)),
        b2=np.zeros(d_r),
        seed=seed,
    )


def apply_adapter(adapter: AdapterParams, semantic_vector: np.ndarray) -> np.ndarray:
    """W2 . GELU(W1 . e + b1) + b2, for a single vector or a batch."""
    x = np.asarray(semantic_vector, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != adapter.input_dim:
        raise AlignmentError(f"input dim {x.shape[1]} != adapter d_l {adapter.input_dim}")
    hidden = gelu(x @ adapter.W1.T + adapter.b1)
    out = hidden @ adapter.W2.T + adapter.b2
    return out[0] if single else out


def alignment_loss_and_grads(
    adapter: AdapterParams, x: np.ndarray, target: np.ndarray
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean per-item squared L2 alignment error and its analytic gradients."""
    n = x.shape[0]
    pre = x @ adapter.W1.T + adapter.b1
    hidden = gelu(pre)
    pred = hidden @ adapter.W2.T + adapter.b2
    resid = pred - target
    loss = float(np.sum(resid * resid) / n)

    d_pred = 2.0 * resid / n
    grads = {
        "W2": d_pred.T @ hidden,
        "b2": d_pred.sum(axis=0),
    }
    d_hidden = d_pred @ adapter.W2
    d_pre = d_hidden * gelu_grad(pre)
    grads["W1"] = d_pre.T @ x
    grads["b1"] = d_pre.sum(axis=0)
    return loss, grads


def alignment_loss(adapter: AdapterParams, x: np.ndarray, target: np.ndarray) -> float:
    pred = apply_adapter(adapter, x)
    resid = pred - target
    return float(np.sum(resid * resid) / x.shape[0])


@dataclass
class AdapterHyper:
    hidden_dim: int = 256
    lr: float = 1e-3
    epochs: int = 200
    batch: int = 128
    seed: int = 0


def train_adapter(
    semantic_table: EmbeddingTable,
    collab_table: EmbeddingTable,
    hyper: AdapterHyper = AdapterHyper(),
) -> AdapterParams:
    """Fit the adapter so hybrid vectors match collaborative ones (Adam, MSE)."""
    sem_keys = set(semantic_table.rows)
    col_keys = set(collab_table.rows)
    if sem_keys != col_keys:
        diff = sorted(sem_keys.symmetric_difference(col_keys))
        raise AlignmentError(f"item sets differ between tables: {diff[:20]}{'...' if len(diff) > 20 else ''}")

    keys = sorted(sem_keys)
    x = semantic_table.vectors(keys)
    y = collab_table.vectors(keys)

    adapter = init_adapter(x.shape[1], y.shape[1], hyper.hidden_dim, hyper.seed)
    adapter.loss_curve = [alignment_loss(adapter, x, y)]

    state = {k: (np.zeros_like(getattr(adapter, k)), np.zeros_like(getattr(adapter, k))) for k in ("W1", "b1", "W2", "b2")}
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    step = 0
    rng = np.random.default_rng(hyper.seed)

    for _ in range(hyper.epochs):
        order = rng.permutation(len(keys))
        for start in range(0, len(keys), hyper.batch):
            idx = order[start : start + hyper.batch]
            _, grads = alignment_loss_and_grads(adapter, x[idx], y[idx])
            step += 1
            for name, grad in grads.items():
                m, v = state[name]
                m[:] = beta1 * m + (1 - beta1) * grad
                v[:] = beta2 * v + (1 - beta2) * grad * grad
                m_hat = m / (1 - beta1**step)
                v_hat = v / (1 - beta2**step)
                param = getattr(adapter, name)
                param -= hyper.lr * m_hat / (np.sqrt(v_hat) + eps)
        epoch_loss = alignment_loss(adapter, x, y)
        if not math.isfinite(epoch_loss):
            raise AlignmentError("adapter training diverged (non-finite loss)")
        adapter.loss_curve.append(epoch_loss)

    adapter.epochs_trained = hyper.epochs
    adapter.final_loss = adapter.loss_curve[-1]
    return adapter


def build_hybrid_table(adapter: AdapterParams, semantic_table: EmbeddingTable) -> EmbeddingTable:
    keys = list(semantic_table.rows)
    hybrid = apply_adapter(adapter, semantic_table.vectors(keys))
    table = EmbeddingTable("hybrid", adapter.output_dim, provider=semantic_table.provider)
    for key, vec in zip(keys, hybrid):
        table.set(key, vec)
    return table


def fuse_user(hybrid_vectors: np.ndarray | Sequence[np.ndarray]) -> np.ndarray:
    """Mean-pool item vectors into the user representation."""
    arr = np.asarray(hybrid_vectors, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise AlignmentError("fuse_user needs at least one vector")
    return arr.mean(axis=0)


def similarity(item_vector: np.ndarray, user_vector: np.ndarray, fn: str = "cosine") -> float:
    """Raw similarity: cosine in [-1, 1], or negated euclidean distance."""
    a = np.asarray(item_vector, dtype=np.float64)
    b = np.asarray(user_vector, dtype=np.float64)
    if a.shape != b.shape:
        raise AlignmentError(f"similarity dims differ: {a.shape} vs {b.shape}")
    if fn == "cosine":
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        if na == 0.0 or nb == 0.0:
            log.warning("cosine similarity with zero-norm vector; returning 0.0")
            return 0.0
        return float(np.dot(a, b) / (na * nb))
    if fn == "euclidean":
        return float(-np.linalg.norm(a - b))
    raise AlignmentError(f"unknown similarity fn {fn!r}; expected one of {SIMILARITY_FNS}")


def normalized_score(raw: float, fn: str = "cosine") -> float:
    """Report-friendly score: cosine mapped to [0, 1], euclidean left as-is."""
    return (raw + 1.0) / 2.0 if fn == "cosine" else raw


@dataclass(frozen=True)
class MaskingReport:
    """Outcome of masking the k least-similar items from a sequence."""

    scores: tuple[float, ...]  # normalized, one per input position
    raw_scores: tuple[float, ...]  # ranking values, one per input position
    masked_item_ids: tuple[str, ...]  # exactly k, lowest similarity first
    masked_positions: tuple[int, ...]
    retained: tuple[str, ...]  # original relative order preserved
    similarity_fn: str


def detect_and_mask(
    sequence: Sequence[str],
    hybrid_table: EmbeddingTable,
    k: int,
    fn: str = "cosine",
    user_vector: np.ndarray | None = None,
    maskable: Sequence[int] | None = None,
) -> MaskingReport:
    """Mask the k items least similar to the mean-pooled user vector.

    The user vector is fused over the full pre-mask sequence (or taken from
    ``user_vector`` when a caller freezes it across rounds). Ties in the
    lowest-k selection break by ascending item_id, then position. When
    ``maskable`` is given, only those positions are eligible for masking:
    the loop uses this to shield feedback-driven replacements, since outliers
    are a property of the historical items.
    """
    items = list(sequence)
    n = len(items)
    if not 0 <= k < n:
        raise AlignmentError(f"k={k} out of range for sequence of length {n}")
    vectors = hybrid_table.vectors(items)
    user = fuse_user(vectors) if user_vector is None else np.asarray(user_vector, dtype=np.float64)
    raw = [similarity(vectors[i], user, fn) for i in range(n)]

    eligible = list(range(n)) if maskable is None else sorted(set(maskable))
    if any(not 0 <= i < n for i in eligible):
        raise AlignmentError("maskable positions out of range")
    k = min(k, len(eligible))
    order = sorted(eligible, key=lambda i: (raw[i], items[i], i))
    masked_positions = sorted(order[:k], key=lambda i: (raw[i], items[i], i))
    masked_set = set(masked_positions)
    return MaskingReport(
        scores=tuple(normalized_score(s, fn) for s in raw),
        raw_scores=tuple(raw),
        masked_item_ids=tuple(items[i] for i in masked_positions),
        masked_positions=tuple(masked_positions),
        retained=tuple(items[i] for i in range(n) if i not in masked_set),
        similarity_fn=fn,
    )
