"""Sampled-candidate ranking metrics (HIT@k, NDCG@k, MRR)."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .batching import Collator
from .data import Example, sample_eval_negatives

KS = (1, 5, 10)
NDCG_KS = (5, 10)
METRIC_NAMES = ("HIT@1", "HIT@5", "HIT@10", "NDCG@5", "NDCG@10", "MRR")


@dataclass
class EvalRanking:
    user: int
    target: int
    negatives: list[int]
    scores: np.ndarray  # scores[0] belongs to the target
    rank: int


def rank_of_target(scores) -> int:
    """1-based rank of ``scores[0]``; equal scores are placed ahead of it."""
    scores = np.asarray(scores)
    return 1 + int(np.sum(scores[1:] >= scores[0]))


def rank(scores, user: int, target: int, negatives) -> EvalRanking:
    cands = [target, *negatives]
    if len(set(cands)) != len(cands):
        raise ValueError("duplicate candidates in ranking")
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != (len(cands),):
        raise ValueError(f"expected {len(cands)} scores, got shape {scores.shape}")
    return EvalRanking(user, target, list(negatives), scores, rank_of_target(scores))


def hit_at_k(r: int, k: int) -> int:
    return int(r <= k)


def ndcg_at_k(r: int, k: int) -> float:
    # a single relevant item, so the ideal DCG is 1
    return 1.0 / math.log2(r + 1) if r <= k else 0.0


def mrr(r: int) -> float:
    return 1.0 / r


def metrics_for_rank(r: int) -> dict[str, float]:
    out = {f"HIT@{k}": float(hit_at_k(r, k)) for k in KS}
    out.update({f"NDCG@{k}": ndcg_at_k(r, k) for k in NDCG_KS})
    out["MRR"] = mrr(r)
    return out


@dataclass
class EvalResult:
    metrics: dict[str, float]
    rows: list[dict] = field(default_factory=list)

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.metrics, fh, indent=2)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["user", "rank", *METRIC_NAMES])
            w.writeheader()
            w.writerows(self.rows)


def aggregate(ranks_by_user) -> EvalResult:
    """Mean metrics over ``(user, rank)`` pairs plus per-user rows."""
    rows = []
    for user, r in ranks_by_user:
        rows.append({"user": int(user), "rank": int(r), **metrics_for_rank(int(r))})
    if not rows:
        raise ValueError("cannot evaluate an empty split")
    metrics = {m: float(np.mean([row[m] for row in rows])) for m in METRIC_NAMES}
    return EvalResult(metrics, rows)


def eval_negatives(examples: list[Example], n_items: int, n: int = 99, seed: int = 0,
                   salt: int = 0) -> np.ndarray:
    """Per-example negatives, reproducible from ``(seed, salt, user)``."""
    out = np.zeros((len(examples), n), dtype=np.int64)
    for b, ex in enumerate(examples):
        rng = np.random.default_rng([seed, salt, ex.user_id])
        out[b] = sample_eval_negatives(ex.history, n_items, n, rng)
    return out


@torch.no_grad()
def score_candidates(model, examples: list[Example], candidates: np.ndarray, collator: Collator,
                     batch_size: int = 256) -> np.ndarray:
    was_training = model.training
    model.eval()
    chunks = []
    for start in range(0, len(examples), batch_size):
        batch = collator(examples[start:start + batch_size], candidates[start:start + batch_size])
        chunks.append(model.score(batch).double().numpy())
    model.train(was_training)
    return np.concatenate(chunks, axis=0)


def evaluate(model, examples: list[Example], negatives: np.ndarray, collator: Collator,
             batch_size: int = 256) -> EvalResult:
    if not examples:
        raise ValueError("cannot evaluate an empty split")
    targets = np.array([ex.target for ex in examples], dtype=np.int64)[:, None]
    candidates = np.concatenate([targets, negatives], axis=1)
    scores = score_candidates(model, examples, candidates, collator, batch_size)
    ranks = [rank_of_target(s) for s in scores]
    return aggregate(zip((ex.user_id for ex in examples), ranks))
