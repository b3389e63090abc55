"""Mini-batch training with Adam, early stopping and checkpoints."""

from __future__ import annotations

import copy
import csv
import io
import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .batching import Batch, Collator
from .config import TrainConfig
from .disentangle import _dist
from .data import Corpus, DatasetSplit, Example, leave_one_out_split, sample_train_negatives
from .evaluator import EvalResult, eval_negatives, evaluate
from .model import SESRec

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
LOG_FIELDS = ("epoch", "L_rec", "L_ali", "L_con", "L_reg", "L", "val_NDCG@10")


class TrainingError(RuntimeError):
    pass


class CheckpointError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamMoments:
    m: list[torch.Tensor]
    v: list[torch.Tensor]
    step: int = 0

    @classmethod
    def zeros_like(cls, params) -> "AdamMoments":
        return cls([torch.zeros_like(p) for p in params], [torch.zeros_like(p) for p in params])


@torch.no_grad()
def adam_step(params, grads, moments: AdamMoments, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> AdamMoments:
    """One bias-corrected Adam update, applied in place."""
    moments.step += 1
    t = moments.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for p, g, m, v in zip(params, grads, moments.m, moments.v):
        if g is None:
            g = torch.zeros_like(p)
        m.mul_(beta1).add_(g, alpha=1.0 - beta1)
        v.mul_(beta2).addcmul_(g, g, value=1.0 - beta2)
        p.sub_(lr * (m / c1) / ((v / c2).sqrt() + eps))
    return moments


# ---------------------------------------------------------------------------
# checkpoints


def _config_from_meta(meta: dict) -> TrainConfig:
    return TrainConfig.from_dict(meta["config"])


def save_checkpoint(path, model: SESRec, config: TrainConfig, moments: AdamMoments | None = None,
                    epoch: int = 0, metric: float = float("nan")) -> Path:
    """Write ``path`` (tensor blob) and ``path.json`` (metadata sidecar)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = {
        "state": model.state_dict(),
        "adam_m": moments.m if moments else [],
        "adam_v": moments.v if moments else [],
        "adam_step": moments.step if moments else 0,
    }
    buf = io.BytesIO()
    torch.save(blob, buf)
    path.write_bytes(buf.getvalue())
    meta = {
        "version": CHECKPOINT_VERSION,
        "config_hash": config.hash(),
        "epoch": epoch,
        "metric": metric,
        "config": config.to_dict(),
        "vocab": model.vocab,
        "shapes": {k: list(v.shape) for k, v in model.state_dict().items()},
    }
    Path(str(path) + ".json").write_text(json.dumps(meta, indent=2))
    return path


def load_checkpoint(path, expected_config: TrainConfig | None = None):
    """Return ``(model, config, moments, meta)``; nothing is built on failure."""
    path = Path(path)
    side = Path(str(path) + ".json")
    try:
        meta = json.loads(side.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable checkpoint metadata {side}: {exc}") from exc
    if meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint version {meta.get('version')} != supported {CHECKPOINT_VERSION}")
    try:
        blob = torch.load(io.BytesIO(path.read_bytes()), weights_only=True)
        state = blob["state"]
    except Exception as exc:  # torch raises several unrelated types on corrupt data
        raise CheckpointError(f"corrupted checkpoint {path}: {exc}") from exc
    config = _config_from_meta(meta)
    if expected_config is not None and expected_config.hash() != meta["config_hash"]:
        warnings.warn(f"config hash {expected_config.hash()} differs from checkpoint {meta['config_hash']}",
                      stacklevel=2)
    model = SESRec(config.model, **meta["vocab"], tau_init=config.tau_init, tau_min=config.tau_min)
    model.emb.query_terms = torch.zeros_like(state["emb.query_terms"])
    try:
        model.load_state_dict(state, strict=True)
    except RuntimeError as exc:
        raise CheckpointError(f"checkpoint does not match its metadata: {exc}") from exc
    moments = AdamMoments(list(blob["adam_m"]), list(blob["adam_v"]), int(blob["adam_step"]))
    return model, config, moments, meta


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainResult:
    model: SESRec
    config: TrainConfig
    history: list[dict]
    best_epoch: int
    best_metric: float
    split: DatasetSplit
    moments: AdamMoments | None = None
    batch_log: list[dict] = field(default_factory=list)


def write_log(history: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
        w.writeheader()
        for row in history:
            w.writerow({k: (f"{row[k]:.10g}" if isinstance(row[k], float) else row[k]) for k in LOG_FIELDS})


class _NegativeSampler:
    def __init__(self, corpus: Corpus, rng: np.random.Generator):
        self.n_items = corpus.n_items
        self.n_queries = corpus.n_queries
        self.rng = rng
        self._seen: dict[int, set[int]] = {}
        # alignment negatives come from ids that occur in the corpus
        self.item_pool = np.array(sorted(corpus.item_category), dtype=np.int64)
        self.query_pool = np.array(sorted(corpus.query_terms), dtype=np.int64)

    def train_candidates(self, examples: list[Example], n_neg: int) -> np.ndarray:
        out = np.zeros((len(examples), 1 + n_neg), dtype=np.int64)
        for b, ex in enumerate(examples):
            seen = self._seen.get(ex.user_id)
            if seen is None:
                seen = self._seen[ex.user_id] = ex.history.interacted_items()
            out[b, 0] = ex.target
            out[b, 1:] = sample_train_negatives(ex.target, self.n_items, n_neg, self.rng, exclude=seen)
        return out

    def align_negatives(self, k: int) -> tuple[torch.Tensor, torch.Tensor]:
        items = self.item_pool[self.rng.integers(0, len(self.item_pool), size=k)]
        queries = self.query_pool[self.rng.integers(0, len(self.query_pool), size=k)]
        return torch.from_numpy(items), torch.from_numpy(queries)


class EarlyStopping:
    """Track the best metric; ``stop`` turns true after ``patience`` epochs without improvement."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = -math.inf
        self.bad_epochs = 0
        self.stop = False

    def update(self, metric: float) -> bool:
        """Record one epoch's metric; return whether it is a new best."""
        if metric > self.best:
            self.best = metric
            self.bad_epochs = 0
            return True
        self.bad_epochs += 1
        self.stop = self.bad_epochs >= self.patience
        return False


def make_collator(config: TrainConfig) -> Collator:
    m = config.model
    return Collator(m.max_rec_len, m.max_search_len, m.max_clicks)


def train(corpus: Corpus, config: TrainConfig, split: DatasetSplit | None = None,
          log_path=None, checkpoint_path=None, log_batches: bool = False) -> TrainResult:
    """Train until validation NDCG@10 stops improving; return the best epoch's model."""
    config.validate()
    split = split or leave_one_out_split(corpus.histories)
    if not split.train:
        raise TrainingError("empty training split")
    torch.manual_seed(config.seed)
    model = SESRec.for_corpus(corpus, config)
    params = [p for p in model.parameters()]
    moments = AdamMoments.zeros_like(params)
    rng = np.random.default_rng(config.seed)
    sampler = _NegativeSampler(corpus, rng)
    collator = make_collator(config)
    val_neg = eval_negatives(split.validation, corpus.n_items, config.eval_negatives, config.seed, salt=1) \
        if split.validation else None

    history: list[dict] = []
    batch_log: list[dict] = []
    stopper = EarlyStopping(config.patience)
    best_epoch, best_state, best_moments = 0, None, None
    for epoch in range(1, config.max_epochs + 1):
        model.train()
        order = rng.permutation(len(split.train))
        sums = dict(L_rec=0.0, L_ali=0.0, L_con=0.0, L_reg=0.0, L=0.0)
        n_batches = 0
        for bi, start in enumerate(range(0, len(order), config.batch_size)):
            examples = [split.train[i] for i in order[start:start + config.batch_size]]
            batch = collator(examples, sampler.train_candidates(examples, config.n_negatives))
            neg_items, neg_queries = sampler.align_negatives(config.n_align_negatives)
            parts, _ = model.losses(batch, config, neg_items, neg_queries)
            comps = dict(L_rec=parts.rec.item(), L_ali=parts.ali.item(), L_con=parts.con.item(),
                         L_reg=config.lam * parts.penalty.item(), L=parts.total.item())
            if not all(math.isfinite(v) for v in comps.values()):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {bi}: {comps}")
            model.zero_grad(set_to_none=True)
            parts.total.backward()
            if config.grad_clip:
                torch.nn.utils.clip_grad_norm_(params, config.grad_clip)
            adam_step(params, [p.grad for p in params], moments, config.learning_rate)
            model.clamp_()
            for k, v in comps.items():
                sums[k] += v
            n_batches += 1
            if log_batches:
                batch_log.append({"epoch": epoch, "batch": bi, **comps})
        row = {"epoch": epoch, **{k: v / n_batches for k, v in sums.items()}}
        if val_neg is not None:
            row["val_NDCG@10"] = evaluate(model, split.validation, val_neg, collator).metrics["NDCG@10"]
        else:
            row["val_NDCG@10"] = -row["L"]
        history.append(row)
        logger.info("epoch %d: %s", epoch, row)
        if stopper.update(row["val_NDCG@10"]):
            best_epoch, best_state = epoch, copy.deepcopy(model.state_dict())
            best_moments = AdamMoments([m.clone() for m in moments.m], [v.clone() for v in moments.v],
                                       moments.step)
        elif stopper.stop:
            break
    model.load_state_dict(best_state)
    if log_path:
        write_log(history, log_path)
    if checkpoint_path:
        save_checkpoint(checkpoint_path, model, config, best_moments, best_epoch, stopper.best)
    return TrainResult(model, config, history, best_epoch, stopper.best, split, best_moments, batch_log)


def holdout_metrics(result: TrainResult, corpus: Corpus) -> EvalResult:
    """Evaluate a trained model on its test split with seed-fixed negatives."""
    cfg = result.config
    neg = eval_negatives(result.split.test, corpus.n_items, cfg.eval_negatives, cfg.seed, salt=2)
    return evaluate(result.model, result.split.test, neg, make_collator(cfg))


# ---------------------------------------------------------------------------
# gradient check


def finite_difference_check(model: SESRec, batch: Batch, config: TrainConfig,
                            neg_items: torch.Tensor | None = None, neg_queries: torch.Tensor | None = None,
                            h: float = 1e-5) -> dict:
    """Compare autograd gradients of the total loss with central differences.

    Runs in float64 on a copy of the model. Returns per-group relative errors
    ``|g_fd - g_an| / max(|g_fd|, |g_an|)`` (L2 norms), their maximum, and
    the triplet hinge arguments so callers can skip kink points.
    """
    model = copy.deepcopy(model).double()
    batch = Batch(**{k: (v.double() if v.is_floating_point() else v) for k, v in vars(batch).items()})

    def loss_value():
        parts, out = model.losses(batch, config, neg_items, neg_queries)
        return parts.total, out

    model.zero_grad(set_to_none=True)
    total, out = loss_value()
    total.backward()
    hinge = []
    for anchor, pos, neg, has_neg in (out.dis.i_r, out.dis.i_s):
        arg = (_dist(anchor, pos) - _dist(anchor, neg) + config.margin).detach()
        hinge.append(arg[has_neg])
    hinge = torch.cat(hinge)
    selection = [t.clone() for t in (out.dis.P_r, out.dis.P_s)]

    report = {}
    selection_changed = False
    with torch.no_grad():
        for name, p in model.named_parameters():
            g_an = p.grad if p.grad is not None else torch.zeros_like(p)
            g_fd = torch.zeros_like(p)
            flat, gflat = p.view(-1), g_fd.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + h
                up, o1 = loss_value()
                flat[i] = orig - h
                down, o2 = loss_value()
                flat[i] = orig
                gflat[i] = (up.item() - down.item()) / (2 * h)
                for o in (o1, o2):
                    if not (torch.equal(o.dis.P_r, selection[0]) and torch.equal(o.dis.P_s, selection[1])):
                        selection_changed = True
            denom = max(g_an.norm().item(), g_fd.norm().item())
            report[name] = 0.0 if denom < 1e-12 else (g_an - g_fd).norm().item() / denom
    return {
        "errors": report,
        "max_error": max(report.values()),
        "hinge_min_abs": float(hinge.abs().min()) if hinge.numel() else math.inf,
        "selection_changed": selection_changed,
    }
