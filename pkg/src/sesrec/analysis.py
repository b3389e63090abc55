"""Post-hoc analyses: category JS divergence of the selected sub-sequences,
query/item cosine similarity, hyper-parameter sweeps and ablations."""

from __future__ import annotations

import csv
import logging
import math
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import torch

from .config import TrainConfig
from .data import Corpus, DatasetSplit, Example, leave_one_out_split
from .evaluator import METRIC_NAMES
from .trainer import make_collator, holdout_metrics, train

logger = logging.getLogger(__name__)

THRESHOLD_STRATEGIES = ("1/16", "1/8", "median", "mean")


class MissingCategoryError(ValueError):
    pass


def category_distribution(categories) -> dict[int, float]:
    counts = Counter(int(c) for c in categories if c)
    total = sum(counts.values())
    if total == 0:
        raise MissingCategoryError("no category information")
    return {c: n / total for c, n in counts.items()}


def js_divergence(p: dict[int, float], q: dict[int, float]) -> float:
    """Jensen-Shannon divergence in bits; missing categories count as 0."""
    support = sorted(set(p) | set(q))
    P = np.array([p.get(c, 0.0) for c in support], dtype=np.float64)
    Q = np.array([q.get(c, 0.0) for c in support], dtype=np.float64)
    M = 0.5 * (P + Q)

    def kl(a, b):
        nz = a > 0
        return float(np.sum(a[nz] * np.log2(a[nz] / b[nz])))

    return min(max(0.5 * kl(P, M) + 0.5 * kl(Q, M), 0.0), 1.0)


@dataclass
class DisentanglementReport:
    rows: list[dict]
    skipped: int = 0
    dumps: list[dict] = field(default_factory=list)

    def means(self) -> tuple[float, float]:
        sim = float(np.mean([r["js_similar"] for r in self.rows]))
        dis = float(np.mean([r["js_dissimilar"] for r in self.rows]))
        return sim, dis

    def strict_fraction(self) -> float:
        return float(np.mean([r["js_similar"] < r["js_dissimilar"] for r in self.rows]))

    def write_csv(self, path):
        _write_rows(path, self.rows, ["user", "js_similar", "js_dissimilar"])


@torch.no_grad()
def _forward_examples(model, examples: list[Example], config: TrainConfig, batch_size: int = 256):
    collator = make_collator(config)
    model.eval()
    for start in range(0, len(examples), batch_size):
        chunk = examples[start:start + batch_size]
        cands = np.array([[ex.target] for ex in chunk], dtype=np.int64)
        batch = collator(chunk, cands)
        yield chunk, batch, model(batch)


def disentanglement_report(model, corpus: Corpus, examples: list[Example],
                           config: TrainConfig) -> DisentanglementReport:
    """Per-user JS divergence between search and rec category distributions,
    for the similar (P) and dissimilar (N) selections."""
    if not corpus.item_category:
        raise MissingCategoryError("corpus carries no item categories")
    lut = torch.from_numpy(corpus.category_lookup())
    rows, dumps, skipped = [], [], 0
    for chunk, batch, out in _forward_examples(model, examples, config):
        dis = out.dis
        rec_cat = lut[batch.rec_items]
        click_cat = lut[batch.clicks]  # (B, T_s, C)
        dumps.extend(dis.to_records(batch.users))
        for b, ex in enumerate(chunk):
            try:
                p_r = category_distribution(rec_cat[b][dis.P_r[b]].tolist())
                n_r = category_distribution(rec_cat[b][dis.N_r[b]].tolist())
                p_s = category_distribution(click_cat[b][dis.P_s[b]].flatten().tolist())
                n_s = category_distribution(click_cat[b][dis.N_s[b]].flatten().tolist())
            except MissingCategoryError:
                skipped += 1
                continue
            rows.append({"user": ex.user_id, "js_similar": js_divergence(p_s, p_r),
                         "js_dissimilar": js_divergence(n_s, n_r)})
    if skipped:
        logger.info("disentanglement_report: %d user(s) skipped for missing categories", skipped)
    return DisentanglementReport(rows, skipped, dumps)


def cosine(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    u = np.atleast_2d(u)
    v = np.atleast_2d(v)
    num = (u * v).sum(-1)
    den = np.linalg.norm(u, axis=-1) * np.linalg.norm(v, axis=-1)
    return num / np.maximum(den, 1e-12)


def query_item_pairs(corpus: Corpus, examples: list[Example] | None = None) -> np.ndarray:
    """(query, clicked item) pairs from the examples' prefixes or all histories."""
    pairs = []
    if examples is None:
        sources = [h.search_events for h in corpus.histories.values()]
    else:
        sources = [ex.prefix.search_events for ex in examples]
    for events in sources:
        for s in events:
            pairs.extend((s.query.query_id, i) for i in s.clicked_item_ids)
    return np.array(pairs, dtype=np.int64).reshape(-1, 2)


@torch.no_grad()
def pair_cosines(model, pairs: np.ndarray) -> np.ndarray:
    emb = model.emb
    q = emb.project_queries(emb.embed_query(torch.from_numpy(pairs[:, 0])))
    i = emb.project_items(emb.embed_item(torch.from_numpy(pairs[:, 1])))
    return cosine(q.double().numpy(), i.double().numpy())


def summarize(values: np.ndarray) -> dict[str, float]:
    q1, med, q3 = np.percentile(values, [25, 50, 75])
    return {"mean": float(np.mean(values)), "q1": float(q1), "median": float(med), "q3": float(q3),
            "min": float(np.min(values)), "max": float(np.max(values)), "n": int(len(values))}


def cosine_report(model_with_ali, model_without_ali, corpus: Corpus,
                  examples: list[Example] | None = None) -> dict[str, dict]:
    pairs = query_item_pairs(corpus, examples)
    if len(pairs) == 0:
        raise ValueError("no query-item pairs to compare")
    return {
        "with_ali": summarize(pair_cosines(model_with_ali, pairs)),
        "without_ali": summarize(pair_cosines(model_without_ali, pairs)),
    }


# ---------------------------------------------------------------------------
# sweeps and ablations


def _run(args) -> dict:
    corpus, config, split = args
    result = train(corpus, config, split)
    metrics = holdout_metrics(result, corpus).metrics
    return {**metrics, "best_epoch": result.best_epoch, "config_hash": config.hash()}


def _run_all(corpus: Corpus, configs: list[TrainConfig], split: DatasetSplit | None, parallel: bool):
    split = split or leave_one_out_split(corpus.histories)
    jobs = [(corpus, cfg, split) for cfg in configs]
    if parallel and len(jobs) > 1:
        with ProcessPoolExecutor() as pool:
            return list(pool.map(_run, jobs))
    return [_run(j) for j in jobs]


def _param_updates(param: str, value) -> dict:
    if param in ("alpha", "beta"):
        return {param: float(value)}
    if param == "threshold_strategy":
        return {"threshold": str(value)}
    raise ValueError(f"unknown sweep parameter {param!r}")


def sweep(param: str, values, base_config: TrainConfig, corpus: Corpus, seeds=None,
          split: DatasetSplit | None = None, parallel: bool = False) -> list[dict]:
    """Train/evaluate one model per value (and seed); rows are seed means."""
    seeds = list(seeds) if seeds is not None else [base_config.seed]
    values = list(values)
    configs = [base_config.with_updates(**_param_updates(param, v), seed=s) for v in values for s in seeds]
    results = _run_all(corpus, configs, split, parallel)
    rows = []
    for vi, v in enumerate(values):
        runs = results[vi * len(seeds):(vi + 1) * len(seeds)]
        row = {param: v, **{m: float(np.mean([r[m] for r in runs])) for m in METRIC_NAMES}}
        row["config_hash"] = configs[vi * len(seeds)].hash()
        rows.append(row)
    return rows


ABLATION_STEPS = ("Base", "+L_ali", "+L_con", "+MIE")


def ablation_configs(base_config: TrainConfig) -> dict[str, TrainConfig]:
    """Base drops both auxiliary losses and keeps only the aggregated interest."""
    a, b = base_config.alpha, base_config.beta
    return {
        "Base": base_config.with_updates(alpha=0.0, beta=0.0, use_mie=False),
        "+L_ali": base_config.with_updates(alpha=a, beta=0.0, use_mie=False),
        "+L_con": base_config.with_updates(alpha=a, beta=b, use_mie=False),
        "+MIE": base_config.with_updates(alpha=a, beta=b, use_mie=True),
    }


def ablation(base_config: TrainConfig, corpus: Corpus, seeds=None, split: DatasetSplit | None = None,
             parallel: bool = False) -> list[dict]:
    seeds = list(seeds) if seeds is not None else [base_config.seed]
    steps = ablation_configs(base_config)
    configs = [cfg.with_updates(seed=s) for cfg in steps.values() for s in seeds]
    results = _run_all(corpus, configs, split, parallel)
    rows = []
    for k, name in enumerate(steps):
        runs = results[k * len(seeds):(k + 1) * len(seeds)]
        rows.append({"model": name, **{m: float(np.mean([r[m] for r in runs])) for m in METRIC_NAMES},
                     "per_seed_NDCG@10": [r["NDCG@10"] for r in runs]})
    return rows


def _write_rows(path, rows: list[dict], fieldnames) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(fieldnames), extrasaction="ignore")
        w.writeheader()
        for row in rows:
            w.writerow({k: (f"{v:.6g}" if isinstance(v, float) and math.isfinite(v) else v) for k, v in row.items()})


def write_table(path, rows: list[dict], key: str) -> None:
    _write_rows(path, rows, [key, *METRIC_NAMES])


def render_plot(kind: str, csv_path, out_path) -> None:
    """Draw a histogram (``js``) or a box-plot summary (``cosine``) from a CSV."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with open(csv_path) as fh:
        rows = list(csv.DictReader(fh))
    fig, ax = plt.subplots(figsize=(5, 3.5))
    if kind == "js":
        bins = np.linspace(0, 1, 21)
        ax.hist([float(r["js_similar"]) for r in rows], bins=bins, alpha=0.6, color="tab:red", label="similar")
        ax.hist([float(r["js_dissimilar"]) for r in rows], bins=bins, alpha=0.6, color="tab:blue",
                label="dissimilar")
        ax.set_xlabel("JS divergence")
        ax.set_ylabel("users")
        ax.legend()
    elif kind == "cosine":
        names = [r["model"] for r in rows]
        stats = [{"label": r["model"], "med": float(r["median"]), "q1": float(r["q1"]), "q3": float(r["q3"]),
                  "whislo": float(r["min"]), "whishi": float(r["max"]), "mean": float(r["mean"]),
                  "fliers": []} for r in rows]
        ax.bxp(stats, showmeans=True, meanprops={"marker": "s"})
        ax.set_ylabel("cosine similarity")
        ax.set_xticks(range(1, len(names) + 1), names)
    else:
        raise ValueError(f"unknown plot kind {kind!r}")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
