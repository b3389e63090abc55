"""Command-line entry point ``sesrec``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from .analysis import (
    THRESHOLD_STRATEGIES,
    ablation,
    cosine_report,
    disentanglement_report,
    render_plot,
    sweep,
    write_table,
)
from .config import ConfigError, TrainConfig
from .data import Corpus, DataError, leave_one_out_split, write_events
from .evaluator import METRIC_NAMES
from .synthetic import SynthConfig, generate_synthetic
from .trainer import CheckpointError, TrainResult, holdout_metrics, load_checkpoint, train

EXIT_CONFIG = 2
EXIT_DATA = 3

logger = logging.getLogger("sesrec")


def _train_config(args) -> TrainConfig:
    cfg = TrainConfig.from_file(args.config) if args.config else TrainConfig()
    if args.seed is not None:
        cfg = cfg.with_updates(seed=args.seed)
    return cfg


def _emit(payload, fmt: str, out=None, csv_rows=None, fieldnames=None) -> None:
    """Write JSON (``payload``) or CSV (``csv_rows``) to ``out`` or stdout."""
    fh = open(out, "w", newline="") if out else sys.stdout
    try:
        if fmt == "json" or csv_rows is None:
            json.dump(payload, fh, indent=2, default=float)
            fh.write("\n")
        else:
            w = csv.DictWriter(fh, fieldnames=fieldnames or list(csv_rows[0]), extrasaction="ignore")
            w.writeheader()
            w.writerows(csv_rows)
    finally:
        if out:
            fh.close()


def cmd_generate(args) -> None:
    cfg = SynthConfig.from_file(args.config) if args.config else SynthConfig()
    data = generate_synthetic(cfg, seed=args.seed or 0)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    n = write_events(data.events, out / "events.jsonl")
    logger.info("wrote %d events to %s (overlap %.3f)", n, out, data.overlap_fraction())


def _checkpoint_model(path):
    model, config, _, _ = load_checkpoint(path)
    return model, config


def cmd_train(args) -> None:
    cfg = _train_config(args)
    corpus = Corpus.load(args.data)
    log = args.log or f"{args.out}.epochs.csv"
    result = train(corpus, cfg, log_path=log, checkpoint_path=args.out)
    logger.info("best epoch %d, val NDCG@10 %.4f; log %s", result.best_epoch, result.best_metric, log)


def cmd_evaluate(args) -> None:
    model, cfg = _checkpoint_model(args.ckpt)
    corpus = Corpus.load(args.data)
    split = leave_one_out_split(corpus.histories)
    res = holdout_metrics(TrainResult(model, cfg, [], 0, float("nan"), split), corpus)
    fields = ["user", "rank", *METRIC_NAMES]
    _emit(res.metrics, args.format, args.out, res.rows, fields)


def cmd_js(args) -> None:
    model, cfg = _checkpoint_model(args.ckpt)
    corpus = Corpus.load(args.data)
    split = leave_one_out_split(corpus.histories)
    rep = disentanglement_report(model, corpus, split.test, cfg)
    if not rep.rows:
        raise DataError("no user has category information on both sides")
    sim, dis = rep.means()
    summary = {"js_similar_mean": sim, "js_dissimilar_mean": dis, "strict_fraction": rep.strict_fraction(),
               "users": len(rep.rows), "skipped": rep.skipped}
    _emit(summary, args.format, args.out, rep.rows, ["user", "js_similar", "js_dissimilar"])


def cmd_cosine(args) -> None:
    with_ali, _ = _checkpoint_model(args.ckpt)
    without_ali, _ = _checkpoint_model(args.ckpt_no_ali)
    corpus = Corpus.load(args.data)
    split = leave_one_out_split(corpus.histories)
    rep = cosine_report(with_ali, without_ali, corpus, split.test)
    rows = [{"model": k, **v} for k, v in rep.items()]
    _emit(rep, args.format, args.out, rows, ["model", "mean", "q1", "median", "q3", "min", "max", "n"])


def _seeds(args, cfg: TrainConfig):
    return args.seeds if args.seeds else [cfg.seed]


def cmd_sweep(args) -> None:
    cfg = _train_config(args)
    corpus = Corpus.load(args.data)
    values = args.values
    if args.param == "threshold_strategy":
        values = values or list(THRESHOLD_STRATEGIES)
    elif not values:
        raise ConfigError(f"--values is required for {args.param}")
    rows = sweep(args.param, values, cfg, corpus, seeds=_seeds(args, cfg), parallel=args.parallel)
    if args.format == "csv" and args.out:
        write_table(args.out, rows, args.param)
    else:
        _emit(rows, args.format, args.out, rows, [args.param, *METRIC_NAMES, "config_hash"])


def cmd_ablation(args) -> None:
    cfg = _train_config(args)
    corpus = Corpus.load(args.data)
    rows = ablation(cfg, corpus, seeds=_seeds(args, cfg), parallel=args.parallel)
    _emit(rows, args.format, args.out, rows, ["model", *METRIC_NAMES])


def cmd_plot(args) -> None:
    render_plot(args.kind, args.csv, args.out)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the configured seed")
    common.add_argument("--format", choices=("csv", "json"), default="json")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="sesrec", description="Search-enhanced sequential recommendation.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate-data", parents=[common], help="write a synthetic event file")
    g.add_argument("--config", help="synthetic-data config (key = value)")
    g.add_argument("--out", required=True, help="output directory")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", parents=[common], help="train a model and write a checkpoint")
    t.add_argument("--config", help="training config (key = value)")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--log", help="epoch-metric CSV (default: CKPT.epochs.csv)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", parents=[common], help="test-split metrics for a checkpoint")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out")
    e.set_defaults(func=cmd_evaluate)

    a = sub.add_parser("analyze", help="post-hoc analyses")
    asub = a.add_subparsers(dest="analysis", required=True)

    js = asub.add_parser("js", parents=[common], help="per-user JS divergence of selected subsets")
    js.add_argument("--ckpt", required=True)
    js.add_argument("--data", required=True)
    js.add_argument("--out")
    js.set_defaults(func=cmd_js)

    co = asub.add_parser("cosine", parents=[common], help="query/clicked-item cosine, with vs without alignment")
    co.add_argument("--ckpt", required=True, help="model trained with the alignment loss")
    co.add_argument("--ckpt-no-ali", required=True, help="model trained without it")
    co.add_argument("--data", required=True)
    co.add_argument("--out")
    co.set_defaults(func=cmd_cosine)

    sw = asub.add_parser("sweep", parents=[common], help="one run per parameter value")
    sw.add_argument("param", choices=("alpha", "beta", "threshold_strategy"))
    sw.add_argument("--values", nargs="*", default=None)
    sw.add_argument("--config")
    sw.add_argument("--data", required=True)
    sw.add_argument("--seeds", type=int, nargs="*")
    sw.add_argument("--parallel", action="store_true")
    sw.add_argument("--out")
    sw.set_defaults(func=cmd_sweep)

    ab = asub.add_parser("ablation", parents=[common], help="Base, +L_ali, +L_con, +MIE")
    ab.add_argument("--config")
    ab.add_argument("--data", required=True)
    ab.add_argument("--seeds", type=int, nargs="*")
    ab.add_argument("--parallel", action="store_true")
    ab.add_argument("--out")
    ab.set_defaults(func=cmd_ablation)

    pl = asub.add_parser("plot", parents=[common], help="render a JS histogram or cosine box plot")
    pl.add_argument("kind", choices=("js", "cosine"))
    pl.add_argument("--csv", required=True)
    pl.add_argument("--out", required=True)
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, CheckpointError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())
