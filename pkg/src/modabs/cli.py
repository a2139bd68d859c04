"""Command-line entry point: ``modabs <subcommand> ...``.

Exit codes: 0 success, 1 runtime failure, 2 configuration or validation failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import baselines as bl
from .config import ExperimentConfig, load_config
from .data import (IngestionError, Sample, Thresholds, Vocabulary, derive_thresholds,
                   generate_corpus, load_corpus, preprocess_split, save_corpus,
                   truncate_article)
from .evaluation import comparison_table, evaluate
from .model import ConfigError
from .train import (grid_search, load_checkpoint, predict, save_checkpoint, train)

log = logging.getLogger("modabs")

SPLITS = ("train", "valid", "test")


class UsageError(Exception):
    """Bad input that maps to exit code 2."""


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    return out


# -- corpus access ---------------------------------------------------------


def _load_splits(data_dir, names=SPLITS) -> tuple[Vocabulary, dict[str, list[Sample]]]:
    data_dir = Path(data_dir)
    vocab_path = data_dir / "vocab.txt"
    if not vocab_path.exists():
        raise UsageError(f"corpus not found: {vocab_path} is missing (run gen-data first)")
    vocab = Vocabulary.load(vocab_path)
    splits = {}
    for name in names:
        path = data_dir / f"{name}.jsonl"
        if not path.exists():
            raise UsageError(f"corpus not found: {path}")
        splits[name] = load_corpus(path, vocab)
    return vocab, splits


def _prepared(cfg: ExperimentConfig, data_dir=None):
    """Load the corpus, fix thresholds, and filter every split with them."""
    vocab, splits = _load_splits(data_dir or cfg.data_dir)
    model_cfg = cfg.model_config(len(vocab))
    thresholds = cfg.thresholds
    if thresholds is None:
        if not splits["train"]:
            raise UsageError("cannot derive thresholds: training split is empty")
        t = derive_thresholds(splits["train"], model_cfg.max_aspects)
        thresholds = Thresholds(
            min(t.max_article_tokens, model_cfg.max_source_len),
            min(t.max_summary_tokens, model_cfg.max_summary_len - 1),
            t.max_aspects,
        )
    kept = {name: preprocess_split(s, thresholds)[0] for name, s in splits.items()}
    return vocab, kept, model_cfg, thresholds


# -- subcommands -----------------------------------------------------------


def cmd_gen_data(args) -> None:
    cfg = load_config(args.config)
    corpus = generate_corpus(cfg.corpus)
    out = _out_dir(args.out)
    for name, samples in corpus.splits().items():
        save_corpus(samples, out / f"{name}.jsonl", corpus.vocab)
    corpus.vocab.save(out / "vocab.txt")
    files = [f"{n}.jsonl" for n in SPLITS] + ["vocab.txt"]
    _write_json(out / "manifest.json", {
        "corpus_spec": cfg.corpus.to_dict(),
        "seed": cfg.corpus.seed,
        "counts": {n: len(s) for n, s in corpus.splits().items()},
        "vocab_size": len(corpus.vocab),
        "sha256": {f: _sha256(out / f) for f in files},
    })
    print(f"wrote corpus to {out}")


def cmd_train(args) -> None:
    cfg = load_config(args.config)
    vocab, splits, model_cfg, thresholds = _prepared(cfg, args.data)
    tc = cfg.train_config()
    result = train(splits["train"], splits["valid"], model_cfg, tc)
    out = _out_dir(args.out)
    meta = {"loss_weights": asdict(tc.weights), "seed": tc.seed, "thresholds": asdict(thresholds)}
    save_checkpoint(result.params, model_cfg, result.log, out / "checkpoint.bin", meta)
    (out / "train_log.csv").write_text(result.log.to_csv(), encoding="utf-8")
    _write_json(out / "train_log.json", result.log.to_json())
    _write_json(out / "timing.json", {"seconds_per_epoch": result.log.seconds})
    print(f"best epoch {result.log.best_epoch} ({result.log.stop_reason}); wrote {out}")


def cmd_grid_search(args) -> None:
    cfg = load_config(args.config)
    _, splits, model_cfg, _ = _prepared(cfg, args.data)
    result = grid_search(splits["train"], splits["valid"], model_cfg, cfg.train_config(),
                         rank_by=args.rank_by)
    out = _out_dir(args.out)
    (out / "grid.csv").write_text(result.to_csv(), encoding="utf-8")
    _write_json(out / "grid.json", {"rank_by": result.rank_by, "winner": result.winner,
                                    "rows": result.rows})
    w = result.winner
    print(f"winner: lambda2={w['lambda2']} lambda3={w['lambda3']} {w['limit_kind']}")


def _read_predictions(path: Path, vocab: Vocabulary) -> dict[str, list[list[int]]]:
    preds = {}
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                if not isinstance(rec, dict) or "id" not in rec or "summaries" not in rec:
                    raise ValueError('expected an object with "id" and "summaries"')
                if not isinstance(rec["summaries"], list):
                    raise ValueError('"summaries" must be a list of strings')
                preds[str(rec["id"])] = [vocab.encode(str(s)) for s in rec["summaries"]]
            except (json.JSONDecodeError, ValueError) as exc:
                raise IngestionError(path, lineno, str(exc)) from exc
    return preds


def _write_predictions(path: Path, preds: dict[str, list[list[int]]], vocab: Vocabulary) -> None:
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for sid, summaries in preds.items():
            rec = {"id": sid, "summaries": [vocab.decode(s) for s in summaries]}
            fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")


def cmd_predict(args) -> None:
    ckpt = load_checkpoint(args.checkpoint)
    inp = Path(args.input)
    if not inp.exists():
        raise UsageError(f"input not found: {inp}")
    vocab_path = Path(args.vocab) if args.vocab else inp.parent / "vocab.txt"
    if not vocab_path.exists():
        raise UsageError(f"vocabulary not found: {vocab_path}")
    vocab = Vocabulary.load(vocab_path)
    samples = load_corpus(inp, vocab)
    limit = ckpt.meta.get("thresholds", {}).get("max_article_tokens")
    if limit is not None:
        # same article budget the model was trained under; references are not needed here
        samples = [replace(s, source_sentences=truncate_article(s.source_sentences, limit))
                   for s in samples]
    preds = predict(samples, ckpt.params, ckpt.config, count_rule=args.count_rule)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_predictions(out, preds, vocab)
    print(f"wrote {len(preds)} predictions to {out}")


def cmd_eval(args) -> None:
    cfg = load_config(args.config)
    vocab, splits, model_cfg, _ = _prepared(cfg, args.data)
    test = splits["test"]
    predictions = {}
    for i, path in enumerate(args.checkpoint or []):
        ckpt = load_checkpoint(path, expect=model_cfg)
        seed = ckpt.meta.get("seed", i)
        predictions[str(seed)] = predict(test, ckpt.params, ckpt.config, cfg.eval.count_rule)
    for i, path in enumerate(args.predictions or []):
        p = Path(path)
        if not p.exists():
            raise UsageError(f"predictions not found: {p}")
        predictions[p.stem if len(args.predictions) > 1 else str(i)] = _read_predictions(p, vocab)
    if not predictions:
        raise UsageError("eval needs --checkpoint or --predictions")
    report = evaluate(predictions, {s.id: s.summaries for s in test})
    report.write(args.out)
    agg = report.aggregate
    print(comparison_table({args.name: agg}), end="")


def cmd_baselines(args) -> None:
    cfg = load_config(args.config)
    vocab, splits, model_cfg, thresholds = _prepared(cfg, args.data)
    base = bl.ClusterConfig(max_summary_tokens=thresholds.max_summary_tokens)
    grid = cfg.eval.cluster_grid or bl.DEFAULT_THRESHOLD_GRID
    tuned = bl.tune_cluster(splits["valid"], grid, base)
    out = _out_dir(args.out)
    cluster_preds = {s.id: bl.cluster_baseline(s, tuned.config) for s in splits["test"]}
    _write_predictions(out / "cluster_predictions.jsonl", cluster_preds, vocab)
    clf = bl.count_classifier_baseline(splits["train"], len(vocab), model_cfg.max_aspects)
    diffs = bl.classifier_abs_asp_diff(clf, splits["test"])
    with (out / "classifier_counts.jsonl").open("w", encoding="utf-8", newline="\n") as fh:
        for s in splits["test"]:
            fh.write(json.dumps({"id": s.id, "predicted_count": clf(s.source)}, sort_keys=True) + "\n")
    cluster_report = evaluate({"0": cluster_preds}, {s.id: s.summaries for s in splits["test"]})
    cluster_report.write(out / "cluster_eval")
    _write_json(out / "baselines.json", {
        "cluster": {"distance_threshold": tuned.config.distance_threshold,
                    "tuning_scores": {str(k): v for k, v in tuned.scores.items()},
                    "aggregate": cluster_report.aggregate},
        "classifier": {"abs_asp_diff": {"mean": float(np.mean(diffs)), "std": 0.0},
                       "final_train_loss": clf.loss_history[-1]},
    })
    print(f"cluster threshold {tuned.config.distance_threshold}; wrote {out}")


def cmd_compare(args) -> None:
    systems = {}
    for item in args.reports:
        name, _, path = item.partition("=")
        if not path:
            raise UsageError(f"--reports entries look like name=path, got {item!r}")
        p = Path(path)
        if not p.exists():
            raise UsageError(f"report not found: {p}")
        data = json.loads(p.read_text(encoding="utf-8"))
        if "aggregate" in data:
            systems[name] = data["aggregate"]
        elif "classifier" in data:
            systems[name] = {"abs_asp_diff": data["classifier"]["abs_asp_diff"]}
        else:
            raise UsageError(f"{p}: not an eval report")
    table = comparison_table(systems)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(table, encoding="utf-8")
    print(table, end="")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="modabs", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic corpus")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    for name, func, helptext in (("train", cmd_train, "train one model"),
                                 ("grid-search", cmd_grid_search, "search loss weights")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--data", help="corpus directory (default: config data_dir)")
        if name == "grid-search":
            p.add_argument("--rank-by", choices=("metrics", "total"), default="metrics")
        p.set_defaults(func=func)

    p = sub.add_parser("predict", help="write prediction JSONL for a corpus split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--vocab")
    p.add_argument("--count-rule", choices=("head", "nonempty"), default="head")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="score checkpoints or prediction files on the test split")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", nargs="+")
    p.add_argument("--predictions", nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--data")
    p.add_argument("--name", default="system")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("baselines", help="tune and run the cluster and classifier baselines")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--data")
    p.set_defaults(func=cmd_baselines)

    p = sub.add_parser("compare", help="combine eval reports into one table")
    p.add_argument("--reports", nargs="+", required=True, metavar="NAME=PATH")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (ConfigError, UsageError, IngestionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - the exit-code contract covers everything else
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        if args.verbose:
            raise
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
