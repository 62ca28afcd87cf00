"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import harness, pipeline
from .corpus import iter_corpus, iter_jsonl, read_examples, write_examples
from .io import atomic_write_text, write_tsv

logger = logging.getLogger("litreview")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _load_classifier(cfg: dict, base: Path) -> pipeline.ReviewClassifier:
    spec = cfg.get("classifier")
    if not spec:
        return pipeline.AllPassClassifier()
    labels_path = base / spec["labels"]
    labeled = [(d["title"], d.get("abstract", ""), d["label"]) for d in iter_jsonl(labels_path)]
    return pipeline.train_standin_classifier(
        labeled, l2=spec.get("l2", 1e-2), threshold=spec.get("threshold", 0.5), seed=spec.get("seed", 0)
    )


def cmd_build_dataset(args) -> int:
    cfg_path = Path(args.config) if args.config else None
    cfg = json.loads(cfg_path.read_text()) if cfg_path else {}
    fconf = pipeline.CandidateFilterConfig(
        required_field=cfg.get("required_field", "Computer Science"),
        title_keywords=tuple(cfg.get("title_keywords", pipeline.DEFAULT_KEYWORDS)),
        require_full_text=cfg.get("require_full_text", True),
    )
    errors: list = []
    records = list(iter_corpus(args.corpus, errors))
    by_id = {r.paper_id: r for r in records}
    candidate_ids = pipeline.extract_candidates(records, fconf)
    classifier = _load_classifier(cfg, cfg_path.parent if cfg_path else Path("."))
    review_ids = pipeline.filter_reviews([by_id[i] for i in candidate_ids], classifier)
    reviews = [pipeline.split_chapters(by_id[i]) for i in review_ids]
    test_ids = tuple(l.strip() for l in Path(args.test_ids).read_text().splitlines() if l.strip()) \
        if args.test_ids else ()
    spec = pipeline.SplitSpec(args.seed, test_ids, cfg.get("train_ratio", 0.95))
    result = pipeline.build_dataset(reviews, by_id.get, spec)

    out = Path(args.out)
    for name, exs in result.split.splits().items():
        write_examples(out / f"{name}.jsonl", exs)
    write_tsv(out / "removals.tsv", ["review_id", "chapter_title", "train_review_id", "ratio"],
              [[r.review_id, r.chapter_title, r.train_review_id, r.ratio] for r in result.removals])
    write_tsv(out / "rejections.tsv", ["review_id", "chapter_title", "reason"],
              [[r.review_id, r.chapter_title, r.reason] for r in result.rejections])
    write_tsv(out / "stats.tsv", pipeline.STATS_HEADER, pipeline.stats_table(result.split))
    report = {
        "records": len(records),
        "malformed_lines": len(errors),
        "candidates": len(candidate_ids),
        "reviews": len(review_ids),
        "chapters": result.n_chapters,
        "rejected_chapters": len(result.rejections),
        "test_removals": len(result.removals),
        "examples": {k: len(v) for k, v in result.split.splits().items()},
        "review_split": dict(sorted(result.review_split.items())),
    }
    atomic_write_text(out / "build_report.json", json.dumps(report, indent=2, sort_keys=True) + "\n")
    print(json.dumps(report, sort_keys=True))
    return 0


def _dataset_files(args) -> dict:
    base = Path(args.dataset_dir)
    return {s: base / f"{s}.jsonl" for s in ("train", "valid", "test")}


def cmd_stats(args) -> int:
    from .corpus import DatasetSplit

    files = _dataset_files(args)
    if not any(p.exists() for p in files.values()):
        raise FileNotFoundError(f"no train/valid/test .jsonl files in {args.dataset_dir}")
    split = DatasetSplit(**{s: read_examples(p) if p.exists() else [] for s, p in files.items()})
    rows = pipeline.stats_table(split)
    if args.out:
        write_tsv(args.out, pipeline.STATS_HEADER, rows)
    else:
        print("\t".join(pipeline.STATS_HEADER))
        for row in rows:
            print("\t".join(f"{v:.6f}" if isinstance(v, float) else str(v) for v in row))
    return 0


def cmd_baseline(args) -> int:
    examples = read_examples(args.dataset)
    preds = harness.extractive_predictions(
        {"lead": "lead", "lexrank": "lexrank", "oracle": "oracle"}[args.method],
        examples, k=args.k, l=args.l, damping=args.damping,
    )
    harness.write_lines(args.out, preds)
    return 0


def _run_config(args) -> harness.RunConfig:
    overrides = dict(train_path=args.train, valid_path=args.valid, system=args.system,
                     epochs=args.epochs, seed=args.seed, output_dir=args.out,
                     validation_sample=args.validation_sample)
    if args.config:
        return harness.RunConfig.from_file(args.config, **overrides)
    return harness.RunConfig(**{k: v for k, v in overrides.items() if v is not None})


def cmd_train(args) -> int:
    config = _run_config(args)
    result = harness.run_training(config)
    atomic_write_text(Path(config.output_dir) / "run_config.json",
                      json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
    print(f"best epoch {result.best_epoch}: {result.checkpoint}")
    return 0


def cmd_generate(args) -> int:
    examples = read_examples(args.dataset)
    preds = harness.neural_predictions(args.checkpoint, examples, args.beam_size,
                                       args.length_penalty, args.max_len)
    harness.write_lines(args.out, preds)
    return 0


def cmd_score(args) -> int:
    cands = harness.read_lines(args.candidates)
    refs = harness.read_lines(args.references)
    scores = harness.score_pairs(cands, refs, stem=not args.no_stem)
    report = harness.EvalReport("score", "-", scores)
    if args.out:
        report.write(args.out)
    else:
        print("\t".join(report.HEADER))
        for row in report.rows():
            print("\t".join(f"{v:.6f}" if isinstance(v, float) else str(v) for v in row))
    return 0


def cmd_evaluate(args) -> int:
    examples = read_examples(args.dataset)
    config = harness.RunConfig.from_file(args.config, system=args.system) if args.config \
        else harness.RunConfig(system=args.system)
    if args.k is not None:
        config.baseline["k"] = args.k
    if args.l is not None:
        config.baseline["l"] = args.l
    if args.beam_size is not None:
        config.beam["beam_size"] = args.beam_size
    preds = harness.read_lines(args.predictions) if args.predictions else None
    report = harness.evaluate(args.system, examples, config, args.checkpoint, preds)
    out = args.out or str(Path(harness.default_output_dir()) / f"eval_{args.system}.tsv")
    report.write(out)
    means = report.means()
    print(f"{args.system}\tR1 {100 * means['r1_f']:.2f}\tR2 {100 * means['r2_f']:.2f}\t"
          f"RL {100 * means['rl_f']:.2f}\t-> {out}")
    return 0


def cmd_gradcheck(args) -> int:
    from .model.network import ModelConfig
    from .model.training import grad_check

    cfg = ModelConfig(vocab_size=24, d_model=args.dmodel, n_heads=2, n_enc_layers=2, n_dec_layers=2,
                      ffn_dim=2 * args.dmodel, max_passage_len=16, max_target_len=16)
    report = grad_check(cfg, seed=args.seed, coords_per_class=args.coords)
    for line in report.lines():
        print(line)
    return 0


def cmd_make_synthetic(args) -> int:
    from .synthetic import salience_dataset

    data = salience_dataset(args.n, seed=args.seed)
    n_valid = n_test = max(1, args.n // 20)
    n_train = args.n - n_valid - n_test
    out = Path(args.out)
    write_examples(out / "train.jsonl", data[:n_train])
    write_examples(out / "valid.jsonl", data[n_train:n_train + n_valid])
    write_examples(out / "test.jsonl", data[n_train + n_valid:])
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="litreview", description="Literature-review chapter generation toolkit.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("build-dataset", help="build train/valid/test chapter examples from a corpus")
    s.add_argument("--corpus", required=True)
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--test-ids")
    s.set_defaults(func=cmd_build_dataset)

    s = sub.add_parser("stats", help="dataset statistics as TSV")
    s.add_argument("--dataset-dir", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_stats)

    s = sub.add_parser("baseline", help="run an extractive baseline")
    s.add_argument("--method", choices=("lead", "lexrank", "oracle"), required=True)
    s.add_argument("--k", type=int, default=1)
    s.add_argument("--l", type=int, default=5)
    s.add_argument("--damping", type=float, default=0.85)
    s.add_argument("--dataset", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_baseline)

    s = sub.add_parser("train", help="train FiD or QFiD")
    s.add_argument("--config")
    s.add_argument("--train")
    s.add_argument("--valid")
    s.add_argument("--system", choices=harness.NEURAL)
    s.add_argument("--epochs", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--validation-sample", type=int)
    s.add_argument("--out", help=f"output directory (default ${harness.OUTPUT_DIR_ENV} or ./runs)")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("generate", help="beam-search chapters from a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--dataset", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--beam-size", type=int, default=4)
    s.add_argument("--length-penalty", type=float, default=1.0)
    s.add_argument("--max-len", type=int)
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("score", help="ROUGE-1/2/L for line-aligned candidate/reference files")
    s.add_argument("--candidates", required=True)
    s.add_argument("--references", required=True)
    s.add_argument("--no-stem", action="store_true")
    s.add_argument("--out")
    s.set_defaults(func=cmd_score)

    s = sub.add_parser("evaluate", help="score a system on a dataset file")
    s.add_argument("--system", choices=harness.SYSTEMS, required=True)
    s.add_argument("--dataset", required=True)
    s.add_argument("--predictions")
    s.add_argument("--checkpoint")
    s.add_argument("--config")
    s.add_argument("--k", type=int)
    s.add_argument("--l", type=int)
    s.add_argument("--beam-size", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("gradcheck", help="finite-difference gradient check of a toy model")
    s.add_argument("--dmodel", type=int, default=16)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--coords", type=int, default=200)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("make-synthetic", help="write the synthetic query-salience dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--n", type=int, default=2000)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_make_synthetic)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return 1
    except SystemExit as e:  # --help
        return int(e.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, KeyError, OSError, RuntimeError, FloatingPointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
