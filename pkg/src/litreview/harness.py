"""Training with ROUGE-2 checkpoint selection, and evaluation of all systems."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import random
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import torch

from . import baselines, metrics
from .corpus import ChapterExample, read_examples
from .io import atomic_write_text, fingerprint, write_tsv
from .model.checkpoint import load_checkpoint, save_checkpoint
from .model.decoding import generate_beam, greedy_decode
from .model.network import ModelConfig, build_model, collate
from .model.training import AdamWState, train_step
from .model.vocab import build_vocab, encode_example, format_passages

logger = logging.getLogger(__name__)

SYSTEMS = ("lead", "lexrank", "oracle", "fid", "qfid")
NEURAL = ("fid", "qfid")
OUTPUT_DIR_ENV = "LITREVIEW_OUTPUT_DIR"


def default_output_dir() -> str:
    return os.environ.get(OUTPUT_DIR_ENV, "runs")


@dataclass
class RunConfig:
    train_path: str = ""
    valid_path: str = ""
    test_path: str = ""
    system: str = "qfid"
    epochs: int = 10
    seed: int = 0
    validation_sample: int = 1000
    output_dir: str = field(default_factory=default_output_dir)
    vocab_size: int = 8000
    model: dict = field(default_factory=lambda: {
        "d_model": 64, "n_heads": 4, "n_enc_layers": 2, "n_dec_layers": 2, "ffn_dim": 256,
        "max_passage_len": 512, "max_target_len": 256,
    })
    optimizer: dict = field(default_factory=lambda: {
        "lr": 5e-5, "beta1": 0.9, "beta2": 0.999, "weight_decay": 0.01,
        "batch_size": 8, "clip_norm": 1.0, "warmup_steps": 0,
    })
    beam: dict = field(default_factory=lambda: {"beam_size": 4, "length_penalty": 1.0, "max_len": None})
    baseline: dict = field(default_factory=lambda: {"k": 1, "l": 5, "damping": 0.85})

    def __post_init__(self):
        if self.system not in SYSTEMS:
            raise ValueError(f"unknown system {self.system!r}; expected one of {SYSTEMS}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        defaults = RunConfig.__dataclass_fields__
        for name in ("model", "optimizer", "beam", "baseline"):
            merged = dict(defaults[name].default_factory())
            merged.update(getattr(self, name))
            setattr(self, name, merged)

    @classmethod
    def from_file(cls, path, **overrides) -> "RunConfig":
        data = json.loads(Path(path).read_text())
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)

    def fingerprint(self) -> str:
        d = self.to_dict()
        d.pop("output_dir")
        return fingerprint(d)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_rouge2: float
    seconds: float


@dataclass
class TrainingResult:
    checkpoint: Path
    history: list[EpochRecord]
    best_epoch: int


class TrainingAborted(RuntimeError):
    pass


def vocab_texts(examples: Sequence[ChapterExample]) -> list[str]:
    return [t for ex in examples for t in format_passages(ex) + [ex.target]]


def validation_indices(n: int, k: int, seed: int) -> list[int]:
    """One seeded draw without replacement, reused for every epoch."""
    if n <= k:
        return list(range(n))
    return sorted(random.Random(seed).sample(range(n), k))


def _lr_at(step: int, base: float, warmup: int) -> float:
    return base * min(1.0, step / warmup) if warmup > 0 else base


def mean_rouge2(preds: Sequence[str], refs: Sequence[str]) -> float:
    return sum(metrics.rouge_n(p, r, 2, stem=True).f1 for p, r in zip(preds, refs)) / len(refs)


def run_training(config: RunConfig, train: Optional[Sequence[ChapterExample]] = None,
                 valid: Optional[Sequence[ChapterExample]] = None) -> TrainingResult:
    """Train FiD/QFiD, keeping the checkpoint with the best validation ROUGE-2 F1.

    Writes ``best.ckpt`` and ``history.tsv`` under ``config.output_dir``.
    Validation decodes greedily; ties in ROUGE-2 keep the earlier epoch.
    """
    if config.system not in NEURAL:
        raise ValueError(f"run_training needs a neural system, got {config.system!r}")
    train = list(train) if train is not None else read_examples(config.train_path)
    valid = list(valid) if valid is not None else read_examples(config.valid_path)
    if not train or not valid:
        raise ValueError("empty_split")
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(config.seed)

    vocab = build_vocab(vocab_texts(train), config.vocab_size)
    mcfg = ModelConfig(vocab_size=len(vocab), mode=config.system, pad_id=vocab.pad_id,
                       bos_id=vocab.bos_id, eos_id=vocab.eos_id, **config.model)
    model = build_model(mcfg, seed=config.seed)
    enc = lambda ex: encode_example(ex, vocab, mcfg.max_passage_len, mcfg.max_target_len)
    train_enc = [enc(ex) for ex in train]
    val_idx = validation_indices(len(valid), config.validation_sample, config.seed)
    val_enc = [enc(valid[i]) for i in val_idx]
    val_refs = [valid[i].target for i in val_idx]

    opt = config.optimizer
    state = AdamWState.for_model(model)
    rng = random.Random(config.seed)
    history: list[EpochRecord] = []
    best_score, best_epoch = -math.inf, 0
    ckpt = out / "best.ckpt"
    meta = {"fingerprint": config.fingerprint(), "system": config.system}
    try:
        for epoch in range(1, config.epochs + 1):
            t0 = time.perf_counter()
            order = list(range(len(train_enc)))
            rng.shuffle(order)
            losses = []
            for k in range(0, len(order), opt["batch_size"]):
                batch = collate([train_enc[i] for i in order[k:k + opt["batch_size"]]], mcfg)
                lr = _lr_at(state.step + 1, opt["lr"], opt["warmup_steps"])
                loss = train_step(model, batch, state, lr=lr, betas=(opt["beta1"], opt["beta2"]),
                                  weight_decay=opt["weight_decay"], clip_norm=opt["clip_norm"])
                losses.append(loss)
            preds = [greedy_decode(model, e, vocab=vocab).text for e in val_enc]
            score = mean_rouge2(preds, val_refs)
            rec = EpochRecord(epoch, sum(losses) / len(losses), score, time.perf_counter() - t0)
            history.append(rec)
            logger.info("epoch %d loss %.4f val R2 %.4f", epoch, rec.train_loss, score)
            if score > best_score:
                best_score, best_epoch = score, epoch
                save_checkpoint(ckpt, model, vocab, {**meta, "epoch": epoch, "val_rouge2": score})
            write_history(out / "history.tsv", history)
    except FloatingPointError as e:
        write_history(out / "history.tsv", history)
        raise TrainingAborted(f"training aborted: {e}; last good checkpoint kept at {ckpt}") from e
    return TrainingResult(ckpt, history, best_epoch)


def write_history(path, history: Sequence[EpochRecord]) -> None:
    # wall-clock seconds are left out so repeated runs produce identical files
    write_tsv(path, ["epoch", "train_loss", "val_rouge2"],
              [[h.epoch, h.train_loss, h.val_rouge2] for h in history])


def read_history(path) -> list[dict]:
    lines = Path(path).read_text().strip().splitlines()
    header = lines[0].split("\t")
    return [dict(zip(header, line.split("\t"))) for line in lines[1:]]


# -- evaluation ---------------------------------------------------------------


@dataclass
class EvalReport:
    system: str
    config_fingerprint: str
    per_example: list[dict[str, metrics.ScoreTriple]]

    def means(self) -> dict[str, float]:
        n = len(self.per_example)
        return {
            f"{key}_{part}": sum(getattr(s[key], attr) for s in self.per_example) / n
            for key in ("r1", "r2", "rl")
            for part, attr in (("p", "precision"), ("r", "recall"), ("f", "f1"))
        }

    HEADER = ["index", "system", "fingerprint",
              *(f"{k}_{p}" for k in ("r1", "r2", "rl") for p in ("p", "r", "f"))]

    def rows(self) -> list[list]:
        rows = []
        for i, s in enumerate(self.per_example):
            rows.append([i, self.system, self.config_fingerprint,
                         *(v for k in ("r1", "r2", "rl")
                           for v in (s[k].precision, s[k].recall, s[k].f1))])
        m = self.means()
        rows.append(["mean", self.system, self.config_fingerprint, *(m[h] for h in self.HEADER[3:])])
        return rows

    def write(self, path) -> None:
        write_tsv(path, self.HEADER, self.rows())


def score_pairs(candidates: Sequence[str], references: Sequence[str], stem: bool = True):
    if len(candidates) != len(references):
        raise ValueError(f"{len(candidates)} candidates but {len(references)} references")
    return [metrics.rouge_all(c, r, stem) for c, r in zip(candidates, references)]


def extractive_predictions(system: str, examples: Sequence[ChapterExample], k: int = 1, l: int = 5,
                           damping: float = 0.85) -> list[str]:
    if system == "lead":
        return [baselines.lead_k(ex.abstracts, k) for ex in examples]
    if system == "lexrank":
        cfg = baselines.LexRankConfig(damping=damping, l=l)
        return [baselines.lexrank(ex.abstracts, cfg) for ex in examples]
    if system == "oracle":
        return [baselines.ext_oracle(ex.abstracts, ex.target, l) for ex in examples]
    raise ValueError(f"not an extractive system: {system}")


def neural_predictions(checkpoint, examples: Sequence[ChapterExample], beam_size: int = 4,
                       length_penalty: float = 1.0, max_len: Optional[int] = None) -> list[str]:
    model, vocab, _ = load_checkpoint(checkpoint)
    cfg = model.cfg
    out = []
    for ex in examples:
        enc = encode_example(ex, vocab, cfg.max_passage_len, cfg.max_target_len)
        out.append(generate_beam(model, enc, beam_size, max_len, length_penalty, vocab).text)
    return out


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def evaluate(system: str, examples: Sequence[ChapterExample], config: Optional[RunConfig] = None,
             checkpoint=None, predictions: Optional[Sequence[str]] = None) -> EvalReport:
    """Score one system on a split with stemmed ROUGE-1/2/L.

    Predictions are taken from ``predictions`` when given, otherwise
    extracted (baselines) or beam-decoded from ``checkpoint`` (neural).
    """
    if not examples:
        raise ValueError("empty_split")
    config = config or RunConfig(system=system)
    fp: dict = {"system": system}
    if predictions is None:
        if system in NEURAL:
            if checkpoint is None:
                raise ValueError(f"system {system!r} needs a checkpoint")
            predictions = neural_predictions(checkpoint, examples, config.beam["beam_size"],
                                             config.beam["length_penalty"], config.beam["max_len"])
            fp.update(beam=config.beam, checkpoint=file_digest(checkpoint))
        else:
            b = config.baseline
            predictions = extractive_predictions(system, examples, b["k"], b["l"], b["damping"])
            fp.update(baseline=b)
    else:
        fp["predictions"] = hashlib.sha256("\n".join(predictions).encode()).hexdigest()[:16]
    if len(predictions) != len(examples):
        raise ValueError(f"{len(predictions)} predictions for {len(examples)} examples")
    scores = score_pairs(predictions, [ex.target for ex in examples])
    return EvalReport(system, fingerprint(fp), scores)


def write_lines(path, lines: Sequence[str]) -> None:
    atomic_write_text(path, "".join(line.replace("\n", " ") + "\n" for line in lines))


def read_lines(path) -> list[str]:
    return Path(path).read_text(encoding="utf-8").splitlines()
