"""Build a chapter-level review-generation dataset from a scholarly corpus.

Stages: candidate extraction by title keyword and field of study,
classifier filtering, chapter splitting, review-level train/valid/test
assignment, removal of test chapters that leak citations from training
reviews, and corpus statistics.
"""

from __future__ import annotations

import logging
import math
import random
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from . import metrics
from .corpus import (
    CITE_MARKER_RE,
    Chapter,
    ChapterExample,
    ChapterRejected,
    CorpusRecord,
    DatasetSplit,
    ReviewDocument,
    assemble_example,
)

logger = logging.getLogger(__name__)

DEFAULT_KEYWORDS = ("survey", "overview", "literature review", "a review")
OVERLAP_LIMIT = 0.20


@dataclass(frozen=True)
class CandidateFilterConfig:
    required_field: str = "Computer Science"
    title_keywords: tuple[str, ...] = DEFAULT_KEYWORDS
    require_full_text: bool = True

    def __post_init__(self):
        if not self.title_keywords:
            raise ValueError("title_keywords must be non-empty")
        object.__setattr__(self, "title_keywords", tuple(k.lower() for k in self.title_keywords))


def is_candidate(rec: CorpusRecord, config: CandidateFilterConfig) -> bool:
    if config.required_field not in rec.field_of_study:
        return False
    title = rec.title.lower()
    if not any(k in title for k in config.title_keywords):
        return False
    if config.require_full_text and not rec.body_sections:
        return False
    return True


def extract_candidates(records: Iterable[CorpusRecord], config: CandidateFilterConfig) -> list[str]:
    return [rec.paper_id for rec in records if is_candidate(rec, config)]


# -- classifier filtering ---------------------------------------------------


class ReviewClassifier:
    """Scores (title, abstract) pairs with the probability of being a review."""

    threshold: float = 0.5

    def classify(self, title: str, abstract: str) -> float:
        raise NotImplementedError


class AllPassClassifier(ReviewClassifier):
    def __init__(self, threshold: float = 0.5):
        self.threshold = threshold

    def classify(self, title, abstract):
        return 1.0


def _features(title: str, abstract: str) -> set[str]:
    toks = metrics.tokenize(f"{title} {abstract}")
    feats = set(toks)
    feats.update(f"{a} {b}" for a, b in zip(toks, toks[1:]))
    return feats


class LinearReviewClassifier(ReviewClassifier):
    """Logistic regression over binary word and bigram presence features."""

    def __init__(self, vocab: dict[str, int], weights: np.ndarray, bias: float, threshold: float = 0.5):
        self.vocab = vocab
        self.weights = weights
        self.bias = bias
        self.threshold = threshold

    def decision(self, title: str, abstract: str) -> float:
        idx = [self.vocab[f] for f in _features(title, abstract) if f in self.vocab]
        return float(self.bias + self.weights[sorted(idx)].sum())

    def classify(self, title, abstract):
        z = self.decision(title, abstract)
        return float(1.0 / (1.0 + math.exp(-z))) if z >= 0 else float(math.exp(z) / (1.0 + math.exp(z)))


SUITABLE, UNSUITABLE = "suitable", "unsuitable"


def train_standin_classifier(
    labeled: Sequence[tuple[str, str, str]],
    l2: float = 1e-2,
    threshold: float = 0.5,
    seed: int = 0,
) -> LinearReviewClassifier:
    """Fit the stand-in classifier by L2-regularized mean logistic loss.

    The objective is a mean over examples, so duplicating the training set
    leaves the minimizer unchanged. Optimization starts from zero and is
    deterministic; ``seed`` is accepted for interface symmetry.
    """
    counts = Counter(label for _, _, label in labeled)
    if counts[SUITABLE] < 2 or counts[UNSUITABLE] < 2 or set(counts) - {SUITABLE, UNSUITABLE}:
        raise ValueError("degenerate_labels")
    feats = [_features(t, a) for t, a, _ in labeled]
    vocab = {f: i for i, f in enumerate(sorted(set().union(*feats)))}
    X = np.zeros((len(labeled), len(vocab)))
    for row, fs in enumerate(feats):
        X[row, [vocab[f] for f in fs]] = 1.0
    y = np.array([1.0 if lab == SUITABLE else 0.0 for _, _, lab in labeled])

    def objective(theta):
        w, b = theta[:-1], theta[-1]
        z = X @ w + b
        # log(1 + e^z) - y z, computed stably
        loss = np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * l2 * w @ w
        p = 0.5 * (1.0 + np.tanh(0.5 * z))
        g = np.empty_like(theta)
        g[:-1] = X.T @ (p - y) / len(y) + l2 * w
        g[-1] = np.mean(p - y)
        return loss, g

    res = minimize(objective, np.zeros(len(vocab) + 1), jac=True, method="L-BFGS-B",
                   options={"maxiter": 2000, "gtol": 1e-10, "ftol": 1e-15})
    return LinearReviewClassifier(vocab, res.x[:-1].copy(), float(res.x[-1]), threshold)


def filter_reviews(candidates: Iterable[CorpusRecord], classifier: ReviewClassifier) -> list[str]:
    return [
        rec.paper_id
        for rec in candidates
        if classifier.classify(rec.title, rec.abstract) >= classifier.threshold
    ]


# -- chapters and splits ------------------------------------------------------


def split_chapters(record: CorpusRecord) -> ReviewDocument:
    """One chapter per body section; sections without text are skipped."""
    outbound = set(record.outbound_citations)
    chapters = []
    for heading, paragraphs in record.body_sections:
        text = "\n\n".join(paragraphs)
        if not text.strip():
            continue
        cited = []
        for pid in CITE_MARKER_RE.findall(text):
            if pid in outbound and pid not in cited:
                cited.append(pid)
        chapters.append(Chapter(heading, text, tuple(cited)))
    if not chapters:
        raise ValueError(f"no_chapters: {record.paper_id}")
    return ReviewDocument(record, tuple(chapters))


@dataclass(frozen=True)
class SplitSpec:
    seed: int
    test_ids: tuple[str, ...]
    train_ratio: float = 0.95


@dataclass(frozen=True)
class Removal:
    review_id: str
    chapter_title: str
    train_review_id: str
    ratio: float


@dataclass(frozen=True)
class Rejection:
    review_id: str
    chapter_title: str
    reason: str


@dataclass
class BuildResult:
    split: DatasetSplit
    review_split: dict[str, str]
    n_chapters: int
    rejections: list[Rejection] = field(default_factory=list)
    removals: list[Removal] = field(default_factory=list)


def overlap_ratio(example: ChapterExample, review_cited: set[str]) -> float:
    cited = set(example.cited_ids)
    return len(cited & review_cited) / len(cited) if cited else 0.0


def dedupe_test(
    test: Sequence[ChapterExample], train_reviews: Sequence[ReviewDocument]
) -> tuple[list[ChapterExample], list[Removal]]:
    """Drop test examples sharing more than 20% of their cited papers with a training review."""
    cited_sets = [(r.record.paper_id, set(r.record.outbound_citations)) for r in train_reviews]
    kept, log = [], []
    for ex in test:
        worst = None
        for rid, cited in cited_sets:
            ratio = overlap_ratio(ex, cited)
            if ratio > OVERLAP_LIMIT and (worst is None or ratio > worst[1]):
                worst = (rid, ratio)
        if worst is None:
            kept.append(ex)
        else:
            log.append(Removal(ex.source_review_id, ex.chapter_title, worst[0], worst[1]))
    return kept, log


def assign_reviews(review_ids: Sequence[str], spec: SplitSpec) -> dict[str, str]:
    """Review id -> split. Training gets floor(ratio * rest); validation the remainder."""
    present = set(review_ids)
    for tid in spec.test_ids:
        if tid not in present:
            raise KeyError(f"designated test review not found: {tid}")
    test = set(spec.test_ids)
    rest = [r for r in review_ids if r not in test]
    random.Random(spec.seed).shuffle(rest)
    n_train = int(math.floor(spec.train_ratio * len(rest) + 1e-9))
    out = {r: "test" for r in review_ids if r in test}
    out.update({r: "train" for r in rest[:n_train]})
    out.update({r: "valid" for r in rest[n_train:]})
    return out


def build_dataset(
    reviews: Sequence[ReviewDocument],
    resolver: Callable[[str], Optional[CorpusRecord]],
    spec: SplitSpec,
) -> BuildResult:
    ids = [r.record.paper_id for r in reviews]
    assignment = assign_reviews(ids, spec)
    result = BuildResult(DatasetSplit(), assignment, n_chapters=0)
    buckets = result.split.splits()
    for review in reviews:
        target = buckets[assignment[review.record.paper_id]]
        for ch in review.chapters:
            result.n_chapters += 1
            try:
                target.append(assemble_example(review, ch, resolver))
            except ChapterRejected as e:
                result.rejections.append(Rejection(review.record.paper_id, ch.chapter_title, e.reason))
    train_reviews = [r for r in reviews if assignment[r.record.paper_id] == "train"]
    result.split.test, result.removals = dedupe_test(result.split.test, train_reviews)
    logger.info(
        "built dataset: %d chapters, %d rejected, %d test removals",
        result.n_chapters, len(result.rejections), len(result.removals),
    )
    return result


def leakage_violations(
    test: Sequence[ChapterExample], train_reviews: Sequence[ReviewDocument]
) -> list[tuple[str, str, float]]:
    out = []
    for ex in test:
        for r in train_reviews:
            ratio = overlap_ratio(ex, set(r.record.outbound_citations))
            if ratio > OVERLAP_LIMIT:
                out.append((ex.source_review_id, r.record.paper_id, ratio))
    return out


# -- statistics ---------------------------------------------------------------

NGRAM_ORDERS = (1, 2, 3, 4)


@dataclass(frozen=True)
class StatsRow:
    n_train: int
    n_valid: int
    n_test: int
    input_len: float
    target_len: float
    n_inputs: float
    novel_ngram_pct: dict[int, float]


@dataclass(frozen=True)
class ReviewView:
    """Whole-review view of a review's chapter examples, used for statistics only."""

    source_review_id: str
    abstracts: tuple[str, ...]
    target: str

    @property
    def n(self) -> int:
        return len(self.abstracts)


def review_level(examples: Sequence[ChapterExample]) -> list[ReviewView]:
    """Distinct abstracts across a review's chapters; targets concatenated."""
    groups: dict[str, list[ChapterExample]] = {}
    for ex in examples:
        groups.setdefault(ex.source_review_id, []).append(ex)
    return [
        ReviewView(
            rid,
            tuple(dict.fromkeys(a for ex in exs for a in ex.abstracts)),
            "\n\n".join(ex.target for ex in exs),
        )
        for rid, exs in groups.items()
    ]


def _mean(xs):
    return float(sum(xs) / len(xs)) if xs else float("nan")


def compute_stats(
    examples: Sequence[ChapterExample],
    counts: tuple[int, int, int] = (0, 0, 0),
    tokenizer: Callable[[str], list[str]] = metrics.tokenize,
) -> StatsRow:
    """Table-style statistics for one split.

    Novel n-gram percentages average per-example values; examples whose
    target has fewer than n tokens are left out of the mean for that n.
    """
    if not examples:
        raise ValueError("empty_split")
    input_lens, target_lens, n_inputs = [], [], []
    novel: dict[int, list[float]] = {n: [] for n in NGRAM_ORDERS}
    for ex in examples:
        input_toks = [tokenizer(a) for a in ex.abstracts]
        target_toks = tokenizer(ex.target)
        input_lens.append(sum(len(t) for t in input_toks))
        target_lens.append(len(target_toks))
        n_inputs.append(ex.n)
        for n in NGRAM_ORDERS:
            if len(target_toks) < n:
                continue
            seen = set()
            for toks in input_toks:
                seen.update(metrics.ngram_counts(toks, n))
            grams = [tuple(target_toks[i:i + n]) for i in range(len(target_toks) - n + 1)]
            novel[n].append(100.0 * sum(g not in seen for g in grams) / len(grams))
    return StatsRow(
        *counts,
        input_len=_mean(input_lens),
        target_len=_mean(target_lens),
        n_inputs=_mean(n_inputs),
        novel_ngram_pct={n: _mean(v) for n, v in novel.items()},
    )


STATS_HEADER = [
    "view", "split", "n_train", "n_valid", "n_test", "input_len", "target_len", "n_inputs",
    *(f"novel_{n}gram_pct" for n in NGRAM_ORDERS),
]


def stats_table(split: DatasetSplit) -> list[list]:
    """One row per (view, split) for the chapter and whole-review views."""
    rows = []
    for view in ("chapter", "review"):
        views = {
            name: (exs if view == "chapter" else review_level(exs))
            for name, exs in split.splits().items()
        }
        counts = tuple(len(views[s]) for s in ("train", "valid", "test"))
        for name, exs in views.items():
            if not exs:
                continue
            row = compute_stats(exs, counts)
            rows.append([
                view, name, *counts, row.input_len, row.target_len, row.n_inputs,
                *(row.novel_ngram_pct[n] for n in NGRAM_ORDERS),
            ])
    return rows
