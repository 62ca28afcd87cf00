"""LEAD-k, LexRank and the greedy ROUGE-2 extractive oracle.

All three systems read cited-paper abstracts only and return verbatim
input sentences, in source order, joined by single spaces.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .metrics import ngram_counts, tokenize

ABBREVIATIONS = frozenset({
    "al.", "fig.", "figs.", "e.g.", "i.e.", "eq.", "eqs.", "sec.", "tab.", "cf.",
    "etc.", "vs.", "dr.", "mr.", "mrs.", "ms.", "no.", "resp.", "approx.", "ref.", "refs.",
})
_BOUNDARY = re.compile(r"[.!?][\"')\]]*\s+(?=[A-Z0-9])")


def split_sentences(text: str) -> list[str]:
    sentences, start = [], 0
    for m in _BOUNDARY.finditer(text):
        head = text[start:m.start() + 1]
        last_word = head.split()[-1].lower() if head.split() else ""
        if last_word in ABBREVIATIONS:
            continue
        sentences.append(text[start:m.end()].strip())
        start = m.end()
    sentences.append(text[start:].strip())
    return [s for s in sentences if s]


@dataclass(frozen=True)
class Sentence:
    doc_index: int
    sent_index: int
    text: str


def sentence_set(docs: Sequence[str]) -> list[Sentence]:
    return [
        Sentence(d, s, text)
        for d, doc in enumerate(docs)
        for s, text in enumerate(split_sentences(doc))
    ]


def lead_k(docs: Sequence[str], k: int = 1) -> str:
    if not docs:
        raise ValueError("no_inputs")
    if k < 1:
        raise ValueError("k must be >= 1")
    return " ".join(s for doc in docs for s in split_sentences(doc)[:k])


# -- LexRank ------------------------------------------------------------------


@dataclass(frozen=True)
class LexRankConfig:
    damping: float = 0.85
    tol: float = 1e-8
    max_iter: int = 1000
    l: int = 5

    def __post_init__(self):
        if not 0.0 < self.damping < 1.0:
            raise ValueError("damping must lie in (0, 1)")
        if self.tol <= 0:
            raise ValueError("tol must be positive")


class ConvergenceError(RuntimeError):
    def __init__(self, residual: float, iterations: int):
        super().__init__(f"power iteration did not converge after {iterations} steps (residual {residual:.3e})")
        self.residual = residual


def tfidf_cosine(sentences: Sequence[str]) -> np.ndarray:
    """Pairwise cosine similarity of TF-IDF vectors.

    IDF is computed over the sentence collection with add-one smoothing:
    idf(t) = ln((N + 1) / (df(t) + 1)) + 1.
    """
    toks = [tokenize(s) for s in sentences]
    vocab = sorted(set(t for ts in toks for t in ts))
    index = {t: i for i, t in enumerate(vocab)}
    tf = np.zeros((len(sentences), len(vocab)))
    for row, ts in enumerate(toks):
        for t, c in Counter(ts).items():
            tf[row, index[t]] = c
    df = (tf > 0).sum(axis=0)
    idf = np.log((len(sentences) + 1) / (df + 1)) + 1.0
    vec = tf * idf
    norms = np.linalg.norm(vec, axis=1)
    norms[norms == 0] = 1.0
    unit = vec / norms[:, None]
    return unit @ unit.T


def transition_matrix(sim: np.ndarray) -> np.ndarray:
    """Row-normalize; rows summing to zero become uniform."""
    sim = np.asarray(sim, dtype=float)
    sums = sim.sum(axis=1, keepdims=True)
    n = sim.shape[0]
    return np.where(sums > 0, sim / np.where(sums > 0, sums, 1.0), 1.0 / n)


def stationary_distribution(sim: np.ndarray, config: LexRankConfig = LexRankConfig()) -> np.ndarray:
    """Damped stationary vector x = d P^T x + (1 - d)/N by power iteration.

    Returns the first iterate whose residual (max-norm) is below ``tol``.
    """
    P = transition_matrix(sim)
    n = P.shape[0]
    d = config.damping
    x = np.full(n, 1.0 / n)
    residual = math.inf
    for it in range(config.max_iter):
        nxt = d * (P.T @ x) + (1.0 - d) / n
        residual = float(np.max(np.abs(nxt - x)))
        if residual < config.tol:
            return x
        x = nxt
    raise ConvergenceError(residual, config.max_iter)


def _pick_in_source_order(sents: Sequence[Sentence], chosen: Sequence[int]) -> str:
    return " ".join(sents[i].text for i in sorted(chosen))


def lexrank(docs: Sequence[str], config: LexRankConfig = LexRankConfig()) -> str:
    sents = sentence_set(docs)
    if not sents:
        raise ValueError("no_inputs")
    scores = stationary_distribution(tfidf_cosine([s.text for s in sents]), config)
    # sentences are already in (doc_index, sent_index) order, so index breaks ties
    order = sorted(range(len(sents)), key=lambda i: (-scores[i], i))
    return _pick_in_source_order(sents, order[:config.l])


# -- extractive oracle --------------------------------------------------------


def _rouge2_f1(cand_bigrams: Counter, cand_total: int, ref: Counter, ref_total: int) -> float:
    if cand_total == 0 or ref_total == 0:
        return 0.0
    matches = sum(min(c, ref[g]) for g, c in cand_bigrams.items() if g in ref)
    p, r = matches / cand_total, matches / ref_total
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def oracle_selection(docs: Sequence[str], target: str, l: int = 5) -> list[int]:
    """Greedy forward selection maximizing stemmed ROUGE-2 F1 of the joined selection.

    Indices refer to ``sentence_set(docs)``. Every step adds the best
    sentence (ties go to the earliest one), so min(l, #sentences) are chosen.
    """
    sents = sentence_set(docs)
    if not sents:
        raise ValueError("no_inputs")
    if not target.strip():
        raise ValueError("empty_target")
    toks = [tokenize(s.text, stem=True) for s in sents]
    ref_toks = tokenize(target, stem=True)
    ref, ref_total = ngram_counts(ref_toks, 2), max(len(ref_toks) - 1, 0)
    selected: list[int] = []
    for _ in range(min(l, len(sents))):
        best, best_score = -1, -1.0
        for i in range(len(sents)):
            if i in selected:
                continue
            joined = [t for j in sorted(selected + [i]) for t in toks[j]]
            score = _rouge2_f1(ngram_counts(joined, 2), max(len(joined) - 1, 0), ref, ref_total)
            if score > best_score:
                best, best_score = i, score
        selected.append(best)
    return selected


def ext_oracle(docs: Sequence[str], target: str, l: int = 5) -> str:
    sents = sentence_set(docs)
    return _pick_in_source_order(sents, oracle_selection(docs, target, l))
