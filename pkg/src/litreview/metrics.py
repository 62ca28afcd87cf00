"""Tokenization, ROUGE-1/2/L and novel n-gram statistics.

Tokenization follows the Python ROUGE package at the granularity of its
regex: lowercase, split on runs of characters outside ``[a-z0-9]``, and
Porter-stem only tokens longer than three characters.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Sequence

from nltk.stem.porter import PorterStemmer

_NON_ALNUM = re.compile(r"[^a-z0-9]+")
_STEMMER = PorterStemmer("ORIGINAL_ALGORITHM")


@lru_cache(maxsize=65536)
def _stem(token: str) -> str:
    return _STEMMER.stem(token) if len(token) > 3 else token


def tokenize(text: str, stem: bool = False) -> list[str]:
    tokens = [t for t in _NON_ALNUM.split(text.lower()) if t]
    if stem:
        tokens = [_stem(t) for t in tokens]
    return tokens


def ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    """Contiguous n-grams of ``tokens`` with multiplicity, as tuples."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


@dataclass(frozen=True)
class ScoreTriple:
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_counts(cls, matches: int, cand_total: int, ref_total: int) -> "ScoreTriple":
        if cand_total == 0 or ref_total == 0:
            return cls(0.0, 0.0, 0.0)
        p = matches / cand_total
        r = matches / ref_total
        return cls(p, r, f1_score(p, r))


def f1_score(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def _as_tokens(text: str | Sequence[str], stem: bool) -> Sequence[str]:
    return tokenize(text, stem) if isinstance(text, str) else text


def rouge_n(candidate, reference, n: int = 1, stem: bool = True) -> ScoreTriple:
    """ROUGE-N with clipped n-gram matches.

    ``candidate`` and ``reference`` may be raw strings or pre-tokenized
    sequences (the latter skip tokenization and stemming).
    """
    cand = ngram_counts(_as_tokens(candidate, stem), n)
    ref = ngram_counts(_as_tokens(reference, stem), n)
    matches = sum(min(c, ref[g]) for g, c in cand.items() if g in ref)
    return ScoreTriple.from_counts(matches, sum(cand.values()), sum(ref.values()))


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(candidate, reference, stem: bool = True) -> ScoreTriple:
    """Whole-text (not sentence-split) LCS-based ROUGE-L."""
    cand = _as_tokens(candidate, stem)
    ref = _as_tokens(reference, stem)
    return ScoreTriple.from_counts(lcs_length(cand, ref), len(cand), len(ref))


def rouge_all(candidate: str, reference: str, stem: bool = True) -> dict[str, ScoreTriple]:
    cand = tokenize(candidate, stem)
    ref = tokenize(reference, stem)
    return {
        "r1": rouge_n(cand, ref, 1),
        "r2": rouge_n(cand, ref, 2),
        "rl": rouge_l(cand, ref),
    }


def novel_ngram_pct(target: str, inputs: Iterable[str], n: int) -> float:
    """Percentage of target n-gram positions whose n-gram occurs in no input.

    Input n-grams are collected per input, so none straddle two inputs.
    Tokens are not stemmed.
    """
    tgt = tokenize(target)
    if len(tgt) < n:
        raise ValueError("target_too_short")
    seen: set[tuple] = set()
    for text in inputs:
        seen.update(ngram_counts(tokenize(text), n))
    grams = [tuple(tgt[i:i + n]) for i in range(len(tgt) - n + 1)]
    novel = sum(1 for g in grams if g not in seen)
    return 100.0 * novel / len(grams)
