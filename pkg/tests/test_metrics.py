import random

import pytest
from hypothesis import given, settings, strategies as st

from litreview import metrics
from litreview.metrics import ScoreTriple, ngram_counts, novel_ngram_pct, rouge_l, rouge_n, tokenize


def naive_rouge_n(cand, ref, n):
    """Clipped-count oracle written without Counter arithmetic."""
    cg = [tuple(cand[i:i + n]) for i in range(len(cand) - n + 1)]
    rg = [tuple(ref[i:i + n]) for i in range(len(ref) - n + 1)]
    if not cg or not rg:
        return 0.0, 0.0, 0.0
    remaining = list(rg)
    matches = 0
    for g in cg:
        if g in remaining:
            remaining.remove(g)
            matches += 1
    p, r = matches / len(cg), matches / len(rg)
    return p, r, (2 * p * r / (p + r) if p + r else 0.0)


def lcs_table(a, b):
    T = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            T[i][j] = T[i - 1][j - 1] + 1 if a[i - 1] == b[j - 1] else max(T[i - 1][j], T[i][j - 1])
    return T[-1][-1]


def random_pair(rng):
    alphabet = "abcdefgh"[: rng.randint(1, 8)]
    a = [rng.choice(alphabet) for _ in range(rng.randint(0, 30))]
    b = [rng.choice(alphabet) for _ in range(rng.randint(0, 30))]
    return a, b


class TestTokenize:
    def test_punctuation_split(self):
        assert tokenize("The cat, sat!") == ["the", "cat", "sat"]

    def test_stemming(self):
        # Porter reference: "running" -> "run", "runs" -> "run"
        assert tokenize("running runs", stem=True) == ["run", "run"]

    def test_empty(self):
        assert tokenize("") == []

    def test_short_tokens_not_stemmed(self):
        # matches the reference ROUGE package: only tokens longer than 3 chars are stemmed
        assert tokenize("was has", stem=True) == ["was", "has"]

    def test_no_empty_tokens(self):
        assert all(tokenize("  --a..b  c--  "))


class TestNgramCounts:
    def test_unigrams(self):
        assert ngram_counts(["a", "b", "a"], 1) == {("a",): 2, ("b",): 1}

    def test_bigrams(self):
        assert ngram_counts(["a", "b", "a"], 2) == {("a", "b"): 1, ("b", "a"): 1}

    def test_too_short(self):
        assert ngram_counts(["a"], 2) == {}

    def test_bad_n(self):
        with pytest.raises(ValueError):
            ngram_counts(["a"], 0)


class TestRouge:
    def test_identity(self):
        s = rouge_n("the cat sat on the mat", "the cat sat on the mat", 2)
        assert (s.precision, s.recall, s.f1) == (1.0, 1.0, 1.0)
        assert rouge_l("a b c", "a b c") == ScoreTriple(1.0, 1.0, 1.0)

    def test_hand_counted_unigrams(self):
        # {the, cat} match out of 3 on each side
        s = rouge_n("the cat sat", "the cat ran", 1)
        assert s.precision == pytest.approx(2 / 3, abs=1e-12)
        assert s.recall == pytest.approx(2 / 3, abs=1e-12)
        assert s.f1 == pytest.approx(2 / 3, abs=1e-12)

    def test_disjoint(self):
        assert rouge_n("a b c", "d e f", 1) == ScoreTriple(0.0, 0.0, 0.0)

    def test_lcs_hand_case(self):
        # LCS of "a b c d" and "a c b d" is 3 (e.g. a b d)
        s = rouge_l("a b c d", "a c b d")
        assert (s.precision, s.recall, s.f1) == (0.75, 0.75, 0.75)

    def test_empty_candidate(self):
        assert rouge_l("", "a b") == ScoreTriple(0.0, 0.0, 0.0)

    def test_against_naive_oracles(self):
        rng = random.Random(11)
        for _ in range(300):
            a, b = random_pair(rng)
            for n in (1, 2, 3):
                s = rouge_n(a, b, n)
                p, r, f = naive_rouge_n(a, b, n)
                assert abs(s.precision - p) <= 1e-9 and abs(s.recall - r) <= 1e-9 and abs(s.f1 - f) <= 1e-9
            L = lcs_table(a, b)
            s = rouge_l(a, b)
            if a and b:
                assert s.precision == pytest.approx(L / len(a), abs=1e-9)
                assert s.recall == pytest.approx(L / len(b), abs=1e-9)

    def test_matches_reference_package(self):
        rs = pytest.importorskip("rouge_score.rouge_scorer")
        scorer = rs.RougeScorer(["rouge1", "rouge2", "rougeL"], use_stemmer=True)
        pairs = [
            ("The models were trained for ten epochs.", "Models are trained for many epochs with AdamW."),
            ("Running studies of parsing caresses.", "We ran study on parsers, caressing data."),
            ("Fusion in decoder reads abstracts 2023.", "fusion-in-decoder reads the abstracts"),
        ]
        for cand, ref in pairs:
            ours = metrics.rouge_all(cand, ref, stem=True)
            theirs = scorer.score(ref, cand)
            for k, name in (("r1", "rouge1"), ("r2", "rouge2"), ("rl", "rougeL")):
                assert ours[k].f1 == pytest.approx(theirs[name].fmeasure, abs=1e-12)
                assert ours[k].precision == pytest.approx(theirs[name].precision, abs=1e-12)


words = st.lists(st.sampled_from(["a", "b", "c", "d", "e"]), max_size=20)


@settings(max_examples=200, deadline=None)
@given(words, words, st.integers(1, 3))
def test_symmetry_and_bounds(a, b, n):
    s, t = rouge_n(a, b, n), rouge_n(b, a, n)
    assert s.f1 == pytest.approx(t.f1, abs=1e-12)
    assert s.precision == pytest.approx(t.recall, abs=1e-12)
    for x in (s.precision, s.recall, s.f1):
        assert 0.0 <= x <= 1.0
    assert s.f1 <= max(s.precision, s.recall) + 1e-12
    l1, l2 = rouge_l(a, b), rouge_l(b, a)
    assert l1.f1 == pytest.approx(l2.f1, abs=1e-12)


class TestNovelNgrams:
    def test_copied_target(self):
        for n in (1, 2, 3):
            assert novel_ngram_pct("b c d", ["a b c d e"], n) == 0.0

    def test_disjoint(self):
        assert novel_ngram_pct("x y z", ["a b c"], 1) == 100.0

    def test_half_novel_bigrams(self):
        # target bigrams (a,b) and (b,c); only (a,b) occurs in the inputs
        assert novel_ngram_pct("a b c", ["a b", "c"], 2) == 50.0

    def test_no_cross_input_ngrams(self):
        # (b, c) would only exist if the two inputs were glued together
        assert novel_ngram_pct("b c", ["a b", "c d"], 2) == 100.0

    def test_too_short(self):
        with pytest.raises(ValueError, match="target_too_short"):
            novel_ngram_pct("a", ["a"], 2)
