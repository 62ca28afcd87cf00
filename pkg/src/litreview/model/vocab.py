"""Word-level vocabulary and the passage/query input format."""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

from ..corpus import ChapterExample

PAD, BOS, EOS, UNK, SEP, DOC_SEP = "<pad>", "<bos>", "<eos>", "<unk>", "<s>", "</s>"
SPECIALS = (PAD, BOS, EOS, UNK, SEP, DOC_SEP)

_TOKEN_RE = re.compile(r"</?s>|[a-z0-9]+|[^\sa-z0-9]")


def word_tokens(text: str) -> list[str]:
    """Lowercased words, single punctuation marks and the <s>/</s> separators."""
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class Vocab:
    itos: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "_stoi", {t: i for i, t in enumerate(self.itos)})

    @property
    def stoi(self) -> dict[str, int]:
        return self._stoi

    def __len__(self):
        return len(self.itos)

    pad_id = property(lambda self: self._stoi[PAD])
    bos_id = property(lambda self: self._stoi[BOS])
    eos_id = property(lambda self: self._stoi[EOS])
    unk_id = property(lambda self: self._stoi[UNK])

    def encode(self, text: str) -> list[int]:
        unk = self.unk_id
        return [self._stoi.get(t, unk) for t in word_tokens(text)]

    def decode(self, ids: Iterable[int]) -> str:
        special = {self.pad_id, self.bos_id, self.eos_id}
        return " ".join(self.itos[i] for i in ids if i not in special)


def build_vocab(texts: Iterable[str], size: int) -> Vocab:
    """Frequency-ranked vocabulary; equal counts are ordered lexicographically."""
    if size < len(SPECIALS) + 2:
        raise ValueError(f"vocabulary size must be >= {len(SPECIALS) + 2}")
    counts: Counter = Counter()
    for text in texts:
        counts.update(t for t in word_tokens(text) if t not in SPECIALS)
    if not counts:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    content = [w for w, _ in ranked[: size - len(SPECIALS)]]
    return Vocab(SPECIALS + tuple(content))


def format_query(example: ChapterExample) -> str:
    return f"{example.review_title} {SEP} {example.chapter_title}"


def format_passages(example: ChapterExample) -> list[str]:
    """One encoder input per cited paper: review title, chapter title, abstract, BIB tag."""
    q = format_query(example)
    return [f"{q} {SEP} {abstract} {SEP} {tag}" for tag, abstract in example.inputs]


def format_input(example: ChapterExample) -> tuple[list[str], str]:
    return format_passages(example), format_query(example)


def format_flat(example: ChapterExample) -> str:
    """Single-sequence form with passages joined by </s>."""
    return f" {DOC_SEP} ".join(format_passages(example))


@dataclass(frozen=True)
class EncodedExample:
    """Token ids: a shared query prefix and one body per cited paper.

    The encoder input for passage m is ``query + bodies[m]``.
    """

    query: tuple[int, ...]
    bodies: tuple[tuple[int, ...], ...]
    target: tuple[int, ...] = ()
    truncated: tuple[bool, ...] = ()

    @property
    def passages(self) -> list[tuple[int, ...]]:
        return [self.query + b for b in self.bodies]


def encode_example(
    example: ChapterExample, vocab: Vocab, max_passage_len: int = 512, max_target_len: int = 256
) -> EncodedExample:
    query = tuple(vocab.encode(format_query(example)))
    if len(query) > max_passage_len:
        raise ValueError(f"query of {len(query)} tokens exceeds max_passage_len={max_passage_len}")
    budget = max_passage_len - len(query)
    bodies, flags = [], []
    for tag, abstract in example.inputs:
        body = vocab.encode(f"{SEP} {abstract} {SEP} {tag}")
        flags.append(len(body) > budget)
        bodies.append(tuple(body[:budget]))
    target = tuple(vocab.encode(example.target)[: max_target_len - 1]) + (vocab.eos_id,)
    return EncodedExample(query, tuple(bodies), target, tuple(flags))


def permute_passages(enc: EncodedExample, order: Sequence[int]) -> EncodedExample:
    return EncodedExample(
        enc.query,
        tuple(enc.bodies[i] for i in order),
        enc.target,
        tuple(enc.truncated[i] for i in order) if enc.truncated else (),
    )
