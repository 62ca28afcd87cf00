"""Data model for papers, reviews, chapters and chapter-level examples."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Optional

PAPER_ID_RE = re.compile(r"^[A-Za-z0-9_.:\-]+$")
# In-text citation marker used by the corpus format: "[@<paper_id>]".
CITE_MARKER_RE = re.compile(r"\[@([^\]\s]*)\]")

INSUFFICIENT_ABSTRACTS = "insufficient_abstracts"


def is_valid_paper_id(pid: str) -> bool:
    return isinstance(pid, str) and bool(PAPER_ID_RE.match(pid))


@dataclass(frozen=True)
class CorpusRecord:
    paper_id: str
    title: str
    abstract: str = ""
    body_sections: tuple[tuple[str, tuple[str, ...]], ...] = ()
    outbound_citations: tuple[str, ...] = ()
    field_of_study: tuple[str, ...] = ()

    @classmethod
    def from_dict(cls, d: dict) -> "CorpusRecord":
        return cls(
            paper_id=d["paper_id"],
            title=d.get("title") or "",
            abstract=d.get("abstract") or "",
            body_sections=tuple(
                (sec["heading"] if isinstance(sec, dict) else sec[0],
                 tuple(sec["paragraphs"] if isinstance(sec, dict) else sec[1]))
                for sec in d.get("body_sections") or ()
            ),
            outbound_citations=tuple(d.get("outbound_citations") or ()),
            field_of_study=tuple(d.get("field_of_study") or ()),
        )

    def to_dict(self) -> dict:
        return {
            "paper_id": self.paper_id,
            "title": self.title,
            "abstract": self.abstract,
            "body_sections": [
                {"heading": h, "paragraphs": list(ps)} for h, ps in self.body_sections
            ],
            "outbound_citations": list(self.outbound_citations),
            "field_of_study": list(self.field_of_study),
        }


@dataclass(frozen=True)
class Chapter:
    chapter_title: str
    text: str
    cited_ids: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError(f"chapter {self.chapter_title!r} has empty text")
        if len(set(self.cited_ids)) != len(self.cited_ids):
            raise ValueError(f"chapter {self.chapter_title!r} has duplicate cited ids")


@dataclass(frozen=True)
class ReviewDocument:
    record: CorpusRecord
    chapters: tuple[Chapter, ...]

    def __post_init__(self):
        if not self.chapters:
            raise ValueError("no_chapters")
        outbound = set(self.record.outbound_citations)
        for ch in self.chapters:
            extra = set(ch.cited_ids) - outbound
            if extra:
                raise ValueError(
                    f"chapter {ch.chapter_title!r} cites ids outside the review: {sorted(extra)}"
                )


def bib_tag(i: int) -> str:
    """1-based BIB tag, zero padded to three digits."""
    return f"BIB{i:03d}"


@dataclass(frozen=True)
class ChapterExample:
    review_title: str
    chapter_title: str
    inputs: tuple[tuple[str, str], ...]  # (bib_tag, abstract)
    target: str
    source_review_id: str = ""
    cited_ids: tuple[str, ...] = ()  # every id the chapter cites, resolvable or not

    def __post_init__(self):
        if len(self.inputs) < 2:
            raise ValueError(INSUFFICIENT_ABSTRACTS)
        tags = [t for t, _ in self.inputs]
        if tags != [bib_tag(i + 1) for i in range(len(tags))]:
            raise ValueError(f"bib tags out of sequence: {tags}")

    @property
    def n(self) -> int:
        return len(self.inputs)

    @property
    def abstracts(self) -> list[str]:
        return [a for _, a in self.inputs]

    def to_dict(self) -> dict:
        return {
            "review_title": self.review_title,
            "chapter_title": self.chapter_title,
            "inputs": [{"bib": t, "abstract": a} for t, a in self.inputs],
            "target": self.target,
            "source_review_id": self.source_review_id,
            "cited_ids": list(self.cited_ids),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ChapterExample":
        return cls(
            review_title=d["review_title"],
            chapter_title=d["chapter_title"],
            inputs=tuple((x["bib"], x["abstract"]) for x in d["inputs"]),
            target=d["target"],
            source_review_id=d.get("source_review_id", ""),
            cited_ids=tuple(d.get("cited_ids", ())),
        )


@dataclass
class DatasetSplit:
    train: list[ChapterExample] = field(default_factory=list)
    valid: list[ChapterExample] = field(default_factory=list)
    test: list[ChapterExample] = field(default_factory=list)

    def splits(self) -> dict[str, list[ChapterExample]]:
        return {"train": self.train, "valid": self.valid, "test": self.test}

    @property
    def provenance(self) -> dict[tuple[str, int], str]:
        """(split name, index) -> source review id."""
        return {
            (name, i): ex.source_review_id
            for name, exs in self.splits().items()
            for i, ex in enumerate(exs)
        }


class ChapterRejected(ValueError):
    def __init__(self, reason: str, chapter_title: str = ""):
        super().__init__(reason)
        self.reason = reason
        self.chapter_title = chapter_title


@dataclass(frozen=True)
class Violation:
    paper_id: str
    rule: str
    detail: str = ""


def validate_corpus(records: Iterable[CorpusRecord]) -> list[Violation]:
    report = []
    seen: set[str] = set()
    for rec in records:
        if not rec.paper_id:
            report.append(Violation(rec.paper_id, "empty_id"))
        elif rec.paper_id in seen:
            report.append(Violation(rec.paper_id, "duplicate_id"))
        seen.add(rec.paper_id)
        for cid in rec.outbound_citations:
            if not is_valid_paper_id(cid):
                report.append(Violation(rec.paper_id, "malformed_citation", repr(cid)))
    return report


def cite_markers(text: str) -> list[str]:
    """Cited ids in order of first mention, duplicates dropped."""
    return list(dict.fromkeys(CITE_MARKER_RE.findall(text)))


Resolver = Callable[[str], Optional[CorpusRecord]]


def assemble_example(review: ReviewDocument, chapter: Chapter, resolver: Resolver) -> ChapterExample:
    """Build the summarization example for one chapter.

    Raises ChapterRejected("insufficient_abstracts") when fewer than two
    cited papers resolve to a non-empty abstract. Markers for included
    papers are rewritten to their BIB tags in the target; markers for
    excluded papers are removed.
    """
    if chapter not in review.chapters:
        raise ValueError("chapter does not belong to review")
    kept: dict[str, str] = {}
    inputs = []
    for pid in chapter.cited_ids:
        rec = resolver(pid)
        if rec is None or not rec.abstract.strip():
            continue
        tag = bib_tag(len(inputs) + 1)
        kept[pid] = tag
        inputs.append((tag, rec.abstract))
    if len(inputs) < 2:
        raise ChapterRejected(INSUFFICIENT_ABSTRACTS, chapter.chapter_title)

    def _sub(m: re.Match) -> str:
        return kept.get(m.group(1), "")

    target = CITE_MARKER_RE.sub(_sub, chapter.text)
    target = re.sub(r"[ \t]+", " ", target).strip()
    return ChapterExample(
        review_title=review.record.title,
        chapter_title=chapter.chapter_title,
        inputs=tuple(inputs),
        target=target,
        source_review_id=review.record.paper_id,
        cited_ids=chapter.cited_ids,
    )


def iter_jsonl(path, errors: Optional[list] = None) -> Iterator[dict]:
    """Yield parsed lines; malformed lines are skipped and recorded in ``errors``."""
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                if errors is not None:
                    errors.append((lineno, str(e)))
                continue
            yield obj


def iter_corpus(path, errors: Optional[list] = None) -> Iterator[CorpusRecord]:
    for lineno_obj in iter_jsonl(path, errors):
        try:
            yield CorpusRecord.from_dict(lineno_obj)
        except (KeyError, TypeError, IndexError) as e:
            if errors is not None:
                errors.append((None, f"bad record: {e!r}"))


def dumps_line(obj: dict) -> str:
    return json.dumps(obj, ensure_ascii=False, sort_keys=True) + "\n"


def read_examples(path) -> list[ChapterExample]:
    return [ChapterExample.from_dict(d) for d in iter_jsonl(path)]


def write_examples(path, examples: Iterable[ChapterExample]) -> None:
    from .io import atomic_write_text

    atomic_write_text(path, "".join(dumps_line(ex.to_dict()) for ex in examples))
