"""Greedy and beam-search generation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .network import FusionModel, collate
from .vocab import EncodedExample, Vocab


@dataclass(frozen=True)
class GeneratedChapter:
    token_ids: tuple[int, ...]
    text: str
    score: float = 0.0


def _memory(model: FusionModel, example: EncodedExample):
    batch = collate([example], model.cfg, with_targets=False)
    mem, mask, _ = model.memory(batch)
    return mem, mask


def _log_probs(model, mem, mask, prefixes: list[list[int]]) -> torch.Tensor:
    dec_in = torch.tensor([[model.cfg.bos_id] + p for p in prefixes], dtype=torch.long)
    k = dec_in.shape[0]
    logits = model.decode(mem.expand(k, -1, -1), mask.expand(k, -1), dec_in)[:, -1]
    return torch.log_softmax(logits.double(), dim=-1)


@torch.no_grad()
def greedy_decode(model: FusionModel, example: EncodedExample, max_len: int | None = None,
                  vocab: Vocab | None = None) -> GeneratedChapter:
    """Argmax decoding; ties resolve to the lowest token id."""
    model.eval()
    max_len = min(max_len or model.cfg.max_target_len, model.cfg.max_target_len)
    mem, mask = _memory(model, example)
    out: list[int] = []
    score = 0.0
    while len(out) < max_len:
        lp = _log_probs(model, mem, mask, [out])[0]
        tok = int(torch.argmax(lp))
        score += float(lp[tok])
        out.append(tok)
        if tok == model.cfg.eos_id:
            break
    return GeneratedChapter(tuple(out), vocab.decode(out) if vocab else "", score)


@torch.no_grad()
def generate_beam(
    model: FusionModel,
    example: EncodedExample,
    beam_size: int = 4,
    max_len: int | None = None,
    length_penalty: float = 1.0,
    vocab: Vocab | None = None,
) -> GeneratedChapter:
    """Beam search ranking finished hypotheses by sum(log p) / length ** length_penalty.

    Expansions are ordered by cumulative log-probability with ties broken
    by lower token id, then lower beam index. An end-of-sequence expansion
    ranked within the top ``beam_size`` finishes a hypothesis; search stops
    once ``beam_size`` hypotheses have finished or ``max_len`` is reached.
    """
    if beam_size < 1:
        raise ValueError("beam_size must be >= 1")
    model.eval()
    eos = model.cfg.eos_id
    max_len = min(max_len or model.cfg.max_target_len, model.cfg.max_target_len)
    mem, mask = _memory(model, example)

    def norm(score, length):
        return score / (length ** length_penalty)

    live: list[tuple[list[int], float]] = [([], 0.0)]
    finished: list[tuple[list[int], float]] = []
    for _ in range(max_len):
        lp = _log_probs(model, mem, mask, [seq for seq, _ in live]).numpy()
        base = np.array([s for _, s in live])[:, None]
        total = (base + lp).ravel()
        V = lp.shape[1]
        beam_idx, tok_idx = np.divmod(np.arange(total.size), V)
        order = np.lexsort((beam_idx, tok_idx, -total))[: 2 * beam_size]
        new_live = []
        for rank, j in enumerate(order):
            seq = live[beam_idx[j]][0] + [int(tok_idx[j])]
            if tok_idx[j] == eos:
                if rank < beam_size:
                    finished.append((seq, float(total[j])))
                continue
            new_live.append((seq, float(total[j])))
            if len(new_live) == beam_size:
                break
        live = new_live
        if len(finished) >= beam_size or not live:
            break
    pool = finished + (live if len(finished) < beam_size else [])
    best_seq, best_score = max(pool, key=lambda h: norm(h[1], len(h[0])))
    # max() keeps the first maximal element, i.e. the earliest-finished tie
    return GeneratedChapter(tuple(best_seq), vocab.decode(best_seq) if vocab else "", best_score)
