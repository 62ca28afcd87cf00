"""Fusion-in-Decoder encoder-decoder with optional query-weighted fusion.

Each cited paper is encoded separately as ``query + passage``. In ``qfid``
mode the query is also encoded on its own; the mean-pooled passage and
query states give one logit per passage (their inner product), and each
passage's hidden states are scaled by ``1 + softmax(logits)`` before the
decoder cross-attends over the concatenation of all passages. ``fid``
mode skips the query pass and uses unit weights.

Hidden-state matrices are stored token-major, shape ``(length, d_model)``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import torch
from torch import nn
import torch.nn.functional as F

from .vocab import EncodedExample

MODES = ("fid", "qfid")


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_model: int = 64
    n_heads: int = 4
    n_enc_layers: int = 2
    n_dec_layers: int = 2
    ffn_dim: int = 256
    max_passage_len: int = 512
    max_target_len: int = 256
    mode: str = "qfid"
    pad_id: int = 0
    bos_id: int = 1
    eos_id: int = 2

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        for name in ("vocab_size", "d_model", "n_heads", "n_enc_layers", "n_dec_layers",
                     "ffn_dim", "max_passage_len", "max_target_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


def sinusoidal_positions(n: int, d: int) -> torch.Tensor:
    pos = torch.arange(n, dtype=torch.float64)[:, None]
    div = torch.exp(torch.arange(0, d, 2, dtype=torch.float64) * (-math.log(10000.0) / d))
    pe = torch.zeros(n, d, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(pos * div)
    pe[:, 1::2] = torch.cos(pos * div)[:, : d // 2]
    return pe


class MultiHeadAttention(nn.Module):
    def __init__(self, d_model: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.q = nn.Linear(d_model, d_model)
        self.k = nn.Linear(d_model, d_model)
        self.v = nn.Linear(d_model, d_model)
        self.o = nn.Linear(d_model, d_model)

    def forward(self, x, mem, key_mask, causal=False):
        # x: [B, Lq, d]; mem: [B, Lk, d]; key_mask: [B, Lk], True = attendable
        B, Lq, _ = x.shape
        Lk = mem.shape[1]
        q = self.q(x).view(B, Lq, self.n_heads, self.d_head).transpose(1, 2)
        k = self.k(mem).view(B, Lk, self.n_heads, self.d_head).transpose(1, 2)
        v = self.v(mem).view(B, Lk, self.n_heads, self.d_head).transpose(1, 2)
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.d_head)
        allowed = key_mask[:, None, None, :]
        if causal:
            tri = torch.ones(Lq, Lk, dtype=torch.bool, device=x.device).tril()
            allowed = allowed & tri
        scores = scores.masked_fill(~allowed, float("-inf"))
        attn = torch.softmax(scores, dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(B, Lq, -1)
        return self.o(out)


class FeedForward(nn.Module):
    def __init__(self, d_model: int, ffn_dim: int):
        super().__init__()
        self.fc1 = nn.Linear(d_model, ffn_dim)
        self.fc2 = nn.Linear(ffn_dim, d_model)

    def forward(self, x):
        return self.fc2(F.gelu(self.fc1(x)))


class EncoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.attn_norm = nn.LayerNorm(cfg.d_model)
        self.attn = MultiHeadAttention(cfg.d_model, cfg.n_heads)
        self.ffn_norm = nn.LayerNorm(cfg.d_model)
        self.ffn = FeedForward(cfg.d_model, cfg.ffn_dim)

    def forward(self, x, mask):
        h = self.attn_norm(x)
        x = x + self.attn(h, h, mask)
        return x + self.ffn(self.ffn_norm(x))


class DecoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.self_norm = nn.LayerNorm(cfg.d_model)
        self.self_attn = MultiHeadAttention(cfg.d_model, cfg.n_heads)
        self.cross_norm = nn.LayerNorm(cfg.d_model)
        self.cross_attn = MultiHeadAttention(cfg.d_model, cfg.n_heads)
        self.ffn_norm = nn.LayerNorm(cfg.d_model)
        self.ffn = FeedForward(cfg.d_model, cfg.ffn_dim)

    def forward(self, y, y_mask, mem, mem_mask):
        h = self.self_norm(y)
        y = y + self.self_attn(h, h, y_mask, causal=True)
        y = y + self.cross_attn(self.cross_norm(y), mem, mem_mask)
        return y + self.ffn(self.ffn_norm(y))


@dataclass
class PassageEncoding:
    H: torch.Tensor  # (l_q + l_m, d)
    pooled: torch.Tensor  # (d,)
    truncated: bool = False


@dataclass
class QueryEncoding:
    H: torch.Tensor  # (l_q, d)
    pooled: torch.Tensor


@dataclass
class FusionWeights:
    w: torch.Tensor  # (n,)


def fusion_weights_from_logits(z: torch.Tensor, present: Optional[torch.Tensor] = None) -> torch.Tensor:
    """1 + softmax over the last axis, restricted to ``present`` entries."""
    if present is None:
        present = torch.ones_like(z, dtype=torch.bool)
    if not torch.isfinite(z[present]).all():
        raise FloatingPointError("nonfinite_similarity")
    z = z.masked_fill(~present, float("-inf"))
    z = z - z.max(dim=-1, keepdim=True).values.detach()
    e = torch.exp(z)
    p = e / e.sum(dim=-1, keepdim=True)
    return torch.where(present, 1.0 + p, torch.zeros_like(p))


def fusion_weights(pooled_passages, pooled_query) -> FusionWeights:
    """Weights for n passages from their pooled states, shape (n, d), and the pooled query (d,)."""
    hp = torch.as_tensor(pooled_passages)
    hq = torch.as_tensor(pooled_query, dtype=hp.dtype)
    if hp.ndim != 2 or hp.shape[0] < 1 or hp.shape[1] != hq.shape[-1]:
        raise ValueError(f"bad shapes {tuple(hp.shape)} and {tuple(hq.shape)}")
    return FusionWeights(fusion_weights_from_logits(hp @ hq))


@dataclass
class Batch:
    passages: torch.Tensor  # [P, L] all passages of all examples
    passage_mask: torch.Tensor  # [P, L]
    owner: torch.Tensor  # [P] example index
    slot: torch.Tensor  # [P] passage index within its example
    n_slots: int
    queries: torch.Tensor  # [B, Lq]
    query_mask: torch.Tensor
    dec_in: Optional[torch.Tensor] = None  # [B, T]
    labels: Optional[torch.Tensor] = None  # [B, T], pad positions = -100

    @property
    def batch_size(self) -> int:
        return self.queries.shape[0]


def collate(examples: Sequence[EncodedExample], cfg: ModelConfig, with_targets: bool = True) -> Batch:
    passages, owner, slot = [], [], []
    for b, ex in enumerate(examples):
        if not ex.bodies:
            raise ValueError("example without passages")
        for m, p in enumerate(ex.passages):
            passages.append(p)
            owner.append(b)
            slot.append(m)
    # masks come from lengths, so pad ids inside a sequence are never confused with padding
    P, L = len(passages), max(len(p) for p in passages)
    pids = torch.full((P, L), cfg.pad_id, dtype=torch.long)
    pmask = torch.zeros(P, L, dtype=torch.bool)
    for i, p in enumerate(passages):
        pids[i, : len(p)] = torch.tensor(p, dtype=torch.long)
        pmask[i, : len(p)] = True
    B, Lq = len(examples), max(max(len(ex.query) for ex in examples), 1)
    qids = torch.full((B, Lq), cfg.pad_id, dtype=torch.long)
    qmask = torch.zeros(B, Lq, dtype=torch.bool)
    for i, ex in enumerate(examples):
        qids[i, : len(ex.query)] = torch.tensor(ex.query, dtype=torch.long)
        qmask[i, : len(ex.query)] = True
    batch = Batch(pids, pmask, torch.tensor(owner), torch.tensor(slot),
                  max(len(ex.bodies) for ex in examples), qids, qmask)
    if with_targets:
        T = max(len(ex.target) for ex in examples)
        dec_in = torch.full((B, T), cfg.pad_id, dtype=torch.long)
        labels = torch.full((B, T), -100, dtype=torch.long)
        for i, ex in enumerate(examples):
            t = list(ex.target)
            dec_in[i, : len(t)] = torch.tensor([cfg.bos_id] + t[:-1], dtype=torch.long)
            labels[i, : len(t)] = torch.tensor(t, dtype=torch.long)
        batch.dec_in, batch.labels = dec_in, labels
    return batch


class FusionModel(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.embed = nn.Embedding(cfg.vocab_size, cfg.d_model)
        n_pos = max(cfg.max_passage_len, cfg.max_target_len) + 1
        self.register_buffer("positions", sinusoidal_positions(n_pos, cfg.d_model).float(), persistent=False)
        self.encoder = nn.ModuleDict({
            "layers": nn.ModuleList(EncoderLayer(cfg) for _ in range(cfg.n_enc_layers)),
            "norm": nn.LayerNorm(cfg.d_model),
        })
        self.decoder = nn.ModuleDict({
            "layers": nn.ModuleList(DecoderLayer(cfg) for _ in range(cfg.n_dec_layers)),
            "norm": nn.LayerNorm(cfg.d_model),
        })
        self.out_proj = nn.Linear(cfg.d_model, cfg.vocab_size)
        self.reset_parameters()

    def reset_parameters(self):
        for name, p in self.named_parameters():
            if "norm" in name:
                continue
            if p.ndim == 2:
                nn.init.normal_(p, std=1.0 if name == "embed.weight" else 1.0 / math.sqrt(p.shape[1]))
            else:
                nn.init.zeros_(p)

    def _embed(self, ids):
        return self.embed(ids) + self.positions[: ids.shape[1]].to(self.embed.weight.dtype)

    # -- encoder side ---------------------------------------------------------

    def encode(self, ids: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        x = self._embed(ids)
        for layer in self.encoder["layers"]:
            x = layer(x, mask)
        return self.encoder["norm"](x)

    @staticmethod
    def pool(H: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        m = mask.to(H.dtype)[..., None]
        return (H * m).sum(dim=-2) / m.sum(dim=-2)

    def memory(self, batch: Batch, weights_override: Optional[torch.Tensor] = None):
        """Fused encoder memory [B, n_slots * L, d], its mask, and the per-passage weights [P]."""
        H = self.encode(batch.passages, batch.passage_mask)
        B, N = batch.batch_size, batch.n_slots
        P, L, d = H.shape
        if weights_override is not None:
            w = weights_override.to(H.dtype)
        elif self.cfg.mode == "qfid":
            hp = self.pool(H, batch.passage_mask)
            hq = self.pool(self.encode(batch.queries, batch.query_mask), batch.query_mask)
            z = (hp * hq[batch.owner]).sum(-1)
            grid = H.new_zeros(B, N)
            present = torch.zeros(B, N, dtype=torch.bool)
            grid = grid.index_put((batch.owner, batch.slot), z)
            present[batch.owner, batch.slot] = True
            w = fusion_weights_from_logits(grid, present)[batch.owner, batch.slot]
        else:
            w = None
        fused = H if w is None else H * w[:, None, None]
        mem = H.new_zeros(B, N, L, d).index_put((batch.owner, batch.slot), fused)
        mask = torch.zeros(B, N, L, dtype=torch.bool)
        mask[batch.owner, batch.slot] = batch.passage_mask
        return mem.view(B, N * L, d), mask.view(B, N * L), w

    # -- decoder side ---------------------------------------------------------

    def decode(self, mem, mem_mask, dec_in, dec_mask=None) -> torch.Tensor:
        """Logits [B, T, V] for every prefix position of ``dec_in``."""
        if dec_mask is None:
            dec_mask = torch.ones_like(dec_in, dtype=torch.bool)
        y = self._embed(dec_in)
        for layer in self.decoder["layers"]:
            y = layer(y, dec_mask, mem, mem_mask)
        return self.out_proj(self.decoder["norm"](y))

    def forward(self, batch: Batch) -> torch.Tensor:
        mem, mem_mask, _ = self.memory(batch)
        return self.decode(mem, mem_mask, batch.dec_in, batch.labels != -100)


def build_model(cfg: ModelConfig, seed: int = 0, dtype=torch.float32) -> FusionModel:
    gen_state = torch.random.get_rng_state()
    torch.manual_seed(seed)
    try:
        model = FusionModel(cfg)
    finally:
        torch.random.set_rng_state(gen_state)
    return model.to(dtype)


# -- single-example operations ------------------------------------------------


def _as_ids(ids) -> torch.Tensor:
    return torch.as_tensor(list(ids), dtype=torch.long)[None, :]


def encode_passage(model: FusionModel, query_ids, body_ids) -> PassageEncoding:
    """Encoder states over ``query + body``; the body tail is cut to fit max_passage_len."""
    query_ids, body_ids = list(query_ids), list(body_ids)
    budget = model.cfg.max_passage_len - len(query_ids)
    if budget < 0:
        raise ValueError("query alone exceeds max_passage_len")
    truncated = len(body_ids) > budget
    ids = _as_ids(query_ids + body_ids[:budget])
    mask = torch.ones_like(ids, dtype=torch.bool)
    H = model.encode(ids, mask)[0]
    return PassageEncoding(H, H.mean(dim=0), truncated)


def encode_query(model: FusionModel, query_ids) -> QueryEncoding:
    enc = encode_passage(model, query_ids, [])
    return QueryEncoding(enc.H, enc.pooled)


def fuse_and_decode(
    model: FusionModel,
    encodings: Sequence[PassageEncoding],
    weights: Optional[FusionWeights],
    prefix,
) -> torch.Tensor:
    """Next-token distribution given the passage encodings and a target prefix (bos is prepended)."""
    if model.cfg.mode == "qfid" and weights is None:
        raise ValueError("qfid mode requires fusion weights")
    if model.cfg.mode == "fid" and weights is not None:
        raise ValueError("fid mode takes no fusion weights")
    if weights is not None and len(weights.w) != len(encodings):
        raise ValueError(f"{len(weights.w)} weights for {len(encodings)} passages")
    d = model.cfg.d_model
    for e in encodings:
        if e.H.ndim != 2 or e.H.shape[1] != d:
            raise ValueError(f"passage encoding has shape {tuple(e.H.shape)}, expected (*, {d})")
    parts = [e.H if weights is None else weights.w[i] * e.H for i, e in enumerate(encodings)]
    mem = torch.cat(parts, dim=0)[None]
    mem_mask = torch.ones(mem.shape[:2], dtype=torch.bool)
    dec_in = _as_ids([model.cfg.bos_id] + list(prefix))
    logits = model.decode(mem, mem_mask, dec_in)[0, -1]
    return torch.softmax(logits, dim=-1)
