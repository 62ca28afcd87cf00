"""Teacher-forced loss, AdamW updates and finite-difference gradient checking."""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import torch
import torch.nn.functional as F

from .network import Batch, FusionModel, ModelConfig, build_model, collate
from .vocab import EncodedExample

DEFAULT_LR = 5e-5
DEFAULT_BETAS = (0.9, 0.999)
DEFAULT_WEIGHT_DECAY = 0.01


def compute_loss(model: FusionModel, batch: Batch) -> torch.Tensor:
    """Mean token cross-entropy over non-padding target positions."""
    n_tokens = int((batch.labels != -100).sum())
    if n_tokens == 0:
        raise ValueError("all-padding target")
    logits = model(batch)
    return F.cross_entropy(logits.reshape(-1, logits.shape[-1]), batch.labels.reshape(-1),
                           ignore_index=-100, reduction="sum") / n_tokens


def loss_and_grads(model: FusionModel, batch: Batch) -> tuple[float, dict[str, torch.Tensor]]:
    model.zero_grad(set_to_none=True)
    loss = compute_loss(model, batch)
    loss.backward()
    grads = {
        name: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p))
        for name, p in model.named_parameters()
    }
    return float(loss.detach()), grads


@dataclass
class AdamWState:
    step: int = 0
    exp_avg: dict[str, torch.Tensor] = field(default_factory=dict)
    exp_avg_sq: dict[str, torch.Tensor] = field(default_factory=dict)

    @classmethod
    def for_model(cls, model: FusionModel) -> "AdamWState":
        return cls(
            0,
            {n: torch.zeros_like(p) for n, p in model.named_parameters()},
            {n: torch.zeros_like(p) for n, p in model.named_parameters()},
        )


class NonFiniteGradient(FloatingPointError):
    def __init__(self, name: str):
        super().__init__(f"non-finite gradient in {name}")
        self.tensor_name = name


@torch.no_grad()
def adamw_update(
    model: FusionModel,
    grads: dict[str, torch.Tensor],
    state: AdamWState,
    lr: float = DEFAULT_LR,
    betas: tuple[float, float] = DEFAULT_BETAS,
    weight_decay: float = DEFAULT_WEIGHT_DECAY,
    eps: float = 1e-8,
) -> None:
    """One AdamW step (decoupled weight decay, bias-corrected moments), in place."""
    for name, g in grads.items():
        if not torch.isfinite(g).all():
            raise NonFiniteGradient(name)
    params = dict(model.named_parameters())
    if set(state.exp_avg) != set(params):
        raise ValueError("optimizer state does not match model parameters")
    b1, b2 = betas
    state.step += 1
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = grads[name]
        m, v = state.exp_avg[name], state.exp_avg_sq[name]
        if m.shape != p.shape:
            raise ValueError(f"optimizer state shape mismatch for {name}")
        p.mul_(1.0 - lr * weight_decay)
        m.mul_(b1).add_(g, alpha=1.0 - b1)
        v.mul_(b2).addcmul_(g, g, value=1.0 - b2)
        p.addcdiv_(m / c1, (v / c2).sqrt_().add_(eps), value=-lr)


def train_step(
    model: FusionModel,
    batch: Batch,
    state: AdamWState,
    lr: float = DEFAULT_LR,
    betas: tuple[float, float] = DEFAULT_BETAS,
    weight_decay: float = DEFAULT_WEIGHT_DECAY,
    clip_norm: Optional[float] = None,
) -> float:
    """Forward, backward and one AdamW update. Returns the pre-update loss."""
    model.train()
    loss, grads = loss_and_grads(model, batch)
    if not math.isfinite(loss):
        raise FloatingPointError(f"non-finite loss {loss}")
    if clip_norm is not None:
        total = math.sqrt(sum(float((g.double() ** 2).sum()) for g in grads.values()))
        if math.isfinite(total) and total > clip_norm:
            grads = {n: g * (clip_norm / total) for n, g in grads.items()}
    adamw_update(model, grads, state, lr, betas, weight_decay)
    return loss


# -- gradient check -----------------------------------------------------------

TENSOR_CLASSES = (
    "embedding", "encoder_attention", "encoder_ffn", "decoder_self_attention",
    "decoder_cross_attention", "decoder_ffn", "layer_norm", "output_projection",
)


def tensor_class(name: str) -> str:
    if name == "embed.weight":
        return "embedding"
    if name.startswith("out_proj"):
        return "output_projection"
    if "norm" in name:
        return "layer_norm"
    side = "encoder" if name.startswith("encoder") else "decoder"
    if ".ffn." in name:
        return f"{side}_ffn"
    if ".cross_attn." in name:
        return "decoder_cross_attention"
    if ".self_attn." in name:
        return "decoder_self_attention"
    return "encoder_attention"


def random_examples(cfg: ModelConfig, n_examples: int, rng: random.Random,
                    max_passages: int = 3, max_len: int = 7) -> list[EncodedExample]:
    low = 3  # skip pad/bos/eos
    out = []
    for _ in range(n_examples):
        q = tuple(rng.randrange(low, cfg.vocab_size) for _ in range(rng.randint(1, 3)))
        bodies = tuple(
            tuple(rng.randrange(low, cfg.vocab_size) for _ in range(rng.randint(1, max_len)))
            for _ in range(rng.randint(1, max_passages))
        )
        tgt = tuple(rng.randrange(low, cfg.vocab_size) for _ in range(rng.randint(1, max_len))) + (cfg.eos_id,)
        out.append(EncodedExample(q, bodies, tgt))
    return out


@dataclass
class GradCheckReport:
    max_rel_error: float
    per_class: dict[str, float]
    n_coords: dict[str, int]
    seed: int

    def lines(self) -> list[str]:
        out = [f"{c}\t{self.n_coords[c]}\t{self.per_class[c]:.3e}" for c in self.per_class]
        return out + [f"max_rel_error\t{self.max_rel_error:.3e}"]


def relative_error(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(
    cfg: Optional[ModelConfig] = None,
    seed: int = 0,
    coords_per_class: int = 200,
    eps: float = 1e-4,
    model: Optional[FusionModel] = None,
    examples: Optional[Sequence[EncodedExample]] = None,
) -> GradCheckReport:
    """Compare autograd gradients with central differences in float64.

    At least ``coords_per_class`` coordinates are drawn per tensor class
    (all of them when the class is smaller).
    """
    if cfg is None:
        cfg = ModelConfig(vocab_size=24, d_model=16, n_heads=2, n_enc_layers=2, n_dec_layers=2,
                          ffn_dim=32, max_passage_len=16, max_target_len=16)
    rng = random.Random(seed)
    if model is None:
        model = build_model(cfg, seed=seed, dtype=torch.float64)
        # perturb norms away from their (1, 0) init so their gradients are generic
        with torch.no_grad():
            g = torch.Generator().manual_seed(seed)
            for name, p in model.named_parameters():
                if "norm" in name or p.ndim == 1:
                    p.add_(0.1 * torch.randn(p.shape, generator=g, dtype=p.dtype))
    if examples is None:
        examples = random_examples(cfg, 3, rng)
    batch = collate(examples, cfg)
    _, grads = loss_and_grads(model, batch)

    coords: dict[str, list[tuple[str, int]]] = {c: [] for c in TENSOR_CLASSES}
    params = dict(model.named_parameters())
    for name, p in params.items():
        coords[tensor_class(name)].extend((name, i) for i in range(p.numel()))

    per_class, counts = {}, {}
    with torch.no_grad():
        for cls_name, pool in coords.items():
            if not pool:
                continue
            sample = pool if len(pool) <= coords_per_class else rng.sample(pool, coords_per_class)
            worst = 0.0
            for name, i in sample:
                flat = params[name].view(-1)
                orig = float(flat[i])
                flat[i] = orig + eps
                up = float(compute_loss(model, batch))
                flat[i] = orig - eps
                down = float(compute_loss(model, batch))
                flat[i] = orig
                numeric = (up - down) / (2 * eps)
                worst = max(worst, relative_error(float(grads[name].view(-1)[i]), numeric))
            per_class[cls_name] = worst
            counts[cls_name] = len(sample)
    return GradCheckReport(max(per_class.values()), per_class, counts, seed)


def batches(examples: Sequence[EncodedExample], batch_size: int, rng: Optional[random.Random]) -> list[list[EncodedExample]]:
    order = list(range(len(examples)))
    if rng is not None:
        rng.shuffle(order)
    return [[examples[i] for i in order[k:k + batch_size]] for k in range(0, len(order), batch_size)]


def fit(model: FusionModel, examples: Sequence[EncodedExample], steps: int, lr: float = 1e-3,
        batch_size: int = 16, seed: int = 0, weight_decay: float = 0.0,
        on_step: Optional[Callable[[int, float], None]] = None) -> list[float]:
    """Plain training loop over shuffled mini-batches; returns per-step losses."""
    rng = random.Random(seed)
    state = AdamWState.for_model(model)
    losses: list[float] = []
    while len(losses) < steps:
        for chunk in batches(examples, batch_size, rng):
            loss = train_step(model, collate(chunk, model.cfg), state, lr=lr, weight_decay=weight_decay, clip_norm=1.0)
            losses.append(loss)
            if on_step:
                on_step(len(losses), loss)
            if len(losses) >= steps:
                break
    return losses
