import math
import random

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from litreview.corpus import ChapterExample
from litreview.model import (
    FusionWeights,
    ModelConfig,
    build_model,
    build_vocab,
    collate,
    compute_loss,
    encode_example,
    encode_passage,
    encode_query,
    fuse_and_decode,
    fusion_weights,
    generate_beam,
    grad_check,
    greedy_decode,
    load_checkpoint,
    save_checkpoint,
    train_step,
)
from litreview.model import network, training
from litreview.model.training import AdamWState, NonFiniteGradient, adamw_update, random_examples
from litreview.model.vocab import EncodedExample, format_flat, format_input, permute_passages


def small_cfg(**kw):
    base = dict(vocab_size=24, d_model=16, n_heads=2, n_enc_layers=2, n_dec_layers=2, ffn_dim=32,
                max_passage_len=16, max_target_len=12)
    base.update(kw)
    return ModelConfig(**base)


class TestVocab:
    def test_frequency_order(self):
        v = build_vocab(["a a b"], 8)
        assert v.itos[6:] == ("a", "b")

    def test_ties_lexicographic(self):
        v = build_vocab(["zeta alpha"], 8)
        assert v.itos[6:] == ("alpha", "zeta")

    def test_unk_and_decode(self):
        v = build_vocab(["a b"], 8)
        ids = v.encode("a c")
        assert ids == [v.stoi["a"], v.unk_id]
        assert v.decode([v.bos_id, v.stoi["b"], v.eos_id]) == "b"

    def test_errors(self):
        with pytest.raises(ValueError):
            build_vocab(["a"], 7)
        with pytest.raises(ValueError):
            build_vocab([""], 8)


class TestFormat:
    def ex(self, chapter="C"):
        return ChapterExample("T", chapter, (("BIB001", "A1"), ("BIB002", "A2")), "x")

    def test_passage_strings(self):
        passages, query = format_input(self.ex())
        assert passages == ["T <s> C <s> A1 <s> BIB001", "T <s> C <s> A2 <s> BIB002"]
        assert query == "T <s> C"
        assert format_flat(self.ex()) == "T <s> C <s> A1 <s> BIB001 </s> T <s> C <s> A2 <s> BIB002"

    def test_empty_chapter_title_kept(self):
        passages, _ = format_input(self.ex(chapter=""))
        assert passages[0] == "T <s>  <s> A1 <s> BIB001"

    def test_truncation_keeps_query(self):
        long = ChapterExample("review title", "chapter", (("BIB001", "w " * 50), ("BIB002", "short")), "t")
        v = build_vocab(["review title chapter w short t BIB001 BIB002"], 20)
        enc = encode_example(long, v, max_passage_len=10, max_target_len=4)
        assert all(len(p) <= 10 for p in enc.passages)
        assert all(p[: len(enc.query)] == enc.query for p in enc.passages)
        assert enc.truncated == (True, False)
        assert enc.target[-1] == v.eos_id and len(enc.target) <= 4


class TestEncoder:
    def setup_method(self):
        self.model = build_model(small_cfg(), seed=1)

    def test_shapes(self):
        enc = encode_passage(self.model, [3, 4], [5, 6, 7])
        assert enc.H.shape == (5, 16)
        assert torch.allclose(enc.pooled, enc.H.mean(0), atol=1e-6)
        assert encode_query(self.model, [3, 4]).H.shape == (2, 16)

    def test_query_is_same_function(self):
        q = encode_query(self.model, [3, 4, 5, 6])
        p = encode_passage(self.model, [3, 4], [5, 6])
        assert torch.equal(q.H, p.H)

    def test_identical_passages(self):
        a = encode_passage(self.model, [3], [5, 6])
        b = encode_passage(self.model, [3], [5, 6])
        assert torch.equal(a.H, b.H)

    def test_truncation_flag(self):
        enc = encode_passage(self.model, [3, 4], list(range(3, 23)))
        assert enc.truncated and enc.H.shape[0] == 16

    def test_zero_parameters_oracle(self):
        # with every weight and bias zero, each sublayer adds nothing: H = LayerNorm(position encoding)
        m = build_model(small_cfg(), seed=0, dtype=torch.float64)
        with torch.no_grad():
            for name, p in m.named_parameters():
                if not ("norm" in name and name.endswith("weight")):
                    p.zero_()
        H = encode_passage(m, [3, 4], [9, 10, 11]).H
        pos = network.sinusoidal_positions(5, 16).double()
        expected = F.layer_norm(pos, (16,))
        assert torch.allclose(H, expected, atol=1e-10)
        H2 = encode_passage(m, [7, 7], [7, 7, 7]).H
        assert torch.allclose(H, H2, atol=1e-12)

    def test_pooled_finite(self):
        assert torch.isfinite(encode_query(self.model, [3, 4, 5]).pooled).all()


class TestFusionWeights:
    def test_single(self):
        w = fusion_weights(torch.randn(1, 4), torch.randn(4)).w
        assert float(w[0]) == 2.0

    def test_symmetric(self):
        h = torch.randn(1, 4)
        w = fusion_weights(torch.cat([h, h]), torch.randn(4)).w
        assert torch.allclose(w, torch.tensor([1.5, 1.5]), atol=1e-7)

    def test_two_dim_example(self):
        w = fusion_weights(torch.tensor([[1.0, 0.0], [0.0, 1.0]], dtype=torch.float64),
                           torch.tensor([1.0, 0.0], dtype=torch.float64)).w
        e = math.e
        assert w.tolist() == pytest.approx([1 + e / (e + 1), 1 + 1 / (e + 1)], abs=1e-12)
        assert w.tolist() == pytest.approx([1.7311, 1.2689], abs=1e-4)

    def test_nonfinite(self):
        with pytest.raises(FloatingPointError, match="nonfinite_similarity"):
            fusion_weights(torch.tensor([[float("nan"), 0.0]]), torch.tensor([1.0, 0.0]))

    def test_bad_shape(self):
        with pytest.raises(ValueError):
            fusion_weights(torch.randn(2, 3), torch.randn(4))

    def test_large_logits_stable(self):
        w = fusion_weights(torch.tensor([[1e3], [0.0]], dtype=torch.float64),
                           torch.tensor([1.0], dtype=torch.float64)).w
        assert torch.isfinite(w).all() and float(w[0]) == 2.0


class TestFuseAndDecode:
    def setup_method(self):
        self.cfg = small_cfg(mode="qfid")
        self.model = build_model(self.cfg, seed=2)
        self.encs = [encode_passage(self.model, [3, 4], b) for b in ([5, 6], [7, 8, 9])]

    def test_distribution(self):
        w = fusion_weights(torch.stack([e.pooled for e in self.encs]), encode_query(self.model, [3, 4]).pooled)
        p = fuse_and_decode(self.model, self.encs, w, [5])
        assert p.shape == (24,) and float(p.detach().sum()) == pytest.approx(1.0, abs=1e-6)

    def test_mode_contracts(self):
        with pytest.raises(ValueError):
            fuse_and_decode(self.model, self.encs, None, [])
        fid = build_model(small_cfg(mode="fid"), seed=2)
        with pytest.raises(ValueError):
            fuse_and_decode(fid, self.encs, FusionWeights(torch.ones(2)), [])
        with pytest.raises(ValueError):
            fuse_and_decode(self.model, self.encs, FusionWeights(torch.ones(3)), [])

    def test_fid_equals_unit_weights(self):
        fid = build_model(small_cfg(mode="fid"), seed=2)
        a = fuse_and_decode(fid, self.encs, None, [5, 6])
        b = fuse_and_decode(self.model, self.encs, FusionWeights(torch.ones(2)), [5, 6])
        assert torch.allclose(a, b, atol=1e-6)

    def test_single_passage_weight_matters(self):
        a = fuse_and_decode(self.model, self.encs[:1], FusionWeights(torch.tensor([2.0])), [5])
        b = fuse_and_decode(self.model, self.encs[:1], FusionWeights(torch.tensor([1.0])), [5])
        assert not torch.allclose(a, b, atol=1e-6)

    def test_batched_memory_matches_single_path(self):
        enc = EncodedExample((3, 4), ((5, 6), (7, 8, 9)), (5, 2))
        batch = collate([enc], self.cfg)
        mem, mask, w = self.model.memory(batch)
        assert int(mask.sum()) == sum(len(p) for p in enc.passages)
        w_single = fusion_weights(torch.stack([e.pooled for e in self.encs]),
                                  encode_query(self.model, [3, 4]).pooled).w
        assert torch.allclose(w, w_single, atol=1e-6)
        logits = self.model.decode(mem, mask, torch.tensor([[self.cfg.bos_id, 5]]))[0, -1]
        p = fuse_and_decode(self.model, self.encs, FusionWeights(w_single), [5])
        assert torch.allclose(torch.softmax(logits, -1), p, atol=1e-6)


class TestLoss:
    def test_uniform_output(self):
        cfg = small_cfg()
        m = build_model(cfg, seed=0)
        with torch.no_grad():
            m.out_proj.weight.zero_()
            m.out_proj.bias.zero_()
        batch = collate(random_examples(cfg, 3, random.Random(0)), cfg)
        assert compute_loss(m, batch).item() == pytest.approx(math.log(24), abs=1e-5)

    def test_nonnegative(self):
        cfg = small_cfg()
        m = build_model(cfg, seed=3)
        batch = collate(random_examples(cfg, 4, random.Random(1)), cfg)
        assert compute_loss(m, batch).item() >= 0

    def test_all_padding(self):
        cfg = small_cfg()
        m = build_model(cfg, seed=0)
        batch = collate(random_examples(cfg, 2, random.Random(0)), cfg)
        batch.labels[:] = -100
        with pytest.raises(ValueError):
            compute_loss(m, batch)

    def test_padding_masked(self):
        # loss of a batch equals the token-weighted mean of its members' losses
        cfg = small_cfg()
        m = build_model(cfg, seed=4)
        exs = random_examples(cfg, 2, random.Random(5))
        l_both = compute_loss(m, collate(exs, cfg)).item()
        parts = [(compute_loss(m, collate([e], cfg)).item(), len(e.target)) for e in exs]
        expected = sum(l * n for l, n in parts) / sum(n for _, n in parts)
        assert l_both == pytest.approx(expected, abs=1e-5)


class TestGradCheck:
    def test_passes(self):
        report = grad_check(seed=0, coords_per_class=60)
        assert report.max_rel_error < 1e-4
        assert set(report.per_class) == set(training.TENSOR_CLASSES)

    def test_deterministic(self):
        a = grad_check(seed=1, coords_per_class=10)
        b = grad_check(seed=1, coords_per_class=10)
        assert a.lines() == b.lines()

    def test_detects_broken_gradient(self, monkeypatch):
        # severing the gradient through the fusion weights must be caught
        original = network.fusion_weights_from_logits
        monkeypatch.setattr(network, "fusion_weights_from_logits", lambda z, present=None: original(z, present).detach())
        report = grad_check(seed=0, coords_per_class=60)
        assert report.max_rel_error > 1e-2


class TestOptimizer:
    def test_matches_reference_adamw(self):
        cfg = small_cfg()
        ours = build_model(cfg, seed=5, dtype=torch.float64)
        ref = build_model(cfg, seed=5, dtype=torch.float64)
        opt = torch.optim.AdamW(ref.parameters(), lr=1e-2, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01)
        state = AdamWState.for_model(ours)
        rng = random.Random(0)
        for _ in range(5):
            batch = collate(random_examples(cfg, 2, rng), cfg)
            train_step(ours, batch, state, lr=1e-2, weight_decay=0.01)
            opt.zero_grad()
            compute_loss(ref, batch).backward()
            opt.step()
        for (n, a), (_, b) in zip(ours.named_parameters(), ref.named_parameters()):
            assert torch.allclose(a, b, atol=1e-10), n

    def test_zero_grads_no_decay(self):
        cfg = small_cfg()
        m = build_model(cfg, seed=0)
        before = {n: p.clone() for n, p in m.named_parameters()}
        adamw_update(m, {n: torch.zeros_like(p) for n, p in m.named_parameters()},
                     AdamWState.for_model(m), weight_decay=0.0)
        assert all(torch.equal(before[n], p) for n, p in m.named_parameters())

    def test_defaults(self):
        assert training.DEFAULT_LR == 5e-5 and training.DEFAULT_BETAS == (0.9, 0.999)

    def test_nonfinite_named(self):
        m = build_model(small_cfg(), seed=0)
        grads = {n: torch.zeros_like(p) for n, p in m.named_parameters()}
        grads["out_proj.bias"][0] = float("inf")
        with pytest.raises(NonFiniteGradient) as e:
            adamw_update(m, grads, AdamWState.for_model(m))
        assert e.value.tensor_name == "out_proj.bias"

    def test_state_mismatch(self):
        m = build_model(small_cfg(), seed=0)
        with pytest.raises(ValueError):
            adamw_update(m, {n: torch.zeros_like(p) for n, p in m.named_parameters()}, AdamWState())


def overfit_batch(steps=500, seed=0):
    cfg = ModelConfig(vocab_size=32, d_model=32, n_heads=4, n_enc_layers=1, n_dec_layers=1, ffn_dim=64,
                      max_passage_len=16, max_target_len=12)
    model = build_model(cfg, seed=seed)
    batch = collate(random_examples(cfg, 4, random.Random(seed)), cfg)
    state = AdamWState.for_model(model)
    losses = [train_step(model, batch, state, lr=3e-3, weight_decay=0.0, clip_norm=1.0) for _ in range(steps)]
    return compute_loss(model, batch).item(), losses


class TestTraining:
    def test_overfit_single_batch(self):
        final, _ = overfit_batch()
        assert final < 0.05

    def test_deterministic(self):
        assert overfit_batch(20)[1] == overfit_batch(20)[1]


class TestDecoding:
    def setup_method(self):
        self.cfg = small_cfg()
        self.model = build_model(self.cfg, seed=7)
        self.ex = random_examples(self.cfg, 1, random.Random(3), max_passages=4)[0]

    def test_beam_one_is_greedy(self):
        for seed in range(5):
            m = build_model(self.cfg, seed=seed)
            assert generate_beam(m, self.ex, beam_size=1).token_ids == greedy_decode(m, self.ex).token_ids

    def test_length_cap(self):
        out = generate_beam(self.model, self.ex, beam_size=4, max_len=5)
        assert len(out.token_ids) <= 5
        assert len(greedy_decode(self.model, self.ex).token_ids) <= self.cfg.max_target_len

    def test_deterministic(self):
        a = generate_beam(self.model, self.ex, 4)
        b = generate_beam(self.model, self.ex, 4)
        assert a == b

    def test_beam_not_worse_than_greedy(self):
        g = greedy_decode(self.model, self.ex)
        b = generate_beam(self.model, self.ex, beam_size=4, length_penalty=0.0)
        assert b.score >= g.score - 1e-9

    def test_permutation_invariance(self):
        base = greedy_decode(self.model, self.ex).token_ids
        n = len(self.ex.bodies)
        rng = random.Random(0)
        for _ in range(5):
            order = list(range(n))
            rng.shuffle(order)
            assert greedy_decode(self.model, permute_passages(self.ex, order)).token_ids == base


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        cfg = small_cfg()
        vocab = build_vocab(["a b c d e f"], 24)
        cfg = ModelConfig(**{**cfg.__dict__, "vocab_size": len(vocab)})
        m = build_model(cfg, seed=3)
        save_checkpoint(tmp_path / "m.ckpt", m, vocab, {"epoch": 2})
        m2, v2, meta = load_checkpoint(tmp_path / "m.ckpt")
        assert v2 == vocab and meta["epoch"] == 2 and m2.cfg == cfg
        for (n, a), (_, b) in zip(m.named_parameters(), m2.named_parameters()):
            assert torch.equal(a, b), n
        ex = random_examples(cfg, 1, random.Random(0))[0]
        assert greedy_decode(m, ex).token_ids == greedy_decode(m2, ex).token_ids

    def test_bytes_deterministic(self, tmp_path):
        m = build_model(small_cfg(), seed=3)
        vocab = build_vocab(["a"], 8)
        save_checkpoint(tmp_path / "a.ckpt", m, vocab)
        save_checkpoint(tmp_path / "b.ckpt", m, vocab)
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()

    def test_bad_file(self, tmp_path):
        p = tmp_path / "x.ckpt"
        p.write_bytes(b"not a checkpoint")
        with pytest.raises(ValueError):
            load_checkpoint(p)


def test_config_validation():
    with pytest.raises(ValueError):
        small_cfg(d_model=15)
    with pytest.raises(ValueError):
        small_cfg(mode="other")
