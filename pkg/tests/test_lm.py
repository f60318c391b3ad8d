"""Causal LM: LoRA adapters, decoding, answer-only fine-tuning, persistence."""

import math

import numpy as np
import pytest

from sensorlm import nn
from sensorlm.fusion import FusedInput, Projector, ProjectorConfig
from sensorlm.lm import (
    CausalLM,
    FinetuneExample,
    LMConfig,
    LoRAConfig,
    batch_loss,
    example_loss,
    finetune,
    load_lm,
    lora_apply,
    lora_merge,
    save_lm,
    text_prefix,
)
from sensorlm.tokenizer import EOS_ID

from gradcheck import fd_check


def tiny_model(seed=0, **overrides):
    kw = dict(vocab_size=260, dim=16, layers=1, heads=2, max_context=32, seed=seed)
    kw.update(overrides)
    return CausalLM(LMConfig(**kw))


# ---------------------------------------------------------------------------
# config validation
# ---------------------------------------------------------------------------

def test_config_rejects_small_vocab():
    with pytest.raises(ValueError, match="vocab_size"):
        LMConfig(vocab_size=258)


def test_config_rejects_indivisible_heads():
    with pytest.raises(ValueError, match="divisible"):
        LMConfig(dim=30, heads=4)


def test_lora_config_rejects_unknown_target():
    with pytest.raises(ValueError, match="unknown LoRA target"):
        LoRAConfig(targets=("q", "bogus"))


def test_lora_config_rejects_bad_rank_and_dropout():
    with pytest.raises(ValueError, match="rank"):
        LoRAConfig(rank=0)
    with pytest.raises(ValueError, match="dropout"):
        LoRAConfig(dropout=1.0)
    with pytest.raises(ValueError, match="at least one target"):
        LoRAConfig(targets=())


def test_lora_config_alpha_defaults_to_rank():
    assert LoRAConfig(rank=6).alpha == 6.0


# ---------------------------------------------------------------------------
# adapter application and merge
# ---------------------------------------------------------------------------

def test_lora_apply_is_bitwise_identity():
    model = tiny_model(seed=3)
    toks = list(range(40, 52))
    before = model.forward_embedded(model.embed_tokens(toks))
    lora_apply(model, LoRAConfig(rank=4, dropout=0.0, targets=("q", "v", "head")), seed=9)
    after = model.forward_embedded(model.embed_tokens(toks))
    assert np.array_equal(before, after)


def test_lora_apply_twice_errors():
    model = tiny_model()
    lora_apply(model, LoRAConfig(rank=2, dropout=0.0), seed=0)
    with pytest.raises(ValueError, match="already"):
        lora_apply(model, LoRAConfig(rank=2, dropout=0.0), seed=0)


def test_lora_merge_matches_adapted_model():
    model = tiny_model(seed=1)
    lora_apply(model, LoRAConfig(rank=4, dropout=0.0, targets=("q", "v", "head")), seed=2)
    # give the adapters something to say before merging
    rng = np.random.default_rng(5)
    for _, layer in model._lora_layers():
        layer.b[...] = rng.normal(0.0, 0.1, size=layer.b.shape)
    toks = list(range(10, 26))
    adapted = model.forward_embedded(model.embed_tokens(toks))
    lora_merge(model)
    assert not model.adapted
    assert isinstance(model.head, nn.Linear)
    merged = model.forward_embedded(model.embed_tokens(toks))
    assert np.max(np.abs(adapted - merged)) <= 1e-6


def test_lora_merge_without_adapters_errors():
    with pytest.raises(ValueError, match="no LoRA adapters"):
        lora_merge(tiny_model())


def test_doubling_alpha_doubles_the_head_delta():
    # a head-only adapter enters the logits linearly, so the shift it adds
    # must scale exactly with alpha/rank
    base = tiny_model(seed=4)
    toks = [70, 71, 72, 73]
    l0 = base.forward_embedded(base.embed_tokens(toks))

    deltas = []
    for alpha in (4.0, 8.0):
        m = tiny_model(seed=4)
        lora_apply(m, LoRAConfig(rank=4, alpha=alpha, dropout=0.0, targets=("head",)), seed=6)
        m.head.b[...] = np.random.default_rng(7).normal(0.0, 0.2, size=m.head.b.shape)
        deltas.append(m.forward_embedded(m.embed_tokens(toks)) - l0)
    assert np.allclose(deltas[1], 2.0 * deltas[0], rtol=0.0, atol=1e-10)


def test_variables_cover_adapters_without_duplicates():
    model = tiny_model()
    lora_apply(model, LoRAConfig(rank=3, dropout=0.0, targets=("q", "v", "head")), seed=0)
    names = [n for n, _ in model.variables()]
    assert len(names) == len(set(names))
    assert "head.lora_a" in names and "head.lora_b" in names
    assert "block0.attn.wq.lora_a" in names
    trainable = [n for n, _, _ in model.lora_trainables()]
    assert trainable and all("lora_" in n for n in trainable)


# ---------------------------------------------------------------------------
# forward / decoding
# ---------------------------------------------------------------------------

def test_next_token_dist_is_a_distribution():
    model = tiny_model(seed=8)
    dist = model.next_token_dist(text_prefix(model, [65, 66, 67]), [68])
    assert dist.shape == (model.cfg.vocab_size,)
    assert np.all(dist >= 0.0)
    assert abs(dist.sum() - 1.0) <= 1e-6


def test_next_token_dist_needs_input():
    model = tiny_model()
    empty = FusedInput(h=np.zeros((0, model.cfg.dim)), sensor_token_count=0,
                       query_token_count=0)
    with pytest.raises(ValueError, match="at least one"):
        model.next_token_dist(empty, [])


def test_earlier_logits_ignore_later_rows_bitwise():
    model = tiny_model(seed=11)
    h = model.embed_tokens(list(range(30, 40)))
    full = model.forward_embedded(h)
    bumped = h.copy()
    bumped[-1] += 10.0
    again = model.forward_embedded(bumped)
    assert np.array_equal(full[:-1], again[:-1])
    assert not np.array_equal(full[-1], again[-1])


def test_forward_rejects_empty_and_overlong_sequences():
    model = tiny_model()
    with pytest.raises(ValueError, match="empty"):
        model.forward_embedded(np.zeros((0, model.cfg.dim)))
    with pytest.raises(ValueError, match="max_context"):
        model.forward_embedded(np.zeros((model.cfg.max_context + 1, model.cfg.dim)))


def test_embed_tokens_rejects_out_of_range_ids():
    model = tiny_model()
    with pytest.raises(ValueError, match="out of range"):
        model.embed_tokens([0, model.cfg.vocab_size])


def test_decode_rejects_unknown_mode():
    model = tiny_model()
    with pytest.raises(ValueError, match="decode mode"):
        model.decode(text_prefix(model, [65]), mode="beam")


def test_decode_sample_is_seed_deterministic():
    model = tiny_model(seed=13)
    prefix = text_prefix(model, [65, 66])
    a = model.decode(prefix, max_tokens=6, mode="sample", temperature=0.8, seed=3)
    b = model.decode(prefix, max_tokens=6, mode="sample", temperature=0.8, seed=3)
    assert a == b


def test_decode_zero_temperature_degrades_to_greedy():
    model = tiny_model(seed=13)
    prefix = text_prefix(model, [65, 66])
    greedy = model.decode(prefix, max_tokens=6, mode="greedy")
    frozen = model.decode(prefix, max_tokens=6, mode="sample", temperature=0.0, seed=3)
    assert greedy == frozen


def test_text_prefix_counts():
    model = tiny_model()
    prefix = text_prefix(model, [65, 66, 67])
    assert prefix.sensor_token_count == 0
    assert prefix.query_token_count == 3
    assert prefix.h.shape == (3, model.cfg.dim)


# ---------------------------------------------------------------------------
# fine-tuning
# ---------------------------------------------------------------------------

def test_finetune_example_validation():
    with pytest.raises(ValueError, match="2-D"):
        FinetuneExample(z=np.zeros(4), question=[65], answer=[66])
    with pytest.raises(ValueError, match="non-empty"):
        FinetuneExample(z=np.zeros((1, 4)), question=[65], answer=[])


def make_training_setup(n_examples=3, seed=0):
    model = tiny_model(seed=seed)
    projector = Projector(ProjectorConfig(in_dim=5, out_dim=model.cfg.dim, seed=seed + 1))
    rng = np.random.default_rng(seed + 2)
    examples = [
        FinetuneExample(
            z=rng.normal(size=(2, 5)),
            question=[65 + i, 66 + i],
            answer=[80 + i, 90 + i],
        )
        for i in range(n_examples)
    ]
    return model, projector, examples


def test_batch_loss_matches_per_example_losses():
    model, projector, examples = make_training_setup()
    total_tokens = sum(len(ex.answer) + 1 for ex in examples)
    per = [example_loss(model, projector, ex) for ex in examples]
    combined = batch_loss(model, projector, examples)
    assert combined == pytest.approx(math.fsum(per) / total_tokens, rel=1e-12)


def test_batch_loss_is_bitwise_order_invariant():
    model, projector, examples = make_training_setup(n_examples=5)
    forward = batch_loss(model, projector, examples)
    backward = batch_loss(model, projector, list(reversed(examples)))
    rolled = batch_loss(model, projector, examples[2:] + examples[:2])
    assert forward == backward == rolled


def test_finetune_gradients_match_finite_differences():
    model, projector, examples = make_training_setup()
    lora_apply(model, LoRAConfig(rank=2, dropout=0.0, targets=("q", "v", "head")), seed=4)
    model.zero_grads()
    projector.zero_grads()
    batch_loss(model, projector, examples, grads=True)
    triples = model.lora_trainables() + projector.trainables()
    # B starts at zero, so nudge it to make adapter-A gradients informative
    for name, param, _ in triples:
        if name.endswith("lora_b"):
            param[...] = np.random.default_rng(hash(name) % 2**32).normal(
                0.0, 0.05, size=param.shape)
    model.zero_grads()
    projector.zero_grads()
    batch_loss(model, projector, examples, grads=True)
    fd_check(lambda: batch_loss(model, projector, examples),
             triples, np.random.default_rng(0))


def test_finetune_never_touches_base_weights():
    model, projector, examples = make_training_setup(seed=5)
    base_snapshot = {name: arr.copy() for name, arr in model.variables()}
    finetune(model, projector, examples,
             lora=LoRAConfig(rank=2, dropout=0.0, targets=("q", "v", "head")),
             lr=1e-2, projector_lr=1e-2, batch_size=2, epochs=3, seed=0)
    after = dict(model.variables())
    for name, arr in base_snapshot.items():
        assert np.array_equal(arr, after[name]), f"base weight {name} changed"
    # adapters did move
    assert any(np.any(after[n] != 0.0) for n in after if n.endswith("lora_b"))


def test_finetune_trace_is_bitwise_reproducible():
    traces = []
    for _ in range(2):
        model, projector, examples = make_training_setup(seed=7)
        trace = finetune(model, projector, examples,
                         lora=LoRAConfig(rank=2, dropout=0.1, targets=("q", "v")),
                         lr=1e-2, projector_lr=1e-2, batch_size=2, epochs=4, seed=3)
        traces.append(trace)
    assert traces[0] == traces[1]
    assert all(not layer.train_mode for _, layer in model._lora_layers())


def test_finetune_step_budget_cycles_epochs():
    model, projector, examples = make_training_setup(n_examples=2)
    trace = finetune(model, projector, examples,
                     lora=LoRAConfig(rank=2, dropout=0.0), lr=1e-3,
                     batch_size=2, epochs=1, max_steps=5, seed=0)
    assert len(trace) == 5  # 1 step per epoch, budget forces 5 epochs


def test_finetune_input_validation():
    model, projector, _ = make_training_setup()
    with pytest.raises(ValueError, match="at least one example"):
        finetune(model, projector, [], lora=LoRAConfig(rank=2))
    with pytest.raises(ValueError, match="no adapters"):
        finetune(model, projector,
                 [FinetuneExample(z=np.zeros((0, 5)), question=[65], answer=[66])])


def test_overlong_example_is_rejected():
    model, projector, _ = make_training_setup()
    long_answer = list(range(65, 65 + model.cfg.max_context))
    ex = FinetuneExample(z=np.zeros((0, 5)), question=[65], answer=long_answer)
    with pytest.raises(ValueError, match="max_context|budget"):
        example_loss(model, projector, ex)


def test_single_example_memorization_and_greedy_recall():
    model = CausalLM(LMConfig(vocab_size=512, dim=64, layers=4, heads=4,
                              max_context=256, seed=1))
    projector = Projector(ProjectorConfig(in_dim=16, out_dim=64, seed=2))
    z = np.random.default_rng(0).normal(size=(4, 16))
    question = [65, 66, 67]
    answer = [70, 71]
    ex = FinetuneExample(z=z, question=question, answer=answer)
    trace = finetune(model, projector, [ex],
                     lora=LoRAConfig(rank=8, dropout=0.0, targets=("q", "v", "head")),
                     lr=3e-2, projector_lr=3e-2, batch_size=1, epochs=1,
                     max_steps=120, seed=0)
    assert trace[-1] < 0.05, f"memorization stalled at {trace[-1]:.4f}"
    from sensorlm.fusion import fuse, project
    prefix = fuse(project(z, projector), model.embed_tokens(question))
    assert model.decode(prefix, max_tokens=8) == answer  # stops at EOS


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def test_checkpoint_roundtrip_plain(tmp_path):
    model = tiny_model(seed=21)
    path = tmp_path / "lm.npz"
    save_lm(model, path)
    loaded = load_lm(path)
    toks = [65, 66, 67]
    assert np.array_equal(model.forward_embedded(model.embed_tokens(toks)),
                          loaded.forward_embedded(loaded.embed_tokens(toks)))
    assert not loaded.adapted


def test_checkpoint_roundtrip_with_adapters(tmp_path):
    model, projector, examples = make_training_setup(seed=9)
    finetune(model, projector, examples,
             lora=LoRAConfig(rank=2, dropout=0.0, targets=("q", "v", "head")),
             lr=1e-2, batch_size=3, epochs=2, seed=0)
    path = tmp_path / "lm_adapted.npz"
    save_lm(model, path)
    loaded = load_lm(path)
    assert loaded.adapted
    assert loaded.lora_cfg.targets == ("q", "v", "head")
    assert isinstance(loaded.head, nn.LoRALinear)
    toks = [65, 66, 67, 68]
    assert np.array_equal(model.forward_embedded(model.embed_tokens(toks)),
                          loaded.forward_embedded(loaded.embed_tokens(toks)))


def test_load_rejects_other_checkpoint_kinds(tmp_path):
    path = tmp_path / "other.npz"
    nn.save_checkpoint(path, "projector", {"in_dim": 2}, [("w", np.zeros(2))])
    with pytest.raises(ValueError, match="not a language model"):
        load_lm(path)
