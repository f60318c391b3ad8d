"""Acceptance suite: twelve verifiable properties of the complete package.

Each criterion is one test that prints a single visible verdict line
(``criterion NN: PASS — ...``) so a plain pytest run shows a one-line result
per criterion; a failing criterion surfaces as that test's FAILED line.
"""

import hashlib
import json
import math
import socket
import time

import numpy as np
import pytest
import yaml

from sensorlm import judge, synth
from sensorlm.cli import main
from sensorlm.encoder import EncoderConfig, SensorEncoder, pretrain
from sensorlm.fusion import (
    Projector,
    ProjectorConfig,
    alignment_loss,
    fuse,
    project,
    train_projector,
)
from sensorlm.harness import (
    UNCLEAR,
    ClassOutcome,
    compute_metrics,
    parse_class,
    variance_report,
)
from sensorlm.ingest import save_recording
from sensorlm.lm import (
    CausalLM,
    FinetuneExample,
    LMConfig,
    LoRAConfig,
    batch_loss,
    finetune,
    lora_apply,
    lora_merge,
    text_prefix,
)
from sensorlm.signal import (
    Window,
    apply_norm,
    downsample,
    fit_norm,
    format_number,
    segment,
    serialize_text,
    trim,
)
from sensorlm.sweep import TrialSpec, TrialResult, rank_results
from sensorlm.sweep import report as sweep_report
from sensorlm.tokenizer import Tokenizer

from gradcheck import fd_check


@pytest.fixture
def verdict(capsys):
    def _announce(number: int, detail: str) -> None:
        with capsys.disabled():
            print(f"\ncriterion {number:02d}: PASS — {detail}")
    return _announce


# ---------------------------------------------------------------------------
# 1. preprocessing anchor
# ---------------------------------------------------------------------------

def test_criterion_01_windowing_anchor(verdict):
    start = time.perf_counter()
    rec = synth.synthetic_recording("walking", duration_s=120.0,
                                    rate_hz=100.0, seed=0)
    windows = segment(downsample(trim(rec, 2.0, 2.0), 20.0), 6.0)
    elapsed = time.perf_counter() - start
    assert len(windows) == 19
    assert all(w.frames.shape == (120, 6) for w in windows)
    assert all(w.rate_hz == 20.0 for w in windows)
    assert elapsed < 1.0
    verdict(1, f"120 s @ 100 Hz -> 19 windows of 120 frames "
               f"in {elapsed * 1000:.0f} ms")


# ---------------------------------------------------------------------------
# 2. serialization golden + truncation property
# ---------------------------------------------------------------------------

SERIALIZED_SHA256 = "a04c74ea5486549d2c31675da0cf5cec1ef17310a904bdc5b814f5a5e8ef60d4"


def test_criterion_02_serialization_stability_and_truncation(verdict):
    rng = np.random.default_rng(7)
    frames = rng.normal(0.0, 1.5, size=(120, 6))
    w = Window(frames=frames, rate_hz=20.0, duration_s=6.0, label="walking")
    text = serialize_text(w)
    again = serialize_text(Window(frames=frames.copy(), rate_hz=20.0,
                                  duration_s=6.0, label="walking"))
    assert text == again
    assert text.startswith("Gyroscope: [[-1.335887, -0.682006, -1.487469], ")
    assert "\nAccelerometer: [[" in text
    assert hashlib.sha256(text.encode("utf-8")).hexdigest() == SERIALIZED_SHA256

    values = np.random.default_rng(2).uniform(-50.0, 50.0, size=10_000)
    worst = max(abs(float(format_number(v)) - v) for v in values)
    assert worst < 1e-6
    verdict(2, f"byte-stable golden hash; max |parsed - original| = "
               f"{worst:.2e} over 10,000 values")


# ---------------------------------------------------------------------------
# 3. FFT against a direct O(T^2) DFT
# ---------------------------------------------------------------------------

def direct_dft_magnitude(x: np.ndarray) -> np.ndarray:
    """O(T^2) DFT magnitudes for the one-sided bins, straight from the sum
    definition (dense coefficient matrix, no fast transform)."""
    T = x.shape[0]
    k = np.arange(T // 2 + 1)[:, None]
    n = np.arange(T)[None, :]
    coeff = np.exp(-2j * np.pi * k * n / T)  # (T//2+1, T)
    return np.abs(coeff @ x)


def test_criterion_03_fft_matches_direct_dft(verdict):
    rng = np.random.default_rng(3)
    worst = 0.0
    worst_parseval = 0.0
    for _ in range(100):
        x = rng.normal(0.0, 2.0, size=(120, 6))
        # The same one-sided transform the feature extractor applies.
        fast = np.abs(np.fft.rfft(x, axis=0))
        direct = direct_dft_magnitude(x)
        scale = np.maximum(np.abs(direct), 1e-9)
        worst = max(worst, float(np.max(np.abs(fast - direct) / scale)))

        spec = np.fft.rfft(x, axis=0)
        for c in range(6):
            time_energy = float(np.sum(x[:, c] ** 2))
            s = np.abs(spec[:, c]) ** 2
            freq_energy = (s[0] + 2.0 * s[1:-1].sum() + s[-1]) / x.shape[0]
            worst_parseval = max(
                worst_parseval,
                abs(time_energy - freq_energy) / time_energy)
    assert worst < 1e-6
    assert worst_parseval < 1e-6
    verdict(3, f"100 windows: worst rel err vs direct DFT {worst:.2e}, "
               f"Parseval {worst_parseval:.2e}")


# ---------------------------------------------------------------------------
# 4. gradient checks: encoder, projector, LoRA-adapted LM
# ---------------------------------------------------------------------------

def test_criterion_04_gradients_match_finite_differences(verdict):
    start = time.perf_counter()

    rng = np.random.default_rng(4)
    enc = SensorEncoder(EncoderConfig(frames=10, rate_hz=20.0, hidden=8,
                                      layers=1, heads=2, mask_ratio=0.3,
                                      seed=0))
    batch = rng.normal(size=(2, 10, 6))
    mask_idx = np.array([[1, 4, 8], [0, 2, 6]])
    enc.zero_grads()
    enc.reconstruction_loss(batch, mask_idx, grads=True)
    worst_enc = fd_check(lambda: enc.reconstruction_loss(batch, mask_idx),
                         enc.trainables(), rng, n_probe=2)

    proj = Projector(ProjectorConfig(in_dim=5, out_dim=3, seed=2))
    pairs = [(rng.normal(size=(4, 5)), rng.normal(size=(4, 3))),
             (rng.normal(size=(4, 5)), rng.normal(size=(7, 3)))]
    proj.zero_grads()
    alignment_loss(proj, pairs, grads=True)
    worst_proj = fd_check(lambda: alignment_loss(proj, pairs),
                          proj.trainables(), rng, n_probe=4)

    model = CausalLM(LMConfig(vocab_size=260, dim=16, layers=1, heads=2,
                              max_context=32, seed=0))
    lm_proj = Projector(ProjectorConfig(in_dim=5, out_dim=16, seed=1))
    ex_rng = np.random.default_rng(2)
    examples = [FinetuneExample(z=ex_rng.normal(size=(2, 5)),
                                question=[65 + i, 66 + i],
                                answer=[80 + i, 90 + i]) for i in range(3)]
    lora_apply(model, LoRAConfig(rank=2, dropout=0.0,
                                 targets=("q", "v", "head")), seed=4)
    triples = model.lora_trainables() + lm_proj.trainables()
    # zero-init B makes adapter-A gradients vanish; nudge B off zero first
    for name, param, _ in triples:
        if name.endswith("lora_b"):
            param[...] = np.random.default_rng(hash(name) % 2**32).normal(
                0.0, 0.05, size=param.shape)
    model.zero_grads()
    lm_proj.zero_grads()
    batch_loss(model, lm_proj, examples, grads=True)
    worst_lm = fd_check(lambda: batch_loss(model, lm_proj, examples),
                        triples, np.random.default_rng(0))

    elapsed = time.perf_counter() - start
    assert max(worst_enc, worst_proj, worst_lm) <= 1e-4
    assert elapsed < 30.0
    verdict(4, f"worst rel err: encoder {worst_enc:.1e}, projector "
               f"{worst_proj:.1e}, adapted LM {worst_lm:.1e} "
               f"({elapsed:.1f} s)")


# ---------------------------------------------------------------------------
# 5. low-rank adapter identities
# ---------------------------------------------------------------------------

def test_criterion_05_adapter_identities(verdict):
    assert LoRAConfig(rank=7).alpha == 7.0  # default scale numerator = rank

    model = CausalLM(LMConfig(vocab_size=260, dim=16, layers=2, heads=2,
                              max_context=16, seed=3))
    h = np.random.default_rng(5).normal(size=(6, 16))
    base_logits = model.forward_embedded(h).copy()

    lora_apply(model, LoRAConfig(
        rank=4, dropout=0.0,
        targets=("q", "k", "v", "o", "mlp_fc1", "mlp_fc2", "head")), seed=1)
    fresh_logits = model.forward_embedded(h)
    assert np.array_equal(base_logits, fresh_logits)  # bitwise: B starts at 0

    projector = Projector(ProjectorConfig(in_dim=5, out_dim=16, seed=0))
    ex_rng = np.random.default_rng(6)
    examples = [FinetuneExample(z=ex_rng.normal(size=(2, 5)),
                                question=[40 + i], answer=[70 + i, 71 + i])
                for i in range(4)]
    finetune(model, projector, examples, lr=3e-2, projector_lr=3e-2,
             batch_size=2, epochs=5, seed=0)
    adapted_logits = model.forward_embedded(h).copy()
    assert not np.array_equal(base_logits, adapted_logits)

    merged = lora_merge(model)
    merged_logits = merged.forward_embedded(h)
    gap = float(np.max(np.abs(adapted_logits - merged_logits)))
    assert gap < 1e-6
    verdict(5, f"zero-init adapters bitwise transparent; merged-weight "
               f"logits within {gap:.1e}")


# ---------------------------------------------------------------------------
# 6. causal-LM contracts + memorization
# ---------------------------------------------------------------------------

def test_criterion_06_causal_lm_contracts(verdict):
    model = CausalLM(LMConfig(vocab_size=260, dim=16, layers=2, heads=2,
                              max_context=24, seed=0))

    prefix = text_prefix(model, [5, 6, 7])
    for tokens in ([], [10], [10, 11, 12]):
        dist = model.next_token_dist(prefix, tokens)
        assert dist.shape == (260,)
        assert dist.min() >= 0.0
        assert abs(float(dist.sum()) - 1.0) <= 1e-6

    h = np.random.default_rng(1).normal(size=(8, 16))
    before = model.forward_embedded(h).copy()
    bumped = h.copy()
    bumped[5:] += 3.0  # perturb only future positions
    after = model.forward_embedded(bumped)
    assert np.array_equal(before[:5], after[:5])
    assert not np.array_equal(before[5:], after[5:])

    start = time.perf_counter()
    fresh = CausalLM(LMConfig(vocab_size=260, dim=16, layers=1, heads=2,
                              max_context=16, seed=2))
    projector = Projector(ProjectorConfig(in_dim=5, out_dim=16, seed=3))
    example = FinetuneExample(z=np.random.default_rng(4).normal(size=(2, 5)),
                              question=[65, 66], answer=[80, 90])
    trace = finetune(fresh, projector, [example],
                     lora=LoRAConfig(rank=8, dropout=0.0,
                                     targets=("q", "v", "head")),
                     lr=3e-2, projector_lr=3e-2, batch_size=1,
                     max_steps=200, seed=0)
    elapsed = time.perf_counter() - start
    assert len(trace) <= 200
    best = min(trace)
    first_below = next(i + 1 for i, v in enumerate(trace) if v < 0.05)
    assert best < 0.05
    assert elapsed < 60.0
    verdict(6, f"distributions sum to 1; causality bitwise; memorized to "
               f"loss {best:.1e} (first < 0.05 at step {first_below}, "
               f"{elapsed:.1f} s)")


# ---------------------------------------------------------------------------
# 7. three-class end-to-end through the harness
# ---------------------------------------------------------------------------

def test_criterion_07_three_class_end_to_end(verdict):
    start = time.perf_counter()
    classes = ("standing", "walking", "run")

    train_raw, held_raw = [], []
    for label in classes:
        for seed in range(8):
            rec = synth.synthetic_recording(label, duration_s=22.0, seed=seed)
            ws = segment(downsample(trim(rec), 20.0), 6.0)
            (held_raw if seed >= 6 else train_raw).extend(ws)
    stats = fit_norm(train_raw)
    train = [apply_norm(w, stats) for w in train_raw]
    held = [apply_norm(w, stats) for w in held_raw]
    assert len(train) == 54 and len(held) == 18

    enc, _ = pretrain(train,
                      EncoderConfig(frames=120, rate_hz=20.0, hidden=32,
                                    layers=1, heads=2, mask_ratio=0.15,
                                    pool=24, seed=0),
                      steps=300, lr=1e-3, batch_size=8)

    tok = Tokenizer()
    model = CausalLM(LMConfig(vocab_size=tok.vocab_size, dim=32, layers=1,
                              heads=2, max_context=32, seed=0))
    align = []
    for w in train:
        z = enc.encode(w)
        target = model.embed_tokens(tok.encode(w.label)).mean(axis=0)
        align.append((z, np.tile(target, (z.shape[0], 1))))
    projector, _ = train_projector(align, lr=1e-3, batch_size=8, epochs=10,
                                   seed=0)

    q_ids = tok.encode("Activity?")
    examples = [FinetuneExample(z=enc.encode(w), question=q_ids,
                                answer=tok.encode(w.label)) for w in train]
    finetune(model, projector, examples,
             lora=LoRAConfig(rank=8, dropout=0.0,
                             targets=("q", "v", "head")),
             lr=3e-2, projector_lr=3e-2, batch_size=8, epochs=20, seed=0)

    outcomes = []
    for w in held:
        prefix = fuse(project(enc.encode(w), projector),
                      model.embed_tokens(q_ids))
        answer = tok.decode(model.decode(prefix, max_tokens=10)).strip()
        outcomes.append(ClassOutcome(predicted=parse_class(answer, classes),
                                     truth=w.label))
    report = compute_metrics(outcomes)
    elapsed = time.perf_counter() - start
    assert report.macro_f1 >= 0.9
    assert elapsed < 600.0
    verdict(7, f"held-out macro F1 {report.macro_f1:.4f} over "
               f"{len(held)} windows ({elapsed:.1f} s)")


# ---------------------------------------------------------------------------
# 8. judge arithmetic anchors
# ---------------------------------------------------------------------------

def test_criterion_08_judge_overall_anchors(verdict):
    assert judge.aggregate_overall([75.0, 71.0, 70.5]) == 72.17
    assert judge.aggregate_overall([78.2, 81.7]) == 79.95
    verdict(8, "mean(75.0, 71.0, 70.5) = 72.17 and "
               "mean(78.2, 81.7) = 79.95 at 2-decimal reporting")


# ---------------------------------------------------------------------------
# 9. intraclass correlation vs from-scratch ANOVA
# ---------------------------------------------------------------------------

def anova_icc(x: np.ndarray) -> float:
    """ICC(2,1) from first principles: mean squares out of explicit
    per-cell residual sums, no shared code with the package."""
    n, k = x.shape
    cells = [float(x[i, j]) for i in range(n) for j in range(k)]
    grand = sum(cells) / (n * k)
    row_mean = [float(x[i, :].sum()) / k for i in range(n)]
    col_mean = [float(x[:, j].sum()) / n for j in range(k)]
    ss_rows = k * sum((rm - grand) ** 2 for rm in row_mean)
    ss_cols = n * sum((cm - grand) ** 2 for cm in col_mean)
    ss_resid = sum(
        (float(x[i, j]) - row_mean[i] - col_mean[j] + grand) ** 2
        for i in range(n) for j in range(k))
    msr = ss_rows / (n - 1)
    msc = ss_cols / (k - 1)
    mse = ss_resid / ((n - 1) * (k - 1))
    return (msr - mse) / (msr + (k - 1) * mse + k * (msc - mse) / n)


def test_criterion_09_icc_matches_independent_anova(verdict):
    rng = np.random.default_rng(9)
    worst = 0.0
    for _ in range(20):
        n = int(rng.integers(4, 13))
        k = int(rng.integers(2, 6))
        subject_effect = rng.normal(0.0, 8.0, size=(n, 1))
        rater_effect = rng.normal(0.0, 2.0, size=(1, k))
        ratings = 50.0 + subject_effect + rater_effect + rng.normal(
            0.0, 3.0, size=(n, k))
        got = judge.icc_2_1(ratings)
        expected = anova_icc(ratings)
        worst = max(worst, abs(got - expected))
        assert abs(got - expected) <= 1e-9

    for n, k in ((3, 2), (5, 3), (8, 4)):
        scores = np.arange(1, n + 1, dtype=np.float64)[:, None]
        perfect = np.tile(scores, (1, k))  # all raters agree exactly
        assert judge.icc_2_1(perfect) == 1.0
    verdict(9, f"20 random matrices within {worst:.1e} of from-scratch "
               f"ANOVA; perfect agreement gives exactly 1.0")


# ---------------------------------------------------------------------------
# 10. classification metrics vs brute-force confusion counts
# ---------------------------------------------------------------------------

def brute_force_metrics(outcomes):
    """Recount the confusion from scratch, following the documented rule:
    an Unclear prediction hurts only the true class's recall."""
    truth_classes = sorted({o.truth for o in outcomes})
    per = {}
    for c in truth_classes:
        tp = sum(1 for o in outcomes if o.truth == c and o.predicted == c)
        predicted_as_c = sum(1 for o in outcomes if o.predicted == c)
        truth_c = sum(1 for o in outcomes if o.truth == c)
        precision = tp / predicted_as_c if predicted_as_c else 0.0
        recall = tp / truth_c
        f1 = (2 * precision * recall / (precision + recall)
              if precision + recall > 0 else 0.0)
        per[c] = (precision, recall, f1)
    k = len(truth_classes)
    macro = tuple(math.fsum(v[i] for v in per.values()) / k for i in range(3))
    unclear = sum(1 for o in outcomes if o.predicted == UNCLEAR) / len(outcomes)
    return per, macro, unclear


def test_criterion_10_metrics_match_brute_force(verdict):
    rng = np.random.default_rng(10)
    for _ in range(1000):
        classes = [f"c{j}" for j in range(int(rng.integers(2, 6)))]
        outcomes = []
        for _ in range(int(rng.integers(1, 40))):
            truth = classes[int(rng.integers(len(classes)))]
            roll = rng.random()
            if roll < 0.15:
                predicted = UNCLEAR
            elif roll < 0.60:
                predicted = truth
            else:
                predicted = classes[int(rng.integers(len(classes)))]
            outcomes.append(ClassOutcome(predicted=predicted, truth=truth))
        report = compute_metrics(outcomes)
        per, macro, unclear = brute_force_metrics(outcomes)
        for c, (precision, recall, f1) in per.items():
            assert report.per_class[c].precision == precision
            assert report.per_class[c].recall == recall
            assert report.per_class[c].f1 == f1
        assert abs(report.macro_precision - macro[0]) <= 1e-12
        assert abs(report.macro_recall - macro[1]) <= 1e-12
        assert abs(report.macro_f1 - macro[2]) <= 1e-12
        assert report.unclear_rate == unclear
    verdict(10, "per-class and macro P/R/F1 match brute-force confusion "
                "counts on 1,000 random outcome lists")


# ---------------------------------------------------------------------------
# 11. offline completeness + ranking never reads the loss
# ---------------------------------------------------------------------------

class _Poison:
    """Blows up on any numeric or comparison use."""

    def _boom(self, *a, **k):
        raise AssertionError("the loss field was read")

    __float__ = __int__ = __bool__ = _boom
    __lt__ = __le__ = __gt__ = __ge__ = __eq__ = _boom
    __add__ = __radd__ = __sub__ = __neg__ = _boom
    __format__ = __str__ = _boom
    __hash__ = object.__hash__


def _trial(rank, lr, means):
    spec = TrialSpec(lr=lr, projector_lr=1e-4, lora_rank=rank)
    cats = dict(zip(("science", "narration", "reliability"), means))
    return TrialResult(spec=spec, category_means=cats,
                       overall=judge.aggregate_overall(means),
                       final_loss=_Poison())


def test_criterion_11_offline_chain_and_loss_blind_ranking(
        tmp_path, monkeypatch, verdict):
    def no_network(*args, **kwargs):
        raise AssertionError("network access attempted")
    monkeypatch.setattr(socket, "socket", no_network)

    rec_dir = tmp_path / "data" / "recordings"
    rec_dir.mkdir(parents=True)
    for i, label in enumerate(("standing", "walking", "run")):
        rec = synth.synthetic_recording(label, duration_s=22.0, seed=i)
        save_recording(rec, rec_dir / f"{label}.npz")
    cfg = tmp_path / "run.yaml"
    cfg.write_text(yaml.safe_dump({
        "data_root": "data", "out_dir": "out",
        "class_list": ["standing", "walking", "run"],
        "pretrain": {"steps": 5},
        "finetune": {"max_steps": 4},
        "eval_count": 3,
        "sweep": {"lrs": [3e-2], "projector_lrs": [3e-2],
                  "lora_ranks": [2, 4], "qa_subset": 8},
    }), encoding="utf-8")
    chain = ("preprocess", "featurize", "pretrain-encoder",
             "train-projector", "gen-captions", "gen-qa", "finetune",
             "classify", "judge", "sweep", "report")
    for cmd in chain:
        assert main([cmd, "--config", str(cfg)]) == 0, cmd
    results = tmp_path / "out" / "results"
    assert (results / "classification.tsv").is_file()
    assert "overall\t65.00" in (results / "judge_scores.tsv").read_text()
    sweep_rows = [l for l in (results / "sweep.tsv").read_text().splitlines()
                  if l and not l.startswith(("model_size", "#"))]
    assert len(sweep_rows) == 2

    # Ranking and reporting run to completion with a poisoned loss field.
    poisoned = [_trial(128, 3e-5, [44.0, 49.0, 44.5]),
                _trial(8, 3e-5, [56.0, 56.5, 51.5])]
    ranked = rank_results(poisoned)
    assert [r.spec.lora_rank for r in ranked] == [8, 128]
    table = sweep_report(ranked, tmp_path / "poison_sweep.tsv")
    assert "56.00\t56.50\t51.50\t54.67" in table
    verdict(11, f"{len(chain)}-command pipeline ran with sockets blocked; "
                "ranking and reporting never read the loss field")


# ---------------------------------------------------------------------------
# 12. variance-aware reporting under --runs N
# ---------------------------------------------------------------------------

def test_criterion_12_runs_variance_matches_recomputation(tmp_path, verdict):
    rec_dir = tmp_path / "data" / "recordings"
    rec_dir.mkdir(parents=True)
    for i, label in enumerate(("walking", "run")):
        rec = synth.synthetic_recording(label, duration_s=22.0, seed=i)
        save_recording(rec, rec_dir / f"{label}.npz")
    cfg = tmp_path / "run.yaml"
    cfg.write_text(yaml.safe_dump({
        "data_root": "data", "out_dir": "out",
        "class_list": ["walking", "run"],
    }), encoding="utf-8")
    assert main(["preprocess", "--config", str(cfg)]) == 0
    assert main(["classify", "--config", str(cfg), "--runs", "3"]) == 0

    lines = (tmp_path / "out" / "results" /
             "classification.tsv").read_text().splitlines()
    run_rows = [l.split("\t") for l in lines if l.startswith("mock@seed")]
    assert len(run_rows) == 3
    by_metric = {"macro_f1": [float(r[3]) for r in run_rows],
                 "macro_precision": [float(r[4]) for r in run_rows],
                 "macro_recall": [float(r[5]) for r in run_rows]}
    block = {parts[0]: parts[1:] for parts in
             (l.split("\t") for l in lines)
             if parts[0] in ("macro_precision", "macro_recall", "macro_f1",
                             "unclear_rate")}
    for metric, values in by_metric.items():
        mean, median, variance, best, worst, spread = block[metric]
        assert mean == f"{np.mean(values):.4f}"
        assert median == f"{np.median(values):.4f}"
        assert variance == f"{np.var(values):.6g}"
        assert best == f"{max(values):.4f}"
        assert worst == f"{min(values):.4f}"
        assert spread == f"{max(values) - min(values):.4f}"
    assert block["unclear_rate"][0] == "0.0000"

    # Unequal runs: summaries must equal plain numpy recomputation.
    def run_report(wrong):
        outs = [ClassOutcome(predicted="a", truth="a")] * (6 - wrong)
        outs += [ClassOutcome(predicted=UNCLEAR, truth="a")] * wrong
        outs += [ClassOutcome(predicted="b", truth="b")] * 6
        return compute_metrics(outs)

    reports = [run_report(w) for w in (0, 1, 3)]
    stats = variance_report(reports)
    for metric in ("macro_precision", "macro_recall", "macro_f1",
                   "unclear_rate"):
        values = [getattr(r, metric) for r in reports]
        s = stats[metric]
        assert s.mean == pytest.approx(np.mean(values), abs=1e-12)
        assert s.median == pytest.approx(np.median(values), abs=1e-12)
        assert s.variance == pytest.approx(np.var(values), abs=1e-12)
        assert s.best == max(values) and s.worst == min(values)
        assert s.spread == pytest.approx(max(values) - min(values), abs=1e-12)
    verdict(12, "--runs 3 variance block and RunStats both match "
                "independent numpy recomputation")
