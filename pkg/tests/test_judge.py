"""Judge prompts, score parsing, aggregation arithmetic, and agreement."""

import itertools
import math

import numpy as np
import pytest

from sensorlm import judge
from sensorlm.promptgen import QARecord


# ---------------------------------------------------------------------------
# q_final and QualityScore
# ---------------------------------------------------------------------------

def test_q_final_known_values():
    assert judge.q_final(100, 100, 100, 100) == 100.0
    assert judge.q_final(80, 70, 60, 50) == 65.0
    assert judge.q_final(0, 0, 0, 100) == 25.0


def test_q_final_rejects_out_of_range():
    with pytest.raises(ValueError, match="correctness"):
        judge.q_final(-1, 50, 50, 50)
    with pytest.raises(ValueError, match="helpfulness"):
        judge.q_final(50, 50, 50, 100.5)


def test_q_final_is_permutation_invariant_and_monotone():
    axes = (90.0, 70.0, 55.0, 20.0)
    base = judge.q_final(*axes)
    for perm in itertools.permutations(axes):
        assert judge.q_final(*perm) == base
    assert judge.q_final(91.0, 70.0, 55.0, 20.0) > base


def test_quality_score_axis_consistency():
    s = judge.QualityScore.from_axes(80, 70, 60, 50, assessment="ok", rater_id="r1")
    assert s.q_final == 65.0
    with pytest.raises(ValueError, match="all four"):
        judge.QualityScore(q_final=50.0, correctness=50.0)
    with pytest.raises(ValueError, match="mean of the axes"):
        judge.QualityScore(q_final=99.0, correctness=10.0, completeness=10.0,
                           consistency=10.0, helpfulness=10.0)
    with pytest.raises(ValueError, match="q_final"):
        judge.QualityScore.from_overall(101.0)


# ---------------------------------------------------------------------------
# prompt
# ---------------------------------------------------------------------------

def test_eval_prompt_contains_markers_and_sections():
    prompt = judge.eval_prompt("The activity is biking.", "biking", "wrist",
                               "Probably biking.")
    assert "Quality score: <0–100>" in prompt
    assert "Assessment:" in prompt
    for section in ["1. Standard answer:", "2. Activity label:",
                    "3. Sensor location:", "4. Predicted answer:"]:
        assert section in prompt
    again = judge.eval_prompt("The activity is biking.", "biking", "wrist",
                              "Probably biking.")
    assert prompt == again


def test_eval_prompt_axes_variant_lists_all_axes():
    prompt = judge.eval_prompt("std", "biking", "wrist", "pred", axes=True)
    for marker in judge.AXIS_MARKERS.values():
        assert marker in prompt
    assert "Quality score:" not in prompt


def test_eval_prompt_rejects_empty_fields():
    good = dict(standard_answer="s", label="l", location="w", predicted_answer="p")
    for name in good:
        bad = dict(good)
        bad[name] = "  "
        with pytest.raises(ValueError, match="non-empty"):
            judge.eval_prompt(**bad)


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

def test_parse_score_basic():
    score, assessment = judge.parse_score(
        "Quality score: 85\nAssessment: Good grounding.")
    assert score == 85.0
    assert assessment == "Good grounding."


def test_parse_score_decimal_and_missing_assessment():
    score, assessment = judge.parse_score("Quality score: 87.5")
    assert score == 87.5
    assert assessment == ""


def test_parse_score_out_of_range():
    with pytest.raises(ValueError, match="\\[0, 100\\]"):
        judge.parse_score("Quality score: 120")


def test_parse_score_missing_marker():
    with pytest.raises(ValueError, match="unparseable judgment"):
        judge.parse_score("I would rate this 80 out of 100.")


def test_parse_score_first_occurrence_mid_paragraph():
    text = ("After weighing the evidence the verdict is Quality score: 62 "
            "overall. Later it also says Quality score: 99.\n"
            "Assessment: Mixed.")
    score, assessment = judge.parse_score(text)
    assert score == 62.0
    assert assessment == "Mixed."


def test_parse_axis_scores():
    text = ("Correctness score: 80\nCompleteness score: 70\n"
            "Consistency score: 60\nHelpfulness score: 50\n"
            "Assessment: Uneven but grounded.")
    s = judge.parse_axis_scores(text, rater_id="gpt")
    assert s.q_final == 65.0
    assert s.rater_id == "gpt"
    assert s.assessment == "Uneven but grounded."
    with pytest.raises(ValueError, match="Helpfulness"):
        judge.parse_axis_scores(text.replace("Helpfulness", "Kindness"))


def test_score_answer_retries_once_then_errors():
    calls = []

    def flaky(prompt):
        calls.append(prompt)
        return "garbage" if len(calls) == 1 else "Quality score: 70\nAssessment: Fine."

    s = judge.score_answer(flaky, "std", "biking", "wrist", "pred")
    assert s.q_final == 70.0
    assert len(calls) == 2

    calls.clear()
    with pytest.raises(ValueError, match="after re-prompt"):
        judge.score_answer(lambda p: (calls.append(p), "nonsense")[1],
                           "std", "biking", "wrist", "pred")
    assert len(calls) == 2  # exactly one try + one re-prompt


# ---------------------------------------------------------------------------
# aggregation
# ---------------------------------------------------------------------------

def test_aggregate_overall_reference_values():
    assert judge.aggregate_overall([75.0, 71.0, 70.5]) == 72.17
    assert judge.aggregate_overall([78.2, 81.7]) == 79.95
    assert judge.aggregate_overall([72.0, 78.0]) == 75.0


def test_aggregate_overall_singleton_and_empty():
    assert judge.aggregate_overall([66.6]) == 66.6
    with pytest.raises(ValueError, match="no category means"):
        judge.aggregate_overall([])


def test_round_half_up_rounds_the_printed_value():
    # binary nearest-even would give 2.67 here; the printed value says 2.68
    assert judge.round_half_up(2.675) == 2.68
    assert judge.round_half_up(72.165) == 72.17
    assert judge.round_half_up(1.0) == 1.0


def qa(category):
    return QARecord(question="Q?", answer="A.", category=category)


def test_summarize_scores_category_means_and_overall():
    scored = [
        (qa("science"), judge.QualityScore.from_overall(75.0)),
        (qa("science"), judge.QualityScore.from_overall(75.0)),
        (qa("narration"), judge.QualityScore.from_overall(71.0)),
        (qa("reliability"), judge.QualityScore.from_overall(70.5)),
    ]
    summary = judge.summarize_scores(scored)
    assert summary.category_means == {
        "narration": 71.0, "reliability": 70.5, "science": 75.0}
    assert summary.overall == 72.17
    assert summary.n_scored == 4
    with pytest.raises(ValueError, match="no scored answers"):
        judge.summarize_scores([])


def test_write_score_report(tmp_path):
    scored = [
        (qa("science"), judge.QualityScore.from_axes(80, 70, 60, 50, rater_id="r1")),
        (qa("narration"), judge.QualityScore.from_overall(71.0, rater_id="r1")),
    ]
    path = tmp_path / "scores.tsv"
    summary = judge.write_score_report(scored, path)
    text = path.read_text(encoding="utf-8")
    assert "80/70/60/50" in text
    assert "science\t65.00" in text
    assert f"overall\t{summary.overall:.2f}" in text


# ---------------------------------------------------------------------------
# inter-rater agreement
# ---------------------------------------------------------------------------

def icc_anova_oracle(x):
    """Loop-based from-scratch ANOVA decomposition (independent path)."""
    n, k = x.shape
    grand = sum(x[i][j] for i in range(n) for j in range(k)) / (n * k)
    ss_rows = sum(k * (sum(x[i]) / k - grand) ** 2 for i in range(n))
    ss_cols = sum(n * (sum(x[i][j] for i in range(n)) / n - grand) ** 2
                  for j in range(k))
    ss_tot = sum((x[i][j] - grand) ** 2 for i in range(n) for j in range(k))
    msr = ss_rows / (n - 1)
    msc = ss_cols / (k - 1)
    mse = (ss_tot - ss_rows - ss_cols) / ((n - 1) * (k - 1))
    return (msr - mse) / (msr + (k - 1) * mse + k * (msc - mse) / n)


def test_icc_perfect_agreement_is_one():
    x = np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0], [4.0, 4.0]])
    assert judge.icc_2_1(x) == pytest.approx(1.0, abs=1e-12)


def test_icc_fixed_matrix_frozen_value():
    x = np.array([[9.0, 2.0], [45.0, 48.0], [85.0, 70.0], [28.0, 31.0]])
    got = judge.icc_2_1(x)
    assert got == pytest.approx(0.9609103078982597, abs=1e-12)
    assert got == pytest.approx(icc_anova_oracle(x), abs=1e-12)


def test_icc_matches_anova_oracle_on_random_matrices():
    rng = np.random.default_rng(7)
    for _ in range(20):
        n = int(rng.integers(3, 9))
        k = int(rng.integers(2, 5))
        x = (50 + rng.normal(0, 10, size=(n, 1))
             + rng.normal(0, 2, size=(1, k))
             + rng.normal(0, 1, size=(n, k)))
        got = judge.icc_2_1(x)
        assert got == pytest.approx(icc_anova_oracle(x), abs=1e-9)
        # agreement is about deviations, not absolute level
        assert judge.icc_2_1(x + 17.3) == pytest.approx(got, abs=1e-9)


def test_icc_degenerate_inputs():
    with pytest.raises(ValueError, match="zero variance"):
        judge.icc_2_1(np.full((4, 3), 7.0))
    with pytest.raises(ValueError, match=">= 2"):
        judge.icc_2_1(np.zeros((1, 3)))
    with pytest.raises(ValueError, match="2-D"):
        judge.icc_2_1(np.zeros(6))
    bad = np.ones((3, 3))
    bad[1, 1] = np.nan
    with pytest.raises(ValueError, match="missing or non-finite"):
        judge.icc_2_1(bad)
