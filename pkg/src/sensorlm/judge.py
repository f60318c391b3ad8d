"""Structured answer grading: judge prompts, score parsing, aggregation, ICC.

Two judging modes share one prompt skeleton. The overall mode asks for a
single ``Quality score: <0-100>`` plus a short assessment; the axes mode asks
for one score per quality axis (correctness, completeness, consistency,
helpfulness) whose arithmetic mean becomes the final quality number. Both
modes are parsed defensively: one re-prompt on unparseable output, then a
hard error.

Aggregation reads like a printed table: category means are the plain
arithmetic means of per-answer final scores, and the overall number is the
mean of the category means, reported at two decimals with half-up rounding
of the printed value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .promptgen import QARecord

SCORE_MIN = 0.0
SCORE_MAX = 100.0

QUALITY_AXES = ("correctness", "completeness", "consistency", "helpfulness")

JUDGE_INSTRUCTION = (
    "Use the standard answer, activity label, sensor location, and predicted "
    "answer to evaluate correctness, completeness, consistency, and "
    "helpfulness. Provide a numeric score and brief assessment."
)

SCORE_MARKER = "Quality score:"
ASSESSMENT_MARKER = "Assessment:"
OVERALL_FORMAT_LINES = (
    "Quality score: <0–100>",
    "Assessment: <1–2 sentence summary>",
)
AXIS_MARKERS = {
    "correctness": "Correctness score:",
    "completeness": "Completeness score:",
    "consistency": "Consistency score:",
    "helpfulness": "Helpfulness score:",
}


def _check_range(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value) or not SCORE_MIN <= value <= SCORE_MAX:
        raise ValueError(
            f"{name} must be in [{SCORE_MIN:g}, {SCORE_MAX:g}], got {value}"
        )
    return value


def q_final(correctness: float, completeness: float, consistency: float,
            helpfulness: float) -> float:
    """Arithmetic mean of the four quality axes, each validated to [0, 100]."""
    axes = [
        _check_range("correctness", correctness),
        _check_range("completeness", completeness),
        _check_range("consistency", consistency),
        _check_range("helpfulness", helpfulness),
    ]
    return math.fsum(axes) / 4.0


@dataclass
class QualityScore:
    """One judged answer: either four axis scores (with their mean as the
    final number) or a single overall score, plus the judge's assessment."""

    q_final: float
    correctness: Optional[float] = None
    completeness: Optional[float] = None
    consistency: Optional[float] = None
    helpfulness: Optional[float] = None
    assessment: str = ""
    rater_id: str = ""

    def __post_init__(self):
        axes = (self.correctness, self.completeness, self.consistency,
                self.helpfulness)
        present = [a for a in axes if a is not None]
        if present and len(present) != 4:
            raise ValueError("either all four axis scores or none")
        if present:
            expect = q_final(*axes)
            if abs(self.q_final - expect) > 1e-9:
                raise ValueError(
                    f"q_final {self.q_final} is not the mean of the axes ({expect})"
                )
        else:
            _check_range("q_final", self.q_final)

    @classmethod
    def from_axes(cls, correctness: float, completeness: float,
                  consistency: float, helpfulness: float,
                  assessment: str = "", rater_id: str = "") -> "QualityScore":
        return cls(
            q_final=q_final(correctness, completeness, consistency, helpfulness),
            correctness=float(correctness), completeness=float(completeness),
            consistency=float(consistency), helpfulness=float(helpfulness),
            assessment=assessment, rater_id=rater_id,
        )

    @classmethod
    def from_overall(cls, score: float, assessment: str = "",
                     rater_id: str = "") -> "QualityScore":
        return cls(q_final=float(score), assessment=assessment, rater_id=rater_id)


# ---------------------------------------------------------------------------
# prompts
# ---------------------------------------------------------------------------

def eval_prompt(standard_answer: str, label: str, location: str,
                predicted_answer: str, axes: bool = False) -> str:
    """Render the judging prompt over the four required inputs.

    With ``axes=False`` the output format asks for one overall quality score;
    with ``axes=True`` it asks for one score per axis. Empty inputs are
    rejected — a judge cannot grade what it was never shown.
    """
    fields = {
        "standard answer": standard_answer,
        "activity label": label,
        "sensor location": location,
        "predicted answer": predicted_answer,
    }
    for name, value in fields.items():
        if not value.strip():
            raise ValueError(f"{name} must be non-empty")
    if axes:
        format_lines = [f"{AXIS_MARKERS[a]} <0–100>" for a in QUALITY_AXES]
        format_lines.append(OVERALL_FORMAT_LINES[1])
    else:
        format_lines = list(OVERALL_FORMAT_LINES)
    return "\n".join([
        JUDGE_INSTRUCTION,
        "",
        f"1. Standard answer: {standard_answer}",
        f"2. Activity label: {label}",
        f"3. Sensor location: {location}",
        f"4. Predicted answer: {predicted_answer}",
        "",
        "Respond in the format:",
        *format_lines,
    ])


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

def _first_number_after(text: str, marker: str) -> float:
    at = text.find(marker)
    if at < 0:
        raise ValueError(f"unparseable judgment: missing {marker!r}")
    rest = text[at + len(marker):]
    num = ""
    for ch in rest.lstrip():
        if ch.isdigit() or (ch in "+-." and (not num or ch == ".")):
            num += ch
        elif num:
            break
        elif ch.isspace():
            continue
        else:
            break
    try:
        value = float(num)
    except ValueError:
        raise ValueError(
            f"unparseable judgment: no number after {marker!r}"
        ) from None
    return _check_range(f"score after {marker!r}", value)


def _assessment_after(text: str) -> str:
    at = text.find(ASSESSMENT_MARKER)
    if at < 0:
        return ""
    return text[at + len(ASSESSMENT_MARKER):].strip()


def parse_score(text: str) -> tuple[float, str]:
    """(score, assessment) from an overall-mode judgment.

    The score is the first number after the quality-score marker; values
    outside [0, 100] are rejected rather than clamped. The assessment is
    whatever follows its marker (empty when absent).
    """
    return _first_number_after(text, SCORE_MARKER), _assessment_after(text)


def parse_axis_scores(text: str, rater_id: str = "") -> QualityScore:
    """QualityScore from an axes-mode judgment (all four markers required)."""
    values = {a: _first_number_after(text, AXIS_MARKERS[a]) for a in QUALITY_AXES}
    return QualityScore.from_axes(
        assessment=_assessment_after(text), rater_id=rater_id, **values
    )


def score_answer(
    generate: Callable[[str], str],
    standard_answer: str,
    label: str,
    location: str,
    predicted_answer: str,
    rater_id: str = "judge",
    axes: bool = False,
) -> QualityScore:
    """Prompt a judge and parse its verdict, re-prompting once on garbage."""
    prompt = eval_prompt(standard_answer, label, location, predicted_answer,
                         axes=axes)
    last_error: Optional[ValueError] = None
    for _ in range(2):  # one try + one re-prompt
        text = generate(prompt)
        try:
            if axes:
                return parse_axis_scores(text, rater_id=rater_id)
            score, assessment = parse_score(text)
            return QualityScore.from_overall(score, assessment, rater_id)
        except ValueError as e:
            last_error = e
    raise ValueError(f"judgment unparseable after re-prompt: {last_error}")


# ---------------------------------------------------------------------------
# aggregation
# ---------------------------------------------------------------------------

def round_half_up(value: float, decimals: int = 2) -> float:
    """Round the printed value of ``value`` half-up at ``decimals`` places."""
    q = Decimal(1).scaleb(-decimals)
    return float(Decimal(repr(float(value))).quantize(q, rounding=ROUND_HALF_UP))


def aggregate_overall(category_means: Sequence[float]) -> float:
    """Mean of category means, reported at two decimals (half-up)."""
    means = list(category_means)
    if not means:
        raise ValueError("no category means to aggregate")
    return round_half_up(math.fsum(means) / len(means), 2)


@dataclass
class ScoreSummary:
    category_means: dict[str, float]
    overall: float
    n_scored: int


def summarize_scores(
    scored: Sequence[tuple[QARecord, QualityScore]],
) -> ScoreSummary:
    """Category means of final scores, plus the overall two-decimal number.

    Categories aggregate in sorted name order; each category mean is the
    plain mean of its answers' final scores (unrounded internally — rounding
    happens only at the overall/report layer).
    """
    if not scored:
        raise ValueError("no scored answers to summarize")
    by_cat: dict[str, list[float]] = {}
    for qa, score in scored:
        by_cat.setdefault(qa.category, []).append(score.q_final)
    means = {
        cat: math.fsum(vals) / len(vals) for cat, vals in sorted(by_cat.items())
    }
    return ScoreSummary(
        category_means=means,
        overall=aggregate_overall(list(means.values())),
        n_scored=len(scored),
    )


def write_score_report(
    scored: Sequence[tuple[QARecord, QualityScore]],
    path,
) -> ScoreSummary:
    """Write per-answer rows plus a summary block; returns the summary."""
    summary = summarize_scores(scored)
    lines = ["# answer scores", "window\tcategory\trater\taxes\tq_final"]
    for qa, s in scored:
        axes_txt = (
            "-" if s.correctness is None else
            "/".join(f"{v:g}" for v in (s.correctness, s.completeness,
                                        s.consistency, s.helpfulness))
        )
        lines.append(
            f"{qa.window_ref or '-'}\t{qa.category}\t{s.rater_id or '-'}\t"
            f"{axes_txt}\t{s.q_final:.4f}"
        )
    lines.append("")
    lines.append("# summary")
    for cat, mean in summary.category_means.items():
        lines.append(f"{cat}\t{round_half_up(mean, 2):.2f}")
    lines.append(f"overall\t{summary.overall:.2f}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return summary


# ---------------------------------------------------------------------------
# inter-rater agreement
# ---------------------------------------------------------------------------

def icc_2_1(ratings: np.ndarray) -> float:
    """Single-measure absolute-agreement coefficient, two-way
    random-effects form, from the classical ANOVA decomposition.

    ``ratings`` is (n_subjects, n_raters) with no missing cells. A matrix
    with zero total variance has no defined agreement and raises instead of
    returning NaN.
    """
    x = np.asarray(ratings, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"ratings must be 2-D (subjects, raters), got {x.shape}")
    n, k = x.shape
    if n < 2 or k < 2:
        raise ValueError(f"need >= 2 subjects and >= 2 raters, got {n}x{k}")
    if not np.all(np.isfinite(x)):
        raise ValueError("ratings contain missing or non-finite cells")

    grand = x.mean()
    ss_total = float(((x - grand) ** 2).sum())
    if ss_total == 0.0:
        raise ValueError("zero variance: every rating is identical")

    row_means = x.mean(axis=1)
    col_means = x.mean(axis=0)
    ss_rows = k * float(((row_means - grand) ** 2).sum())
    ss_cols = n * float(((col_means - grand) ** 2).sum())
    ss_err = ss_total - ss_rows - ss_cols

    ms_rows = ss_rows / (n - 1)
    ms_cols = ss_cols / (k - 1)
    ms_err = max(ss_err / ((n - 1) * (k - 1)), 0.0)  # guard tiny negatives

    denom = ms_rows + (k - 1) * ms_err + k * (ms_cols - ms_err) / n
    if denom == 0.0:
        raise ValueError("zero variance: agreement undefined")
    return (ms_rows - ms_err) / denom
