"""Zero-shot activity classification: prompting, response parsing, metrics.

The response parser is a total function: every string maps to a class name
or to the ``Unclear`` sink, never an error. Metric treatment of Unclear is
deliberately asymmetric and centralized here: an Unclear prediction counts
against the true class's recall (the sample was missed) but belongs to no
class's predicted set, so it dilutes no real class's precision. Macro
averages run over the classes actually present in the truth labels.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .signal import Window, serialize_text

UNCLEAR = "Unclear"

DEFAULT_CLASSES = ("standing", "sitting", "walking", "run", "bike")

CLASS_SENTENCE = 'The identified class is: <class_name>'

_SENTENCE_RE = re.compile(r"the identified class is\s*:?\s*", re.IGNORECASE)


def classification_prompt(
    window_or_text: Union[Window, str],
    class_list: Sequence[str] = DEFAULT_CLASSES,
) -> str:
    """Prompt asking for one class from ``class_list`` (plus Unclear).

    Options appear verbatim in class-list order, and the required response
    sentence is spelled out so the parser's first rule can anchor on it.
    """
    classes = list(class_list)
    if not classes:
        raise ValueError("class_list must be non-empty")
    if any(not c.strip() for c in classes):
        raise ValueError("class names must be non-empty")
    body = (
        window_or_text if isinstance(window_or_text, str)
        else serialize_text(window_or_text)
    )
    options = ", ".join(classes)
    instruction = (
        f"Given IMU data, identify the activity class from the following "
        f'options: {options}, or {UNCLEAR}. Return: "{CLASS_SENTENCE}".'
    )
    return f"{instruction}\n\n{body}"


def parse_class(response: str, class_list: Sequence[str]) -> str:
    """Map a model response to a class name or ``Unclear`` (total function).

    Rule 1: a case-insensitive match of the required sentence whose named
    class is in the list wins. Rule 2: otherwise, if exactly one class name
    occurs as a whole word anywhere in the response, that class wins.
    Everything else — zero hits, ambiguity, empty input — is Unclear.
    """
    classes = list(class_list)

    m = _SENTENCE_RE.search(response)
    if m:
        rest = response[m.end():].lstrip(" \t\"'<*[(")
        best: Optional[str] = None
        for cls in classes:
            head = rest[: len(cls)]
            if head.lower() == cls.lower():
                nxt = rest[len(cls): len(cls) + 1]
                if not nxt or not (nxt.isalnum() or nxt == "_"):
                    if best is None or len(cls) > len(best):
                        best = cls
        if best is not None:
            return best

    found = {
        cls for cls in classes
        if re.search(rf"\b{re.escape(cls)}\b", response, re.IGNORECASE)
    }
    if len(found) == 1:
        return found.pop()
    return UNCLEAR


# ---------------------------------------------------------------------------
# outcomes and metrics
# ---------------------------------------------------------------------------

@dataclass
class ClassOutcome:
    """One evaluated sample: what the model said vs. what was true."""

    predicted: str
    truth: str
    raw_response: str = ""

    def __post_init__(self):
        if not self.truth or self.truth == UNCLEAR:
            raise ValueError(f"truth must be a real class name, got {self.truth!r}")
        if not self.predicted:
            raise ValueError("predicted must be a class name or Unclear")


@dataclass
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class MetricsReport:
    per_class: dict[str, ClassMetrics]
    macro_precision: float
    macro_recall: float
    macro_f1: float
    unclear_rate: float
    n: int

    def __post_init__(self):
        for name in ("macro_precision", "macro_recall", "macro_f1", "unclear_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")


def compute_metrics(outcomes: Sequence[ClassOutcome]) -> MetricsReport:
    """Per-class and macro precision/recall/F1 over the truth classes.

    Unclear predictions hurt recall of the true class and nothing else.
    Per-class F1 is 0 when precision + recall is 0. Classes aggregate in
    sorted name order, so the report is invariant to outcome order.
    """
    outcomes = list(outcomes)
    if not outcomes:
        raise ValueError("need at least one outcome")

    truth_classes = sorted({o.truth for o in outcomes})
    tp = {c: 0 for c in truth_classes}
    pred_count: dict[str, int] = {}
    truth_count = {c: 0 for c in truth_classes}
    n_unclear = 0
    for o in outcomes:
        truth_count[o.truth] += 1
        if o.predicted == UNCLEAR:
            n_unclear += 1
            continue
        pred_count[o.predicted] = pred_count.get(o.predicted, 0) + 1
        if o.predicted == o.truth:
            tp[o.truth] += 1

    per_class: dict[str, ClassMetrics] = {}
    for c in truth_classes:
        predicted = pred_count.get(c, 0)
        precision = tp[c] / predicted if predicted else 0.0
        recall = tp[c] / truth_count[c]
        f1 = (2 * precision * recall / (precision + recall)
              if precision + recall > 0 else 0.0)
        per_class[c] = ClassMetrics(precision=precision, recall=recall,
                                    f1=f1, support=truth_count[c])

    k = len(truth_classes)
    return MetricsReport(
        per_class=per_class,
        macro_precision=math.fsum(m.precision for m in per_class.values()) / k,
        macro_recall=math.fsum(m.recall for m in per_class.values()) / k,
        macro_f1=math.fsum(m.f1 for m in per_class.values()) / k,
        unclear_rate=n_unclear / len(outcomes),
        n=len(outcomes),
    )


# ---------------------------------------------------------------------------
# multi-run variance
# ---------------------------------------------------------------------------

SUMMARY_METRICS = ("macro_precision", "macro_recall", "macro_f1", "unclear_rate")


@dataclass
class RunStats:
    """Cross-run statistics of one metric; best/worst are the extreme
    values, not a judgment of desirability."""

    mean: float
    median: float
    variance: float
    best: float
    worst: float

    @property
    def spread(self) -> float:
        return self.best - self.worst


def variance_report(run_metrics: Sequence[MetricsReport]) -> dict[str, RunStats]:
    """Mean / median / population variance / extremes per metric, over runs."""
    runs = list(run_metrics)
    if not runs:
        raise ValueError("need at least one run")
    out: dict[str, RunStats] = {}
    for name in SUMMARY_METRICS:
        values = np.array([getattr(r, name) for r in runs], dtype=np.float64)
        out[name] = RunStats(
            mean=float(values.mean()),
            median=float(np.median(values)),
            variance=float(values.var()),
            best=float(values.max()),
            worst=float(values.min()),
        )
    return out


# ---------------------------------------------------------------------------
# results file
# ---------------------------------------------------------------------------

@dataclass
class ResultRow:
    model_id: str
    context_budget: int
    dataset: str
    f1: float
    precision: float
    recall: float


def write_results_file(
    rows: Sequence[ResultRow],
    path,
    runs: Optional[dict[str, RunStats]] = None,
) -> None:
    """Tab-separated results rows plus an optional cross-run summary block."""
    lines = ["# classification results",
             "model_id\tcontext_budget\tdataset\tf1\tprecision\trecall"]
    for r in rows:
        lines.append(
            f"{r.model_id}\t{r.context_budget}\t{r.dataset}\t"
            f"{r.f1:.4f}\t{r.precision:.4f}\t{r.recall:.4f}"
        )
    if runs is not None:
        lines.append("")
        lines.append("# variance across runs")
        lines.append("metric\tmean\tmedian\tvariance\tbest\tworst\tspread")
        for name, s in runs.items():
            lines.append(
                f"{name}\t{s.mean:.4f}\t{s.median:.4f}\t{s.variance:.6g}\t"
                f"{s.best:.4f}\t{s.worst:.4f}\t{s.spread:.4f}"
            )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
