"""Prompt templates for caption / QA generation, QA parsing, and datasets.

Every renderer here is a pure function of its inputs: identical arguments
produce byte-identical prompts, so generations are cacheable and golden-file
stable. The templates themselves are versioned in-code assets
(PROMPT_VERSION); changing any template text is a format change and must bump
the version.

Records persist as line-delimited JSON with a ``_type`` tag per line, one
record per line, round-trip safe.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence, Union

from .features import FeatureSet, features_text
from .signal import Window, serialize_text, serialized_step_count

PROMPT_VERSION = 1

# categories assigned positionally to the five generated pairs, in order
GENERATION_CATEGORIES = ("factual", "descriptive", "causal", "diagnostic", "inferential")
# categories of the instruction-targeted tuning generator
TUNING_CATEGORIES = ("science", "narration", "reliability")
QA_CATEGORIES = GENERATION_CATEGORIES + TUNING_CATEGORIES

SUMMARY_WORD_CAP = 25
NARRATION_TOKEN_CAP = 500
MAX_SERIALIZED_STEPS = 100

# the one-line feature descriptor that accompanies every serialized window
FEATURES_LINE = "Features: FFT, max, min, median, moving avg, variance"

CAPTION_INSTRUCTION = (
    "You are given one window of inertial sensor data. Respond with two "
    "labeled sections:\n"
    f"Caption: at most {SUMMARY_WORD_CAP} words naming the dominant motion "
    "patterns.\n"
    f"Narration: a step-by-step account of up to {NARRATION_TOKEN_CAP} tokens "
    "describing how the signals evolve over the window."
)

QA_GENERATION_INSTRUCTION = (
    "You are an expert in interpreting gyroscope and accelerometer data. "
    "Based on provided context (including a summary, raw sensor data, "
    "statistical features, and a temporal narration), generate five logical "
    "question–answer pairs requiring deductive reasoning grounded in "
    "the data. Format the output as: 1. Q: ... A: ..."
)

TUNING_INSTRUCTIONS = {
    "science": (
        "Generate questions relating to physics or biomechanics explaining "
        "how IMU sensor dynamics align with activity type."
    ),
    "narration": (
        "Describe activity based on temporal signal patterns, motion "
        "consistency, and event flow."
    ),
    "reliability": (
        "Assess IMU data quality, consistency, and presence of noise or "
        "anomalies that might distort interpretation."
    ),
}

QA_FORMAT_LINE = "Format the output as: 1. Q: ... A: ..."


def prompt_sha256(text: str) -> str:
    """Stable hex digest used as prompt provenance in generated records."""
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# records
# ---------------------------------------------------------------------------

@dataclass
class QARecord:
    """One question-answer pair with its category and provenance."""

    question: str
    answer: str
    category: str
    window_ref: str = ""
    label: str = ""
    location: str = ""
    model_id: str = ""
    prompt_hash: str = ""

    def __post_init__(self):
        if not self.question.strip():
            raise ValueError("question must be non-empty")
        if not self.answer.strip():
            raise ValueError("answer must be non-empty")
        if self.category not in QA_CATEGORIES:
            raise ValueError(
                f"category {self.category!r} not in {sorted(QA_CATEGORIES)}"
            )


@dataclass
class CaptionRecord:
    """Generated description of one window: short caption + long narration.

    The caps are enforced at construction over whitespace-delimited pieces:
    the summary at {SUMMARY_WORD_CAP} words, the narration at
    {NARRATION_TOKEN_CAP} tokens. The narration may be empty while a record
    is mid-pipeline, but an empty narration cannot seed QA generation.
    """

    summary: str
    narration: str = ""
    features_text: str = ""
    window_ref: str = ""

    def __post_init__(self):
        if not self.summary.strip():
            raise ValueError("summary must be non-empty")
        n_words = len(self.summary.split())
        if n_words > SUMMARY_WORD_CAP:
            raise ValueError(
                f"summary has {n_words} words, cap is {SUMMARY_WORD_CAP}"
            )
        n_tokens = len(self.narration.split())
        if n_tokens > NARRATION_TOKEN_CAP:
            raise ValueError(
                f"narration has {n_tokens} tokens, cap is {NARRATION_TOKEN_CAP}"
            )


# ---------------------------------------------------------------------------
# prompt renderers
# ---------------------------------------------------------------------------

def _serialized_blocks(w: Window) -> tuple[str, str]:
    """The two labelled arrays, without their ``Gyroscope: `` prefixes."""
    gyro_line, accel_line = serialize_text(w).split("\n")
    return gyro_line.split(": ", 1)[1], accel_line.split(": ", 1)[1]


def _check_window_size(w: Window) -> None:
    steps = serialized_step_count(w)
    if steps > MAX_SERIALIZED_STEPS:
        raise ValueError(
            f"serialized window has {steps} time steps, cap is {MAX_SERIALIZED_STEPS}"
        )


def sensorcap_prompt(w: Window, fs: FeatureSet, label: str, location: str = "") -> str:
    """Prompt asking for a caption + narration of one serialized window.

    The body carries, in order: the summary line, the gyroscope block, the
    accelerometer block, and the feature descriptor line, followed by the
    numeric per-channel features. The location line is appended only when a
    location is known.
    """
    if not label.strip():
        raise ValueError("label must be non-empty (the summary line requires it)")
    _check_window_size(w)
    parts = [
        CAPTION_INSTRUCTION,
        "",
        f"Summary: {label}",
        serialize_text(w),
        FEATURES_LINE,
        features_text(fs),
    ]
    if location.strip():
        parts.append(f"Location: {location}")
    return "\n".join(parts)


def opensqa_prompt(
    caption: CaptionRecord,
    w: Window,
    label: str,
    location: str,
    fs: FeatureSet,
) -> str:
    """Prompt asking for five reasoning QA pairs over the full context.

    The input block enumerates six sections: activity label, gyroscope data,
    accelerometer data, sensor location, extracted features, and the
    temporal narration produced earlier for the same window.
    """
    if not label.strip():
        raise ValueError("label must be non-empty")
    if not location.strip():
        raise ValueError("location must be non-empty")
    if not caption.narration.strip():
        raise ValueError("caption narration is empty; QA generation needs it")
    _check_window_size(w)
    gyro, accel = _serialized_blocks(w)
    return "\n".join([
        QA_GENERATION_INSTRUCTION,
        "",
        f"1. Activity label: {label}",
        f"2. Gyroscope data: {gyro}",
        f"3. Accelerometer data: {accel}",
        f"4. Sensor location: {location}",
        "5. Extracted IMU features:",
        features_text(fs),
        "6. Temporal narration:",
        caption.narration,
    ])


def tuning_prompt(
    category: str,
    w: Window,
    label: str,
    location: str,
    fs: FeatureSet,
    n_pairs: int = 5,
) -> str:
    """Prompt for one reasoning-focused QA category (science / narration /
    reliability); the category selects the instruction paragraph."""
    if category not in TUNING_CATEGORIES:
        raise ValueError(
            f"category {category!r} not in {sorted(TUNING_CATEGORIES)}"
        )
    if not label.strip():
        raise ValueError("label must be non-empty")
    if not location.strip():
        raise ValueError("location must be non-empty")
    if n_pairs < 1:
        raise ValueError(f"n_pairs must be >= 1, got {n_pairs}")
    _check_window_size(w)
    gyro, accel = _serialized_blocks(w)
    return "\n".join([
        TUNING_INSTRUCTIONS[category],
        "",
        f"Activity label: {label}",
        f"Gyroscope data: {gyro}",
        f"Accelerometer data: {accel}",
        f"Sensor location: {location}",
        "Derived features:",
        features_text(fs),
        "",
        f"Generate {n_pairs} question–answer pairs grounded in the data "
        f"above. {QA_FORMAT_LINE}",
    ])


# ---------------------------------------------------------------------------
# QA parsing / rendering
# ---------------------------------------------------------------------------

# a numbered block opener: "1. Q:" (also tolerates "1) Q:")
_BLOCK_RE = re.compile(r"(?m)^\s*\d+\s*[.)]\s*Q\s*:")
_ANSWER_RE = re.compile(r"\bA\s*:")


@dataclass
class QAParseResult:
    """Parsed pairs plus how many were asked for; ``short`` flags a partial
    parse (the pipeline keeps partial results rather than failing)."""

    records: list[QARecord]
    expected: int

    @property
    def found(self) -> int:
        return len(self.records)

    @property
    def short(self) -> bool:
        return self.found < self.expected


def parse_qa(
    text: str,
    expected_n: int = 5,
    categories: Union[None, str, Sequence[str]] = None,
    window_ref: str = "",
    label: str = "",
    location: str = "",
    model_id: str = "",
    prompt_hash: str = "",
) -> QAParseResult:
    """Parse ``n. Q: ... A: ...`` blocks out of generated text.

    Answers run until the next numbered ``Q:`` opener, so multi-line answers
    survive. Categories are assigned positionally from ``categories`` (default:
    the five-way generation order, cycling if more pairs appear); passing a
    single string applies it to every pair. Zero parseable pairs is an error;
    fewer than ``expected_n`` is flagged on the result, not raised.
    """
    if categories is None:
        cats: Sequence[str] = GENERATION_CATEGORIES
    elif isinstance(categories, str):
        cats = (categories,)
    else:
        cats = tuple(categories)
        if not cats:
            raise ValueError("categories must be non-empty")

    starts = list(_BLOCK_RE.finditer(text))
    records: list[QARecord] = []
    for i, m in enumerate(starts):
        end = starts[i + 1].start() if i + 1 < len(starts) else len(text)
        block = text[m.end():end]
        am = _ANSWER_RE.search(block)
        if am is None:
            continue
        question = block[: am.start()].strip()
        answer = block[am.end():].strip()
        if not question or not answer:
            continue
        records.append(QARecord(
            question=question,
            answer=answer,
            category=cats[len(records) % len(cats)],
            window_ref=window_ref,
            label=label,
            location=location,
            model_id=model_id,
            prompt_hash=prompt_hash,
        ))
    if not records:
        raise ValueError("no question-answer pairs found in generated text")
    return QAParseResult(records=records, expected=expected_n)


def render_qa(records: Sequence[QARecord]) -> str:
    """The inverse of parse_qa for machine-built records: numbered blocks.

    parse_qa(render_qa(rs)) recovers the questions and answers verbatim as
    long as no question contains an ``A:`` marker and no answer opens a line
    with a numbered ``Q:`` block of its own.
    """
    if not records:
        raise ValueError("no records to render")
    return "\n".join(
        f"{i + 1}. Q: {r.question}\nA: {r.answer}" for i, r in enumerate(records)
    )


CAPTION_MARKER = "Caption:"
NARRATION_MARKER = "Narration:"


def parse_caption(text: str, features: str = "", window_ref: str = "") -> CaptionRecord:
    """Split generated caption text at its two section markers."""
    ci = text.find(CAPTION_MARKER)
    if ci < 0:
        raise ValueError(f"missing {CAPTION_MARKER!r} section in generated text")
    ni = text.find(NARRATION_MARKER, ci)
    if ni < 0:
        summary = text[ci + len(CAPTION_MARKER):].strip()
        narration = ""
    else:
        summary = text[ci + len(CAPTION_MARKER):ni].strip()
        narration = text[ni + len(NARRATION_MARKER):].strip()
    return CaptionRecord(
        summary=summary,
        narration=narration,
        features_text=features,
        window_ref=window_ref,
    )


# ---------------------------------------------------------------------------
# dataset files
# ---------------------------------------------------------------------------

_RECORD_TYPES = {"qa": QARecord, "caption": CaptionRecord}
_TYPE_TAGS = {cls: tag for tag, cls in _RECORD_TYPES.items()}

Record = Union[QARecord, CaptionRecord]


def write_jsonl(records: Sequence[Record], path) -> None:
    """One record per line, each tagged with its type for round-tripping."""
    path = Path(path)
    lines = []
    for r in records:
        tag = _TYPE_TAGS.get(type(r))
        if tag is None:
            raise TypeError(f"cannot serialize record of type {type(r).__name__}")
        lines.append(json.dumps({"_type": tag, **asdict(r)}, ensure_ascii=False))
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def read_jsonl(path) -> list[Record]:
    """Read a record file back; malformed lines report their line number."""
    out: list[Record] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValueError(f"line {lineno}: invalid record ({e.msg})") from e
            if not isinstance(doc, dict) or "_type" not in doc:
                raise ValueError(f"line {lineno}: missing record type tag")
            tag = doc.pop("_type")
            cls = _RECORD_TYPES.get(tag)
            if cls is None:
                raise ValueError(f"line {lineno}: unknown record type {tag!r}")
            try:
                out.append(cls(**doc))
            except (TypeError, ValueError) as e:
                raise ValueError(f"line {lineno}: {e}") from e
    return out


def count_by_category(records: Sequence[QARecord]) -> dict[str, int]:
    """Per-category totals for a QA set (insertion-ordered by first use)."""
    counts: dict[str, int] = {}
    for r in records:
        counts[r.category] = counts.get(r.category, 0) + 1
    return counts
