"""Score-driven hyperparameter search over low-rank fine-tuning trials.

Each trial fine-tunes the adapters (plus the projector) at one point of the
(learning rate, projector learning rate, adapter rank, batch, weight decay,
dropout) grid, has a judge score the tuned model's answers per question
category, and is ranked by the judged overall score. The final training loss
is carried along for inspection but is never an input to ranking or
reporting — selection keys on judged quality alone, because a lower loss
does not imply better answers.

Trials are independent of each other; ``run_sweep`` can run them in a thread
pool, with the results list written only by the calling thread.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from . import judge
from .fusion import Projector, ProjectorConfig, fuse, project
from .lm import (
    DEFAULT_LORA_TARGETS,
    CausalLM,
    FinetuneExample,
    LMConfig,
    LoRAConfig,
    finetune,
)
from .promptgen import TUNING_CATEGORIES
from .tokenizer import Tokenizer

# Default search grid: every combination of these adapter learning rates,
# projector learning rates, and adapter ranks (scaling alpha = rank).
LORA_LRS = (1e-4, 3e-5, 1e-6)
PROJECTOR_LRS = (2e-5, 1e-4, 1e-3)
LORA_RANKS = (4, 8, 16, 64, 128)
DEFAULT_BATCH = 16
DEFAULT_QA_SUBSET = 30

REPORT_COLUMNS = (
    "model_size", "n_qa", "lr", "projector_lr", "lora_rank",
    *TUNING_CATEGORIES, "overall",
)


# ---------------------------------------------------------------------------
# trial domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrialSpec:
    """One grid point: everything that varies between fine-tuning runs.

    ``alpha=None`` means the adapter scaling equals the rank. ``qa_subset``
    is how many training QA examples the trial fine-tunes on.
    """

    lr: float
    projector_lr: float
    lora_rank: int
    alpha: Optional[float] = None
    batch: int = DEFAULT_BATCH
    weight_decay: float = 0.0
    dropout: float = 0.0
    qa_subset: int = DEFAULT_QA_SUBSET
    seed: int = 0
    model_label: str = "toy"

    def __post_init__(self):
        if self.lr <= 0.0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.projector_lr <= 0.0:
            raise ValueError(
                f"projector_lr must be positive, got {self.projector_lr}")
        if self.lora_rank < 1:
            raise ValueError(f"lora_rank must be >= 1, got {self.lora_rank}")
        if self.alpha is not None and self.alpha <= 0.0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.batch < 1:
            raise ValueError(f"batch must be >= 1, got {self.batch}")
        if self.weight_decay < 0.0:
            raise ValueError(
                f"weight_decay must be >= 0, got {self.weight_decay}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.qa_subset < 1:
            raise ValueError(f"qa_subset must be >= 1, got {self.qa_subset}")
        if not self.model_label:
            raise ValueError("model_label must be non-empty")

    def lora_config(self, targets: tuple[str, ...] = DEFAULT_LORA_TARGETS,
                    ) -> LoRAConfig:
        """The adapter configuration this grid point asks for."""
        return LoRAConfig(rank=self.lora_rank, alpha=self.alpha,
                          dropout=self.dropout, targets=targets)


@dataclass
class TrialResult:
    """Judged outcome of one trial.

    ``overall`` must equal the aggregate of ``category_means`` (same rule
    the judge uses). ``final_loss`` is informational only: nothing in
    ranking, validation, or reporting ever reads it.
    """

    spec: TrialSpec
    category_means: dict[str, float]
    overall: float
    final_loss: float
    error: str = ""

    def __post_init__(self):
        if not self.ok:
            return
        if set(self.category_means) != set(TUNING_CATEGORIES):
            raise ValueError(
                f"category_means must cover exactly {TUNING_CATEGORIES}, "
                f"got {sorted(self.category_means)}")
        for cat, mean in self.category_means.items():
            if not math.isfinite(mean) or not 0.0 <= mean <= 100.0:
                raise ValueError(f"mean for {cat!r} out of range: {mean}")
        expected = judge.aggregate_overall(list(self.category_means.values()))
        if self.overall != expected:
            raise ValueError(
                f"overall {self.overall} != aggregate of category means "
                f"{expected}")

    @property
    def ok(self) -> bool:
        return self.error == ""

    @classmethod
    def failure(cls, spec: TrialSpec, error: str) -> "TrialResult":
        if not error:
            raise ValueError("failure needs a non-empty error message")
        return cls(spec=spec, category_means={}, overall=float("nan"),
                   final_loss=float("nan"), error=error)


# ---------------------------------------------------------------------------
# ranking and sweep driver
# ---------------------------------------------------------------------------

def _rank_key(result: TrialResult):
    # Quality first (descending); ties prefer a smaller adapter, then the
    # smaller learning rate, so ordering is deterministic.
    return (-result.overall, result.spec.lora_rank, result.spec.lr)


def rank_results(results: Sequence[TrialResult]) -> list[TrialResult]:
    """Sort by overall score descending; failed trials go last, in input
    order. Pure: re-ranking an already ranked list changes nothing."""
    ok = sorted((r for r in results if r.ok), key=_rank_key)
    failed = [r for r in results if not r.ok]
    return ok + failed


def run_sweep(
    grid: Sequence[TrialSpec],
    run_trial: Callable[[TrialSpec], TrialResult],
    max_workers: int = 1,
) -> list[TrialResult]:
    """Run every grid point through ``run_trial`` and rank the outcomes.

    A trial that raises is recorded as a failed result (its error message
    kept) and the sweep continues. With ``max_workers > 1`` trials run in a
    thread pool; the results list is still assembled only on this thread.
    """
    specs = list(grid)
    if not specs:
        raise ValueError("sweep grid is empty")
    if max_workers < 1:
        raise ValueError(f"max_workers must be >= 1, got {max_workers}")

    def attempt(spec: TrialSpec) -> TrialResult:
        try:
            result = run_trial(spec)
        except Exception as exc:  # noqa: BLE001 - recorded, sweep continues
            return TrialResult.failure(spec, f"{type(exc).__name__}: {exc}")
        if not isinstance(result, TrialResult):
            raise TypeError(
                f"run_trial must return a TrialResult, got {type(result)}")
        return result

    if max_workers == 1:
        results = [attempt(spec) for spec in specs]
    else:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(attempt, specs))
    return rank_results(results)


# ---------------------------------------------------------------------------
# grid construction
# ---------------------------------------------------------------------------

def default_grid(qa_subset: int = DEFAULT_QA_SUBSET, seed: int = 0,
                 model_label: str = "toy") -> list[TrialSpec]:
    """The full documented grid: 3 adapter rates x 3 projector rates x 5
    ranks, batch 16, one epoch, scaling alpha = rank."""
    return [
        TrialSpec(lr=lr, projector_lr=plr, lora_rank=rank,
                  qa_subset=qa_subset, seed=seed, model_label=model_label)
        for lr in LORA_LRS
        for plr in PROJECTOR_LRS
        for rank in LORA_RANKS
    ]


_GRID_LIST_KEYS = ("lrs", "projector_lrs", "lora_ranks")
_GRID_SCALAR_KEYS = ("batch", "weight_decay", "dropout", "qa_subset",
                     "seed", "model_label")


def grid_from_mapping(cfg: Mapping) -> list[TrialSpec]:
    """Build a grid from a config mapping (e.g. a parsed sweep file).

    ``lrs`` / ``projector_lrs`` / ``lora_ranks`` are lists whose product
    forms the grid (defaults: the documented values); the scalar keys apply
    to every trial. Unknown keys are rejected.
    """
    unknown = sorted(set(cfg) - set(_GRID_LIST_KEYS) - set(_GRID_SCALAR_KEYS))
    if unknown:
        raise ValueError(f"unknown sweep config keys: {unknown}")
    lrs = list(cfg.get("lrs", LORA_LRS))
    plrs = list(cfg.get("projector_lrs", PROJECTOR_LRS))
    ranks = list(cfg.get("lora_ranks", LORA_RANKS))
    for name, values in (("lrs", lrs), ("projector_lrs", plrs),
                         ("lora_ranks", ranks)):
        if not values:
            raise ValueError(f"sweep config key {name!r} is empty")
    scalars = {k: cfg[k] for k in _GRID_SCALAR_KEYS if k in cfg}
    return [
        TrialSpec(lr=float(lr), projector_lr=float(plr), lora_rank=int(rank),
                  **scalars)
        for lr in lrs
        for plr in plrs
        for rank in ranks
    ]


# ---------------------------------------------------------------------------
# running a real trial
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EvalItem:
    """One held-out question the judge scores the tuned model on."""

    z: np.ndarray
    question: tuple[int, ...]
    standard_answer: str
    category: str
    label: str
    location: str

    def __post_init__(self):
        object.__setattr__(self, "z", np.asarray(self.z, dtype=np.float64))
        if self.z.ndim != 2:
            raise ValueError(f"z must be 2-D (rows, width), got {self.z.shape}")
        if not self.question:
            raise ValueError("question token ids must be non-empty")
        if self.category not in TUNING_CATEGORIES:
            raise ValueError(
                f"category must be one of {TUNING_CATEGORIES}, "
                f"got {self.category!r}")
        for name in ("standard_answer", "label", "location"):
            if not getattr(self, name):
                raise ValueError(f"{name} must be non-empty")


def trial_runner(
    *,
    lm_cfg: LMConfig,
    projector_in_dim: int,
    tokenizer: Tokenizer,
    train_examples: Sequence[FinetuneExample],
    eval_set: Sequence[EvalItem],
    generate: Callable[[str], str],
    lora_targets: tuple[str, ...] = DEFAULT_LORA_TARGETS,
    max_answer_tokens: int = 32,
) -> Callable[[TrialSpec], TrialResult]:
    """Bind the shared assets of a sweep into a per-spec trial function.

    Each call builds a fresh model and projector, fine-tunes for one epoch
    at the trial's grid point, decodes an answer for every eval item, and has
    ``generate`` (the judge) score it. Categories aggregate exactly as the
    judge module does.
    """
    train_examples = list(train_examples)
    eval_items = list(eval_set)
    if not train_examples:
        raise ValueError("trial_runner needs training examples")
    if not eval_items:
        raise ValueError("trial_runner needs a non-empty eval set")
    covered = {item.category for item in eval_items}
    if covered != set(TUNING_CATEGORIES):
        raise ValueError(
            f"eval set must cover every category in {TUNING_CATEGORIES}, "
            f"got {sorted(covered)}")

    def run_one(spec: TrialSpec) -> TrialResult:
        # Fresh-but-identical base weights per trial: grid points differ
        # only in what the trial spec varies, and no trial sees another's
        # mutations. The trial seed drives adapter init and shuffling.
        model = CausalLM(lm_cfg)
        projector = Projector(ProjectorConfig(
            projector_in_dim, lm_cfg.dim, seed=spec.seed))
        subset = train_examples[:spec.qa_subset]
        trace = finetune(
            model, projector, subset,
            lora=spec.lora_config(lora_targets),
            lr=spec.lr, projector_lr=spec.projector_lr,
            batch_size=spec.batch, epochs=1,
            weight_decay=spec.weight_decay, seed=spec.seed,
        )
        by_cat: dict[str, list[float]] = {}
        for item in eval_items:
            prefix = fuse(project(item.z, projector),
                          model.embed_tokens(item.question))
            ids = model.decode(prefix, max_tokens=max_answer_tokens)
            predicted = tokenizer.decode(ids).strip() or "(no answer)"
            score = judge.score_answer(
                generate, item.standard_answer, item.label, item.location,
                predicted)
            by_cat.setdefault(item.category, []).append(score.q_final)
        means = {cat: math.fsum(vals) / len(vals)
                 for cat, vals in by_cat.items()}
        return TrialResult(
            spec=spec,
            category_means=means,
            overall=judge.aggregate_overall(list(means.values())),
            final_loss=trace[-1],
        )

    return run_one


# ---------------------------------------------------------------------------
# reporting
# ---------------------------------------------------------------------------

def report(results: Sequence[TrialResult], path) -> str:
    """Write the ranked results table; returns the rendered text.

    One row per successful trial, in the order given. The overall column is
    recomputed from the category columns at write time and must match what
    the trial stored. Failed trials are listed in a trailing comment block.
    Empty results produce a header-only file.
    """
    lines = ["\t".join(REPORT_COLUMNS)]
    failed: list[TrialResult] = []
    for r in results:
        if not r.ok:
            failed.append(r)
            continue
        recomputed = judge.aggregate_overall(
            [r.category_means[c] for c in TUNING_CATEGORIES])
        if recomputed != r.overall:
            raise ValueError(
                f"overall column mismatch for {r.spec}: stored {r.overall}, "
                f"recomputed {recomputed}")
        cells = [
            r.spec.model_label,
            str(r.spec.qa_subset),
            f"{r.spec.lr:g}",
            f"{r.spec.projector_lr:g}",
            str(r.spec.lora_rank),
            *(f"{judge.round_half_up(r.category_means[c], 2):.2f}"
              for c in TUNING_CATEGORIES),
            f"{r.overall:.2f}",
        ]
        lines.append("\t".join(cells))
    for r in failed:
        lines.append(f"# failed\t{r.spec.model_label}\tlr={r.spec.lr:g}\t"
                     f"projector_lr={r.spec.projector_lr:g}\t"
                     f"rank={r.spec.lora_rank}\t{r.error}")
    text = "\n".join(lines) + "\n"
    Path(path).write_text(text, encoding="utf-8")
    return text
