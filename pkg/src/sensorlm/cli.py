"""Command-line entry point wiring the pipeline modules into workflows.

Subcommands cover the full path from raw recordings to ranked sweep results:
ingest -> preprocess -> featurize -> pretrain-encoder -> train-projector ->
gen-captions / gen-qa -> finetune -> classify / judge -> sweep -> report.

Every run validates its YAML config up front, reporting every violation at
once, writes outputs under one run directory, and drops a manifest (config
hash, input hashes, package version) next to them so identical inputs are
recognizable. Reruns reuse model checkpoints and the on-disk LLM cache, so
repeating a subcommand with an unchanged config reproduces its outputs.
Provider responses are cached by request content alone, so when switching
provider behavior (--provider, --rule) over the same prompts, use a fresh
out_dir or clear its cache/ first.

Exit codes: 0 success, 2 configuration errors, 3 data errors, 4 provider
errors, 1 anything else.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import yaml

from . import __version__
from .encoder import EncoderConfig, SensorEncoder, load_encoder, pretrain, save_encoder
from .features import DEFAULT_MA_LEN, compute_features, features_text
from .fusion import (
    Projector,
    fuse,
    load_projector,
    project,
    save_projector,
    train_projector,
)
from .harness import (
    DEFAULT_CLASSES,
    UNCLEAR,
    ClassOutcome,
    ResultRow,
    classification_prompt,
    compute_metrics,
    parse_class,
    variance_report,
    write_results_file,
)
from .ingest import (
    CsvLayout,
    RecordingMeta,
    load_manifest,
    load_recording,
    read_har_csv,
    read_sensor_logger,
    save_recording,
)
from .judge import score_answer, write_score_report
from .llmclient import (
    LLMClient,
    MockProvider,
    ProviderError,
    constant_rule,
    fixed_score_rule,
    truth_label_rule,
)
from .lm import CausalLM, FinetuneExample, LMConfig, LoRAConfig, finetune, load_lm, save_lm
from .promptgen import (
    TUNING_CATEGORIES,
    QARecord,
    parse_caption,
    parse_qa,
    prompt_sha256,
    read_jsonl,
    sensorcap_prompt,
    tuning_prompt,
    write_jsonl,
)
from .signal import Window, apply_norm, downsample, fit_norm, segment, trim
from .sweep import EvalItem, TrialSpec, default_grid, grid_from_mapping, run_sweep, trial_runner
from .sweep import report as sweep_report
from .tokenizer import Tokenizer


# ---------------------------------------------------------------------------
# typed failures -> exit codes
# ---------------------------------------------------------------------------

class CliError(Exception):
    """Base class for typed command failures."""

    exit_code = 1


class ConfigError(CliError):
    exit_code = 2


class DataError(CliError):
    exit_code = 3


# ---------------------------------------------------------------------------
# provider registry
# ---------------------------------------------------------------------------

MOCK_CAPTION_TEXT = (
    "Caption: Steady periodic motion with a stable gravity component.\n"
    "Narration: The oscillation keeps a constant cadence and amplitude from "
    "the start of the window to its end, with no pauses or spikes."
)

MOCK_QA_TEXT = (
    "1. Q: Which signal pattern dominates the window? "
    "A: A steady periodic oscillation in both sensors.\n"
    "2. Q: Does the motion intensity change over time? "
    "A: No, the amplitude stays stable across the window.\n"
    "3. Q: Is the signal consistent with the stated activity? "
    "A: Yes, the cadence and amplitude match it."
)


CLASSIFY_RULES = ("truth", "unclear")


def _mock_provider(cfg: "RunConfig") -> MockProvider:
    if cfg.classify_rule == "truth":
        class_rule = truth_label_rule()
    else:
        class_rule = constant_rule("The identified class is: Unclear.",
                                   match="identified class")
    # Judge rule first: judge prompts embed predicted answers that may
    # themselves contain classification phrasing.
    return MockProvider(rules=[
        fixed_score_rule(cfg.mock_judge_score),
        class_rule,
        constant_rule(MOCK_CAPTION_TEXT, match="labeled sections"),
        constant_rule(MOCK_QA_TEXT, match="question–answer pairs"),
    ])


PROVIDERS = {"mock": _mock_provider}


# ---------------------------------------------------------------------------
# run configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PretrainParams:
    steps: int
    lr: float
    batch: int


@dataclass(frozen=True)
class ProjectorTrainParams:
    lr: float
    batch: int
    epochs: int


@dataclass(frozen=True)
class FinetuneParams:
    lr: float
    projector_lr: float
    batch: int
    epochs: int
    weight_decay: float
    max_steps: Optional[int]


_KNOWN_KEYS = frozenset({
    "data_root", "out_dir", "dataset_manifest", "dataset_name", "class_list",
    "provider", "model_id", "mock_judge_score", "classify_rule", "seed", "runs",
    "trim_lead_s", "trim_tail_s", "target_rate_hz", "window_s", "ma_len",
    "question", "n_qa_pairs", "eval_count", "max_tokens",
    "max_answer_tokens", "sweep_workers", "csv_layout", "encoder", "lm",
    "lora", "pretrain", "projector_train", "finetune", "sweep",
})


@dataclass
class RunConfig:
    """Validated run settings; every path is resolved, every sub-config is
    already constructed (so module preconditions were checked)."""

    raw: dict
    base_dir: Path
    data_root: Path
    out_dir: Path
    dataset_manifest: Optional[Path]
    dataset_name: str
    class_list: tuple[str, ...]
    provider: str
    model_id: str
    mock_judge_score: float
    classify_rule: str
    seed: int
    runs: int
    trim_lead_s: float
    trim_tail_s: float
    target_rate_hz: float
    window_s: float
    ma_len: int
    question: str
    n_qa_pairs: int
    eval_count: int
    max_tokens: int
    max_answer_tokens: int
    sweep_workers: int
    csv_layout: CsvLayout
    encoder_cfg: EncoderConfig
    lm_cfg: LMConfig
    lora_cfg: LoRAConfig
    pretrain_params: PretrainParams
    projector_params: ProjectorTrainParams
    finetune_params: FinetuneParams
    sweep_grid: list[TrialSpec]

    @property
    def recordings_dir(self) -> Path:
        return self.out_dir / "recordings"

    @property
    def windows_dir(self) -> Path:
        return self.out_dir / "windows"

    @property
    def features_dir(self) -> Path:
        return self.out_dir / "features"

    @property
    def datasets_dir(self) -> Path:
        return self.out_dir / "datasets"

    @property
    def results_dir(self) -> Path:
        return self.out_dir / "results"

    @property
    def manifests_dir(self) -> Path:
        return self.out_dir / "manifests"

    @property
    def cache_dir(self) -> Path:
        return self.out_dir / "cache"

    @property
    def checkpoints_dir(self) -> Path:
        return self.out_dir / "checkpoints"

    @property
    def logs_dir(self) -> Path:
        return self.out_dir / "logs"

    def config_sha256(self) -> str:
        canon = json.dumps(self.raw, sort_keys=True, default=str)
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()

    @classmethod
    def from_mapping(cls, doc: dict, base_dir: Path) -> "RunConfig":
        violations: list[str] = []

        unknown = sorted(set(doc) - _KNOWN_KEYS)
        if unknown:
            violations.append(f"unknown config keys: {unknown}")

        def number(section: dict, key: str, default, label: str,
                   minimum=None, above=None, maximum=None, integer=False):
            value = section.get(key, default)
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                violations.append(f"{label}: expected a number, got {value!r}")
                return default
            if integer and not isinstance(value, int):
                violations.append(f"{label}: expected an integer, got {value!r}")
                return default
            if minimum is not None and value < minimum:
                violations.append(f"{label}: must be >= {minimum}, got {value}")
                return default
            if above is not None and value <= above:
                violations.append(f"{label}: must be > {above}, got {value}")
                return default
            if maximum is not None and value > maximum:
                violations.append(f"{label}: must be <= {maximum}, got {value}")
                return default
            return value

        def text(key: str, default: str) -> str:
            value = doc.get(key, default)
            if not isinstance(value, str) or not value.strip():
                violations.append(f"{key}: expected non-empty text, got {value!r}")
                return default
            return value

        def mapping(key: str) -> dict:
            value = doc.get(key) or {}
            if not isinstance(value, dict):
                violations.append(f"{key}: expected a mapping, got {type(value).__name__}")
                return {}
            return value

        # -- paths ---------------------------------------------------------
        data_root = base_dir
        raw_root = doc.get("data_root")
        if not isinstance(raw_root, str) or not raw_root:
            violations.append("data_root: required path is missing")
        else:
            data_root = (base_dir / raw_root).resolve()
            if not data_root.is_dir():
                violations.append(f"data_root: directory does not exist: {data_root}")

        out_dir = base_dir / "out"
        raw_out = doc.get("out_dir")
        if not isinstance(raw_out, str) or not raw_out:
            violations.append("out_dir: required path is missing")
        else:
            out_dir = (base_dir / raw_out).resolve()

        dataset_manifest = None
        raw_manifest = doc.get("dataset_manifest")
        if raw_manifest is not None:
            if not isinstance(raw_manifest, str) or not raw_manifest:
                violations.append(f"dataset_manifest: expected a path, got {raw_manifest!r}")
            else:
                dataset_manifest = (base_dir / raw_manifest).resolve()
                if not dataset_manifest.is_file():
                    violations.append(
                        f"dataset_manifest: file does not exist: {dataset_manifest}")

        dataset_name = text("dataset_name", data_root.name or "dataset")

        # -- classes and provider -------------------------------------------
        class_list = list(DEFAULT_CLASSES)
        raw_classes = doc.get("class_list", class_list)
        if (not isinstance(raw_classes, list) or not raw_classes
                or any(not isinstance(c, str) or not c.strip() for c in raw_classes)):
            violations.append(
                f"class_list: expected a non-empty list of class names, got {raw_classes!r}")
        else:
            class_list = list(raw_classes)
            if len(set(class_list)) != len(class_list):
                violations.append(f"class_list: duplicate names in {class_list}")
            if UNCLEAR in class_list:
                violations.append(
                    f"class_list: {UNCLEAR!r} is the reserved sink label, not a class")

        provider = text("provider", "mock")
        if provider not in PROVIDERS:
            violations.append(
                f"provider: unknown provider {provider!r}; registered: {sorted(PROVIDERS)}")
        model_id = text("model_id", provider if isinstance(provider, str) else "mock")
        mock_judge_score = number(doc, "mock_judge_score", 65.0,
                                  "mock_judge_score", minimum=0.0, maximum=100.0)
        classify_rule = text("classify_rule", "truth")
        if classify_rule not in CLASSIFY_RULES:
            violations.append(
                f"classify_rule: must be one of {CLASSIFY_RULES}, got {classify_rule!r}")

        # -- scalars ---------------------------------------------------------
        seed = number(doc, "seed", 0, "seed", integer=True, minimum=0)
        runs = number(doc, "runs", 1, "runs", integer=True, minimum=1)
        trim_lead_s = number(doc, "trim_lead_s", 2.0, "trim_lead_s", minimum=0.0)
        trim_tail_s = number(doc, "trim_tail_s", 2.0, "trim_tail_s", minimum=0.0)
        target_rate_hz = number(doc, "target_rate_hz", 20.0, "target_rate_hz", above=0.0)
        window_s = number(doc, "window_s", 6.0, "window_s", above=0.0)
        ma_len = number(doc, "ma_len", DEFAULT_MA_LEN, "ma_len", integer=True, minimum=1)
        question = text("question", "What activity does this sensor window show?")
        n_qa_pairs = number(doc, "n_qa_pairs", 3, "n_qa_pairs", integer=True, minimum=1)
        eval_count = number(doc, "eval_count", 6, "eval_count", integer=True, minimum=1)
        max_tokens = number(doc, "max_tokens", 256, "max_tokens", integer=True, minimum=1)
        max_answer_tokens = number(doc, "max_answer_tokens", 24,
                                   "max_answer_tokens", integer=True, minimum=1)
        sweep_workers = number(doc, "sweep_workers", 1, "sweep_workers",
                               integer=True, minimum=1)

        # -- csv layout ------------------------------------------------------
        layout_doc = mapping("csv_layout")
        layout_kwargs = {"channel_cols": ("ax", "ay", "az", "gx", "gy", "gz")}
        if "time_col" not in layout_doc and "implicit_rate_hz" not in layout_doc:
            layout_kwargs["time_col"] = "t"
        layout_kwargs.update(layout_doc)
        csv_layout = CsvLayout(channel_cols=layout_kwargs["channel_cols"], time_col="t")
        try:
            csv_layout = CsvLayout(**layout_kwargs)
        except (TypeError, ValueError) as e:
            violations.append(f"csv_layout: {e}")

        # -- model configs (module preconditions run in their constructors) --
        frames_expected = int(round(window_s * target_rate_hz))
        enc_defaults = dict(channels=6, frames=frames_expected,
                            rate_hz=target_rate_hz, hidden=32, layers=1,
                            heads=2, mask_ratio=0.15, pool=12, seed=0)
        encoder_cfg = EncoderConfig(**enc_defaults)
        try:
            encoder_cfg = EncoderConfig(**{**enc_defaults, **mapping("encoder")})
        except (TypeError, ValueError) as e:
            violations.append(f"encoder: {e}")
        else:
            if encoder_cfg.frames != frames_expected:
                violations.append(
                    f"encoder: frames {encoder_cfg.frames} does not match "
                    f"window_s * target_rate_hz = {frames_expected}")
            if abs(encoder_cfg.rate_hz - target_rate_hz) > 1e-9:
                violations.append(
                    f"encoder: rate_hz {encoder_cfg.rate_hz:g} does not match "
                    f"target_rate_hz {target_rate_hz:g}")

        # The workflows tokenize with the bare byte tokenizer, whose id range
        # is 256 bytes + 3 specials; a smaller vocab would reject encoded
        # text and a larger one could decode to unmappable ids.
        lm_defaults = dict(vocab_size=Tokenizer().vocab_size, dim=48,
                           layers=2, heads=4, max_context=256, seed=0)
        lm_cfg = LMConfig(**lm_defaults)
        try:
            lm_cfg = LMConfig(**{**lm_defaults, **mapping("lm")})
        except (TypeError, ValueError) as e:
            violations.append(f"lm: {e}")

        lora_doc = dict(mapping("lora"))
        if isinstance(lora_doc.get("targets"), list):
            lora_doc["targets"] = tuple(lora_doc["targets"])
        lora_defaults = dict(rank=8, targets=("q", "v", "head"))
        lora_cfg = LoRAConfig(**lora_defaults)
        try:
            lora_cfg = LoRAConfig(**{**lora_defaults, **lora_doc})
        except (TypeError, ValueError) as e:
            violations.append(f"lora: {e}")

        # -- training parameter groups ----------------------------------------
        pre_doc = mapping("pretrain")
        extra = sorted(set(pre_doc) - {"steps", "lr", "batch"})
        if extra:
            violations.append(f"pretrain: unknown keys {extra}")
        pretrain_params = PretrainParams(
            steps=number(pre_doc, "steps", 60, "pretrain.steps", integer=True, minimum=1),
            lr=number(pre_doc, "lr", 1e-3, "pretrain.lr", above=0.0),
            batch=number(pre_doc, "batch", 8, "pretrain.batch", integer=True, minimum=1),
        )

        proj_doc = mapping("projector_train")
        extra = sorted(set(proj_doc) - {"lr", "batch", "epochs"})
        if extra:
            violations.append(f"projector_train: unknown keys {extra}")
        projector_params = ProjectorTrainParams(
            lr=number(proj_doc, "lr", 1e-4, "projector_train.lr", above=0.0),
            batch=number(proj_doc, "batch", 32, "projector_train.batch",
                         integer=True, minimum=1),
            epochs=number(proj_doc, "epochs", 1, "projector_train.epochs",
                          integer=True, minimum=1),
        )

        fin_doc = mapping("finetune")
        extra = sorted(set(fin_doc) - {"lr", "projector_lr", "batch", "epochs",
                                       "weight_decay", "max_steps"})
        if extra:
            violations.append(f"finetune: unknown keys {extra}")
        max_steps = fin_doc.get("max_steps")
        if max_steps is not None:
            max_steps = number(fin_doc, "max_steps", None, "finetune.max_steps",
                               integer=True, minimum=1)
        finetune_params = FinetuneParams(
            lr=number(fin_doc, "lr", 3e-2, "finetune.lr", above=0.0),
            projector_lr=number(fin_doc, "projector_lr", 3e-2,
                                "finetune.projector_lr", above=0.0),
            batch=number(fin_doc, "batch", 16, "finetune.batch",
                         integer=True, minimum=1),
            epochs=number(fin_doc, "epochs", 1, "finetune.epochs",
                          integer=True, minimum=1),
            weight_decay=number(fin_doc, "weight_decay", 0.0,
                                "finetune.weight_decay", minimum=0.0),
            max_steps=max_steps,
        )

        # -- sweep grid --------------------------------------------------------
        sweep_doc = mapping("sweep")
        sweep_grid = default_grid()
        if sweep_doc:
            try:
                sweep_grid = grid_from_mapping(sweep_doc)
            except (TypeError, ValueError) as e:
                violations.append(f"sweep: {e}")

        if violations:
            raise ConfigError(
                "invalid configuration:\n  - " + "\n  - ".join(violations))

        return cls(
            raw=doc, base_dir=base_dir, data_root=data_root, out_dir=out_dir,
            dataset_manifest=dataset_manifest, dataset_name=dataset_name,
            class_list=tuple(class_list), provider=provider,
            model_id=model_id, mock_judge_score=float(mock_judge_score),
            classify_rule=classify_rule,
            seed=seed, runs=runs, trim_lead_s=float(trim_lead_s),
            trim_tail_s=float(trim_tail_s),
            target_rate_hz=float(target_rate_hz), window_s=float(window_s),
            ma_len=ma_len, question=question, n_qa_pairs=n_qa_pairs,
            eval_count=eval_count, max_tokens=max_tokens,
            max_answer_tokens=max_answer_tokens, sweep_workers=sweep_workers,
            csv_layout=csv_layout, encoder_cfg=encoder_cfg, lm_cfg=lm_cfg,
            lora_cfg=lora_cfg, pretrain_params=pretrain_params,
            projector_params=projector_params,
            finetune_params=finetune_params, sweep_grid=sweep_grid,
        )


def load_config(path, *, seed: Optional[int] = None,
                provider: Optional[str] = None,
                runs: Optional[int] = None,
                rule: Optional[str] = None) -> RunConfig:
    """Read and validate a YAML run config, applying CLI overrides first so
    the manifest's config hash reflects what actually ran."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as e:
        raise ConfigError(f"{path.name}: not valid YAML ({e})") from None
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError(f"{path.name}: config must be a YAML mapping")
    doc = dict(doc)
    if seed is not None:
        doc["seed"] = seed
    if provider is not None:
        doc["provider"] = provider
    if runs is not None:
        doc["runs"] = runs
    if rule is not None:
        doc["classify_rule"] = rule
    return RunConfig.from_mapping(doc, base_dir=path.resolve().parent)


# ---------------------------------------------------------------------------
# shared plumbing
# ---------------------------------------------------------------------------

def _ensure_dirs(cfg: RunConfig) -> None:
    for d in (cfg.out_dir, cfg.recordings_dir, cfg.windows_dir,
              cfg.features_dir, cfg.datasets_dir, cfg.results_dir,
              cfg.manifests_dir, cfg.cache_dir, cfg.checkpoints_dir,
              cfg.logs_dir):
        d.mkdir(parents=True, exist_ok=True)


def _sha256_path(path: Path) -> str:
    h = hashlib.sha256()
    if path.is_dir():
        for sub in sorted(p for p in path.rglob("*") if p.is_file()):
            h.update(sub.name.encode("utf-8"))
            h.update(sub.read_bytes())
    else:
        h.update(path.read_bytes())
    return h.hexdigest()


def _manifest_key(cfg: RunConfig, path: Path) -> str:
    for tag, root in (("out", cfg.out_dir), ("data", cfg.data_root),
                      ("config", cfg.base_dir)):
        try:
            return f"{tag}:{path.relative_to(root).as_posix()}"
        except ValueError:
            continue
    return path.name


def _write_manifest(cfg: RunConfig, command: str,
                    inputs: Sequence[Path]) -> None:
    doc = {
        "command": command,
        "package_version": __version__,
        "config_sha256": cfg.config_sha256(),
        "provider": cfg.provider,
        "seed": cfg.seed,
        "runs": cfg.runs,
        "inputs_sha256": {
            _manifest_key(cfg, p): _sha256_path(p) for p in inputs
        },
    }
    path = cfg.manifests_dir / f"{command}.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")


def _save_window(w: Window, path: Path) -> None:
    np.savez(path, frames=w.frames, rate_hz=np.float64(w.rate_hz),
             duration_s=np.float64(w.duration_s), label=w.label or "",
             location=w.location, subject_id=w.subject_id)


def _load_window(path: Path) -> Window:
    with np.load(path, allow_pickle=False) as z:
        return Window(frames=z["frames"], rate_hz=float(z["rate_hz"]),
                      duration_s=float(z["duration_s"]),
                      label=str(z["label"]) or None,
                      location=str(z["location"]),
                      subject_id=str(z["subject_id"]))


def _windows(cfg: RunConfig) -> tuple[list[tuple[str, Window]], list[Path]]:
    files = sorted(cfg.windows_dir.glob("*.npz"))
    if not files:
        raise DataError(f"no windows in {cfg.windows_dir}; run preprocess first")
    return [(f.stem, _load_window(f)) for f in files], files


def _recording_files(cfg: RunConfig) -> list[Path]:
    local = sorted(cfg.recordings_dir.glob("*.npz"))
    if local:
        return local
    seeded = cfg.data_root / "recordings"
    if seeded.is_dir():
        found = sorted(seeded.glob("*.npz"))
        if found:
            return found
    raise DataError(
        f"no recordings under {cfg.recordings_dir} or {seeded}; "
        "run ingest or provide saved recordings")


def _labelled(stem: str, w: Window) -> str:
    if not w.label:
        raise DataError(f"window {stem!r} has no activity label")
    return w.label


def _client(cfg: RunConfig) -> LLMClient:
    provider = PROVIDERS[cfg.provider](cfg)
    return LLMClient(provider, cache_dir=cfg.cache_dir,
                     log_path=cfg.logs_dir / "requests.log")


def _encoder_ckpt(cfg: RunConfig) -> SensorEncoder:
    path = cfg.checkpoints_dir / "encoder.npz"
    if not path.is_file():
        raise DataError(f"no encoder checkpoint at {path}; run pretrain-encoder first")
    return load_encoder(path)


def _projector_ckpt(cfg: RunConfig, name: str = "projector.npz") -> Projector:
    path = cfg.checkpoints_dir / name
    if not path.is_file():
        raise DataError(f"no projector checkpoint at {path}; run train-projector first")
    return load_projector(path)


def _qa_records(cfg: RunConfig) -> list[QARecord]:
    path = cfg.datasets_dir / "qa.jsonl"
    if not path.is_file():
        raise DataError(f"no QA dataset at {path}; run gen-qa first")
    records = [r for r in read_jsonl(path) if isinstance(r, QARecord)]
    if not records:
        raise DataError(f"{path} holds no QA records")
    return records


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_ingest(cfg: RunConfig) -> str:
    _ensure_dirs(cfg)
    if cfg.dataset_manifest is None:
        raise ConfigError("ingest needs dataset_manifest in the config")
    manifest = load_manifest(cfg.dataset_manifest)
    inputs: list[Path] = [cfg.dataset_manifest]
    for i, entry in enumerate(manifest.entries):
        src = cfg.data_root / entry.path
        meta = RecordingMeta(
            sensor_location=entry.sensor_location,
            activity_label=entry.activity_label or None,
            subject_id=entry.subject_id,
        )
        if entry.format == "har_csv":
            rec = read_har_csv(src, cfg.csv_layout, meta)
        else:
            rec = read_sensor_logger(src, meta)
        label = entry.activity_label or "unlabelled"
        save_recording(rec, cfg.recordings_dir / f"{i:03d}_{label}.npz")
        inputs.append(src)
    _write_manifest(cfg, "ingest", inputs)
    return f"ingest: {len(manifest.entries)} recordings -> {cfg.recordings_dir}"


def cmd_preprocess(cfg: RunConfig) -> str:
    _ensure_dirs(cfg)
    files = _recording_files(cfg)
    produced: list[tuple[str, Window]] = []
    for f in files:
        rec = load_recording(f)
        rec = trim(rec, cfg.trim_lead_s, cfg.trim_tail_s)
        rec = downsample(rec, cfg.target_rate_hz)
        for j, w in enumerate(segment(rec, cfg.window_s)):
            produced.append((f"{f.stem}_w{j:02d}", w))
    stats = fit_norm([w for _, w in produced])
    np.savez(cfg.checkpoints_dir / "norm_stats.npz", mean=stats.mean,
             std=stats.std)
    for stale in cfg.windows_dir.glob("*.npz"):
        stale.unlink()
    for stem, w in produced:
        _save_window(apply_norm(w, stats), cfg.windows_dir / f"{stem}.npz")
    _write_manifest(cfg, "preprocess", files)
    return (f"preprocess: {len(produced)} windows from {len(files)} "
            f"recordings -> {cfg.windows_dir}")


def cmd_featurize(cfg: RunConfig) -> str:
    _ensure_dirs(cfg)
    pairs, files = _windows(cfg)
    for stem, w in pairs:
        fs = compute_features(w, cfg.ma_len)
        (cfg.features_dir / f"{stem}.txt").write_text(
            features_text(fs) + "\n", encoding="utf-8")
    _write_manifest(cfg, "featurize", files)
    return f"featurize: {len(pairs)} feature files -> {cfg.features_dir}"


def cmd_pretrain_encoder(cfg: RunConfig) -> str:
    _ensure_dirs(cfg)
    pairs, files = _windows(cfg)
    ckpt = cfg.checkpoints_dir / "encoder.npz"
    if ckpt.is_file():
        status = f"pretrain-encoder: reusing checkpoint {ckpt}"
    else:
        p = cfg.pretrain_params
        model, trace = pretrain([w for _, w in pairs], cfg.encoder_cfg,
                                steps=p.steps, lr=p.lr, batch_size=p.batch)
        save_encoder(model, ckpt)
        (cfg.logs_dir / "pretrain_trace.txt").write_text(
            "".join(f"{v:.6f}\n" for v in trace), encoding="utf-8")
        status = (f"pretrain-encoder: {len(trace)} steps, final loss "
                  f"{trace[-1]:.4f} -> {ckpt}")
    _write_manifest(cfg, "pretrain-encoder", files)
    return status


def cmd_train_projector(cfg: RunConfig) -> str:
    _ensure_dirs(cfg)
    pairs, files = _windows(cfg)
    encoder = _encoder_ckpt(cfg)
    ckpt = cfg.checkpoints_dir / "projector.npz"
    if ckpt.is_file():
        status = f"train-projector: reusing checkpoint {ckpt}"
    else:
        tok = Tokenizer()
        lm = CausalLM(cfg.lm_cfg)
        align_pairs = []
        for stem, w in pairs:
            label = _labelled(stem, w)
            z = encoder.encode(w)
            target = lm.embed_tokens(tok.encode(label)).mean(axis=0)
            align_pairs.append((z, np.tile(target, (z.shape[0], 1))))
        p = cfg.projector_params
        projector, trace = train_projector(align_pairs, lr=p.lr,
                                           batch_size=p.batch,
                                           epochs=p.epochs, seed=cfg.seed)
        save_projector(projector, ckpt)
        status = (f"train-projector: {len(trace)} steps, final loss "
                  f"{trace[-1]:.6f} -> {ckpt}")
    _write_manifest(cfg, "train-projector", files)
    return status


def cmd_gen_captions(cfg: RunConfig) -> str:
    _ensure_dirs(cfg)
    pairs, files = _windows(cfg)
    client = _client(cfg)
    records = []
    for stem, w in pairs:
        label = _labelled(stem, w)
        fs = compute_features(w, cfg.ma_len)
        prompt = sensorcap_prompt(w, fs, label=label, location=w.location)
        text = client.complete_text(
            prompt, model_id=cfg.model_id, temperature=0.0,
            max_tokens=cfg.max_tokens, seed=cfg.seed,
            metadata={"truth_label": label})
        records.append(parse_caption(text, features=features_text(fs),
                                     window_ref=stem))
    out = cfg.datasets_dir / "captions.jsonl"
    write_jsonl(records, out)
    _write_manifest(cfg, "gen-captions", files)
    return f"gen-captions: {len(records)} captions -> {out}"


def cmd_gen_qa(cfg: RunConfig) -> str:
    _ensure_dirs(cfg)
    pairs, files = _windows(cfg)
    client = _client(cfg)
    records = []
    short = 0
    for stem, w in pairs:
        label = _labelled(stem, w)
        if not w.location:
            raise DataError(f"window {stem!r} has no sensor location")
        fs = compute_features(w, cfg.ma_len)
        for category in TUNING_CATEGORIES:
            prompt = tuning_prompt(category, w, label, w.location, fs,
                                   n_pairs=cfg.n_qa_pairs)
            text = client.complete_text(
                prompt, model_id=cfg.model_id, temperature=0.0,
                max_tokens=cfg.max_tokens, seed=cfg.seed,
                metadata={"truth_label": label})
            result = parse_qa(text, expected_n=cfg.n_qa_pairs,
                              categories=category, window_ref=stem,
                              label=label, location=w.location,
                              model_id=cfg.model_id,
                              prompt_hash=prompt_sha256(prompt))
            short += int(result.short)
            records.extend(result.records)
    out = cfg.datasets_dir / "qa.jsonl"
    write_jsonl(records, out)
    _write_manifest(cfg, "gen-qa", files)
    note = f" ({short} prompts returned fewer pairs than asked)" if short else ""
    return f"gen-qa: {len(records)} QA records -> {out}{note}"


def _finetune_examples(cfg: RunConfig, encoder: SensorEncoder,
                       tok: Tokenizer) -> tuple[list[QARecord],
                                                list[FinetuneExample],
                                                list[Path]]:
    qa = _qa_records(cfg)
    pairs, wfiles = _windows(cfg)
    windows = dict(pairs)
    examples = []
    for r in qa:
        w = windows.get(r.window_ref)
        if w is None:
            raise DataError(f"QA record references unknown window {r.window_ref!r}")
        examples.append(FinetuneExample(z=encoder.encode(w),
                                        question=tok.encode(r.question),
                                        answer=tok.encode(r.answer)))
    return qa, examples, wfiles + [cfg.datasets_dir / "qa.jsonl"]


def cmd_finetune(cfg: RunConfig) -> str:
    _ensure_dirs(cfg)
    encoder = _encoder_ckpt(cfg)
    tok = Tokenizer()
    qa, examples, inputs = _finetune_examples(cfg, encoder, tok)
    lm_ckpt = cfg.checkpoints_dir / "lm_adapted.npz"
    proj_ckpt = cfg.checkpoints_dir / "projector_tuned.npz"
    if lm_ckpt.is_file() and proj_ckpt.is_file():
        model = load_lm(lm_ckpt)
        projector = load_projector(proj_ckpt)
        status = f"finetune: reusing checkpoint {lm_ckpt}"
    else:
        projector = _projector_ckpt(cfg)
        model = CausalLM(cfg.lm_cfg)
        p = cfg.finetune_params
        trace = finetune(model, projector, examples, lora=cfg.lora_cfg,
                         lr=p.lr, projector_lr=p.projector_lr,
                         batch_size=p.batch, epochs=p.epochs,
                         weight_decay=p.weight_decay, seed=cfg.seed,
                         max_steps=p.max_steps)
        save_lm(model, lm_ckpt)
        save_projector(projector, proj_ckpt)
        (cfg.logs_dir / "finetune_trace.txt").write_text(
            "".join(f"{v:.6f}\n" for v in trace), encoding="utf-8")
        status = (f"finetune: {len(trace)} steps, final loss {trace[-1]:.4f} "
                  f"-> {lm_ckpt}")
    rows = []
    for r, ex in list(zip(qa, examples))[:cfg.eval_count]:
        prefix = fuse(project(ex.z, projector),
                      model.embed_tokens(ex.question))
        ids = model.decode(prefix, max_tokens=cfg.max_answer_tokens)
        predicted = tok.decode(ids).strip() or "(no answer)"
        rows.append({
            "window_ref": r.window_ref, "category": r.category,
            "label": r.label or "unknown",
            "location": r.location or "unknown",
            "question": r.question, "standard_answer": r.answer,
            "predicted_answer": predicted,
        })
    answers = cfg.datasets_dir / "answers.jsonl"
    answers.write_text(
        "".join(json.dumps(row, ensure_ascii=False) + "\n" for row in rows),
        encoding="utf-8")
    _write_manifest(cfg, "finetune", inputs)
    return f"{status}; {len(rows)} eval answers -> {answers}"


def cmd_classify(cfg: RunConfig) -> str:
    _ensure_dirs(cfg)
    pairs, files = _windows(cfg)
    for stem, w in pairs:
        _labelled(stem, w)
    client = _client(cfg)
    rows = []
    run_metrics = []
    for i in range(cfg.runs):
        outcomes = []
        for stem, w in pairs:
            prompt = classification_prompt(w, cfg.class_list)
            text = client.complete_text(
                prompt, model_id=cfg.model_id, temperature=0.0,
                max_tokens=cfg.max_tokens, seed=cfg.seed + i,
                metadata={"truth_label": w.label})
            outcomes.append(ClassOutcome(
                predicted=parse_class(text, cfg.class_list),
                truth=w.label, raw_response=text))
        m = compute_metrics(outcomes)
        run_metrics.append(m)
        rows.append(ResultRow(
            model_id=f"{cfg.model_id}@seed{cfg.seed + i}",
            context_budget=cfg.lm_cfg.max_context, dataset=cfg.dataset_name,
            f1=m.macro_f1, precision=m.macro_precision,
            recall=m.macro_recall))
    stats = variance_report(run_metrics) if cfg.runs > 1 else None
    out = cfg.results_dir / "classification.tsv"
    write_results_file(rows, out, runs=stats)
    _write_manifest(cfg, "classify", files)
    return (f"classify: macro F1 {run_metrics[-1].macro_f1:.4f} over "
            f"{len(pairs)} windows, {cfg.runs} run(s) -> {out}")


_ANSWER_FIELDS = ("window_ref", "category", "label", "location", "question",
                  "standard_answer", "predicted_answer")


def cmd_judge(cfg: RunConfig) -> str:
    _ensure_dirs(cfg)
    path = cfg.datasets_dir / "answers.jsonl"
    if not path.is_file():
        raise DataError(f"no answers file at {path}; run finetune first")
    rows = []
    for lineno, line in enumerate(
            path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as e:
            raise DataError(f"{path.name} line {lineno}: {e.msg}") from None
        missing = [k for k in _ANSWER_FIELDS if not doc.get(k)]
        if missing:
            raise DataError(f"{path.name} line {lineno}: missing fields {missing}")
        rows.append(doc)
    if not rows:
        raise DataError(f"{path} is empty")
    client = _client(cfg)

    def generate(prompt: str) -> str:
        return client.complete_text(prompt, model_id=cfg.model_id,
                                    temperature=0.0,
                                    max_tokens=cfg.max_tokens, seed=cfg.seed)

    scored = []
    for doc in rows:
        qa = QARecord(question=doc["question"], answer=doc["standard_answer"],
                      category=doc["category"], window_ref=doc["window_ref"],
                      label=doc["label"], location=doc["location"])
        score = score_answer(generate, doc["standard_answer"], doc["label"],
                             doc["location"], doc["predicted_answer"])
        scored.append((qa, score))
    out = cfg.results_dir / "judge_scores.tsv"
    summary = write_score_report(scored, out)
    _write_manifest(cfg, "judge", [path])
    return (f"judge: overall {summary.overall:.2f} over "
            f"{summary.n_scored} answers -> {out}")


def cmd_sweep(cfg: RunConfig) -> str:
    _ensure_dirs(cfg)
    encoder = _encoder_ckpt(cfg)
    tok = Tokenizer()
    qa, examples, inputs = _finetune_examples(cfg, encoder, tok)
    by_ref = {r.window_ref: ex for r, ex in zip(qa, examples)}
    eval_items = []
    for category in TUNING_CATEGORIES:
        record = next((r for r in qa if r.category == category), None)
        if record is None:
            raise DataError(
                f"QA set has no {category!r} records; the sweep needs every "
                f"category in {TUNING_CATEGORIES}")
        ex = by_ref[record.window_ref]
        eval_items.append(EvalItem(
            z=ex.z, question=tuple(tok.encode(record.question)),
            standard_answer=record.answer, category=category,
            label=record.label or "unknown",
            location=record.location or "unknown"))
    client = _client(cfg)

    def generate(prompt: str) -> str:
        return client.complete_text(prompt, model_id=cfg.model_id,
                                    temperature=0.0,
                                    max_tokens=cfg.max_tokens, seed=cfg.seed)

    runner = trial_runner(
        lm_cfg=cfg.lm_cfg, projector_in_dim=encoder.cfg.hidden,
        tokenizer=tok, train_examples=examples, eval_set=eval_items,
        generate=generate, lora_targets=cfg.lora_cfg.targets,
        max_answer_tokens=cfg.max_answer_tokens)
    ranked = run_sweep(cfg.sweep_grid, runner, max_workers=cfg.sweep_workers)
    out = cfg.results_dir / "sweep.tsv"
    sweep_report(ranked, out)
    _write_manifest(cfg, "sweep", inputs)
    best = next((r for r in ranked if r.ok), None)
    n_failed = sum(1 for r in ranked if not r.ok)
    if best is None:
        return f"sweep: all {len(ranked)} trials failed -> {out}"
    return (f"sweep: {len(ranked)} trials ({n_failed} failed); best overall "
            f"{best.overall:.2f} at rank {best.spec.lora_rank}, "
            f"lr {best.spec.lr:g} -> {out}")


def cmd_report(cfg: RunConfig) -> str:
    _ensure_dirs(cfg)
    tables = sorted(cfg.results_dir.glob("*.tsv"))
    parts = [f"== {t.name} ==\n{t.read_text(encoding='utf-8').rstrip()}\n"
             for t in tables]
    text = "\n".join(parts) if parts else "no result tables found\n"
    out = cfg.results_dir / "report.txt"
    out.write_text(text, encoding="utf-8")
    _write_manifest(cfg, "report", tables)
    return f"report: {len(tables)} tables -> {out}"


COMMANDS = {
    "ingest": (cmd_ingest, "read raw recordings listed in the dataset manifest"),
    "preprocess": (cmd_preprocess, "trim, downsample, window, and normalize recordings"),
    "featurize": (cmd_featurize, "write per-window statistical feature files"),
    "pretrain-encoder": (cmd_pretrain_encoder, "masked-reconstruction pretraining of the sensor encoder"),
    "train-projector": (cmd_train_projector, "align sensor embeddings with the language model"),
    "finetune": (cmd_finetune, "adapter fine-tuning on the generated QA dataset"),
    "gen-captions": (cmd_gen_captions, "generate window captions via the provider"),
    "gen-qa": (cmd_gen_qa, "generate the QA dataset via the provider"),
    "classify": (cmd_classify, "zero-shot activity classification via the provider"),
    "judge": (cmd_judge, "score predicted answers against standards"),
    "sweep": (cmd_sweep, "hyperparameter search ranked by judged quality"),
    "report": (cmd_report, "collect result tables into one report"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sensorlm",
        description="Sensor-language pipeline workflows.")
    sub = parser.add_subparsers(dest="command", metavar="command",
                                required=True)
    for name, (fn, help_text) in COMMANDS.items():
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", required=True,
                        help="YAML run configuration file")
        sp.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
        sp.add_argument("--provider", default=None,
                        help="override the provider selection")
        sp.add_argument("--runs", type=int, default=None,
                        help="repeat the evaluation N times and summarize variance")
        if name == "classify":
            sp.add_argument("--rule", default=None, choices=CLASSIFY_RULES,
                            help="mock provider answer rule for classification")
        sp.set_defaults(fn=fn)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, seed=args.seed,
                          provider=args.provider, runs=args.runs,
                          rule=getattr(args, "rule", None))
        print(args.fn(cfg))
        return 0
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return ConfigError.exit_code
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return DataError.exit_code
    except ProviderError as e:
        print(f"provider error: {e}", file=sys.stderr)
        return 4
    except (ValueError, OSError) as e:
        # Module-level precondition failures surface as data problems.
        print(f"data error: {e}", file=sys.stderr)
        return DataError.exit_code
    except Exception as e:  # noqa: BLE001 - last-resort exit mapping
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
