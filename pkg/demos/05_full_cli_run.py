"""
The whole pipeline through the command line
===========================================

Builds a tiny synthetic corpus in a temporary directory, writes a run
config, then drives every stage through the CLI exactly as a shell user
would: preprocess, pretrain, align, generate prompts, fine-tune,
classify, judge, sweep, report. Fully offline via the mock provider.
"""

import tempfile
from pathlib import Path

import yaml

from sensorlm import synth
from sensorlm.cli import main
from sensorlm.ingest import save_recording

with tempfile.TemporaryDirectory() as tmp:
    root = Path(tmp)
    rec_dir = root / "data" / "recordings"
    rec_dir.mkdir(parents=True)
    for i, label in enumerate(("standing", "walking", "run")):
        rec = synth.synthetic_recording(label, duration_s=22.0, seed=i)
        save_recording(rec, rec_dir / f"{label}.npz")

    cfg = root / "run.yaml"
    cfg.write_text(yaml.safe_dump({
        "data_root": "data",
        "out_dir": "out",
        "class_list": ["standing", "walking", "run"],
        "pretrain": {"steps": 5},          # keep the demo quick
        "finetune": {"max_steps": 4},
        "eval_count": 3,
        "sweep": {"lrs": [3e-2], "projector_lrs": [3e-2],
                  "lora_ranks": [2, 4], "qa_subset": 8},
    }), encoding="utf-8")

    for cmd in ("preprocess", "featurize", "pretrain-encoder",
                "train-projector", "gen-captions", "gen-qa", "finetune",
                "classify", "judge", "sweep", "report"):
        print(f"$ sensorlm {cmd} --config run.yaml")
        code = main([cmd, "--config", str(cfg)])
        assert code == 0, f"{cmd} exited {code}"

    print("\n--- report.txt ---")
    print((root / "out" / "results" / "report.txt").read_text())
