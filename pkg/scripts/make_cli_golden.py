"""Regenerate the small checkpoint and eval report used by the CLI golden-file test."""

import shutil
import sys
import tempfile
from pathlib import Path

from noilin.cli import main

DATA = Path(__file__).resolve().parents[1] / "tests" / "data"

CONFIG = """{
  "dataset": {"kind": "ternary", "n": 150, "sigma": 0.3, "seed": 3, "test_count": 45, "validation_count": 30},
  "model": {"hidden": [8]},
  "train": {"epochs": 6, "batch_size": 15, "base_lr": 0.1, "attack": {"epsilon": 0.25, "steps": 3}},
  "seed": 5
}
"""

with tempfile.TemporaryDirectory() as tmp:
    tmp = Path(tmp)
    (tmp / "cfg.json").write_text(CONFIG)
    if main(["train", str(tmp / "cfg.json"), "--out", str(tmp / "run")]) != 0:
        sys.exit("training failed")
    shutil.copy(tmp / "run" / "last.ckpt", DATA / "golden.ckpt")
    shutil.copy(tmp / "run" / "test.csv", DATA / "golden_test.csv")
    main(["eval", str(DATA / "golden.ckpt"), "--data", str(DATA / "golden_test.csv"),
          "--attack", "pgd40", "--attack", "cw30", "--out", str(DATA / "golden_eval.csv")])
