"""Cached trained models shared by the acceptance suite.

Checkpoints live in ``$FIMCE_ARTIFACTS`` (default ``<repo>/artifacts``) and
are trained on first use. Run this file directly to pre-train everything.
"""
from __future__ import annotations

import json
import os
import sys
import time
from pathlib import Path

from fimce.bench.config import ExperimentConfig
from fimce.bench.dataset import training_sets
from fimce.neural.checkpoint import load_checkpoint, save_checkpoint
from fimce.neural.train import train

ARTIFACTS = Path(os.environ.get("FIMCE_ARTIFACTS", Path(__file__).resolve().parents[1] / "artifacts"))
PILOT_COUNTS = (4, 8, 16, 32)
RUNS = {
    "full": {},
    "smoke": {"train__n_samples": 2000, "train__n_val": 200, "train__epochs": 5},
}


def run_config(run: str = "full", M: int = 16) -> ExperimentConfig:
    return ExperimentConfig().replace(pilots__M=M, **RUNS[run])


def checkpoint_path(run: str, M: int) -> Path:
    return ARTIFACTS / f"hfno_{run}_M{M}.ckpt"


def ensure_model(run: str = "full", M: int = 16):
    """Load (or train and cache) a model; ``meta['wall_seconds']`` covers data generation plus training."""
    path = checkpoint_path(run, M)
    if not path.exists():
        cfg = run_config(run, M)
        t0 = time.perf_counter()
        train_set, val_set = training_sets(cfg)
        model, tlog = train(train_set, val_set, cfg.train, cfg.fno_config(M))
        wall = time.perf_counter() - t0
        meta = {"experiment": cfg.to_dict(), "wall_seconds": wall, "train_seconds": tlog.seconds,
                "best_epoch": tlog.best_epoch, "val_nmse": tlog.val_nmse, "cpu_count": os.cpu_count()}
        save_checkpoint(model, path, meta)
    return load_checkpoint(path)


if __name__ == "__main__":
    runs = sys.argv[1:] or ["smoke:16"] + [f"full:{M}" for M in (16, 4, 8, 32)]
    for item in runs:
        run, M = item.split(":")
        _, meta = ensure_model(run, int(M))
        print(item, json.dumps({k: meta[k] for k in ("wall_seconds", "best_epoch")}), flush=True)
