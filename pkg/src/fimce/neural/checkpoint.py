"""Self-describing checkpoint container.

Layout: one ASCII line ``FIMCE-CKPT <version> <manifest bytes>``, a JSON
manifest (config, tensor table, normalization statistics), then the
parameter tensors as little-endian float32 blobs in manifest order.
"""
from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import numpy as np
import torch

from fimce.neural.model import FnoConfig, HFNO

MAGIC = "FIMCE-CKPT"
VERSION = 1
NORM_BUFFERS = ("in_mean", "in_scale", "out_mean", "out_scale")


class CheckpointError(ValueError):
    pass


def _manifest(model: HFNO, meta: Optional[Dict[str, Any]]):
    tensors, blobs, offset = [], [], 0
    for name, p in model.named_parameters():
        arr = p.detach().cpu().numpy().astype("<f4")
        tensors.append({"name": name, "shape": list(arr.shape), "dtype": "<f4", "offset": offset, "nbytes": arr.nbytes})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    cfg = asdict(model.cfg)
    cfg["modes_per_resolution"] = list(cfg["modes_per_resolution"])
    manifest = {
        "format": "fimce-checkpoint",
        "version": VERSION,
        "config": cfg,
        "tensors": tensors,
        "norm_stats": {b: getattr(model, b).cpu().numpy().astype(np.float64).tolist() for b in NORM_BUFFERS},
        "meta": meta or {},
    }
    return manifest, blobs


def save_checkpoint(model: HFNO, path, meta: Optional[Dict[str, Any]] = None) -> Path:
    manifest, blobs = _manifest(model, meta)
    text = json.dumps(manifest, sort_keys=True).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(f"{MAGIC} {VERSION} {len(text)}\n".encode())
        fh.write(text)
        for b in blobs:
            fh.write(b)
    return path


def read_manifest(path) -> Tuple[Dict[str, Any], int]:
    with open(path, "rb") as fh:
        head = fh.readline().decode("ascii", errors="replace").split()
        if len(head) != 3 or head[0] != MAGIC:
            raise CheckpointError(f"{path} is not a checkpoint file")
        if int(head[1]) != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {head[1]}")
        manifest = json.loads(fh.read(int(head[2])))
        return manifest, fh.tell()


def load_checkpoint(path) -> Tuple[HFNO, Dict[str, Any]]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"model file {path} not found")
    manifest, start = read_manifest(path)
    model = HFNO(FnoConfig(**manifest["config"]))
    raw = path.read_bytes()[start:]
    params = dict(model.named_parameters())
    with torch.no_grad():
        for t in manifest["tensors"]:
            if t["name"] not in params:
                raise CheckpointError(f"unexpected tensor {t['name']}")
            arr = np.frombuffer(raw, dtype=t["dtype"], count=int(np.prod(t["shape"])), offset=t["offset"])
            params[t["name"]].copy_(torch.from_numpy(arr.reshape(t["shape"]).astype(np.float32)))
        model.set_norm_stats(*(manifest["norm_stats"][b] for b in NORM_BUFFERS))
    model.eval()
    return model, manifest.get("meta", {})
