"""Synthetic training/evaluation samples and their on-disk container.

File layout: an ASCII line ``FIMCE-DATA <version> <manifest bytes>``, a JSON
manifest describing the record fields, then ``count`` fixed-stride records.
Channel vectors are interleaved (re, im) little-endian float32; shapes are
little-endian float64. The record block can be memory-mapped directly.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Sequence

import numpy as np

from fimce.bench.config import ExperimentConfig
from fimce.channel import complex_gaussian, noise_variance_for_snr, sample_channel_realization, synthesize_channel
from fimce.geometry import pilot_shape_set
from fimce.neural.train import ChannelDataset

MAGIC = "FIMCE-DATA"
VERSION = 1
SPLITS = {"train": 0, "val": 1, "test": 2, "finetune": 3}


def record_dtype(M: int, N: int) -> np.dtype:
    return np.dtype([
        ("snr_db", "<f8"),
        ("pilot_meas", "<f4", (M, N, 2)),
        ("pilot_shapes", "<f8", (M, N)),
        ("target_shape", "<f8", (N,)),
        ("target_channel", "<f4", (N, 2)),
    ])


def pilot_shapes_for(cfg: ExperimentConfig, M: Optional[int] = None) -> np.ndarray:
    geom = cfg.array_geometry()
    shapes = pilot_shape_set(cfg.pilots.M if M is None else M, cfg.pilots.kind, geom, cfg.bound, rng_seed=cfg.seed)
    return np.stack([s.zeta for s in shapes])


def sample_arrays(cfg: ExperimentConfig, split: str, count: int, seed: int,
                  snr_db: Optional[float] = None, pilot_shapes: Optional[np.ndarray] = None) -> ChannelDataset:
    """Generate ``count`` samples; record ``i`` uses the stream ``(seed, split, i)``.

    Training and validation records draw an integer SNR uniformly from the
    configured range unless ``snr_db`` is given; test records require it.
    """
    if split not in SPLITS:
        raise ValueError(f"unknown split {split!r}")
    if split == "test" and snr_db is None:
        raise ValueError("test split needs a fixed snr_db")
    geom = cfg.array_geometry()
    params = cfg.channel_params()
    Z = pilot_shapes_for(cfg) if pilot_shapes is None else np.asarray(pilot_shapes)
    M, N = Z.shape
    lo, hi = cfg.train.snr_range
    meas = np.empty((count, M, N), np.complex128)
    targets = np.empty((count, N))
    truth = np.empty((count, N), np.complex128)
    snrs = np.empty(count)
    stack = np.empty((M + 1, N))
    stack[:M] = Z
    for i in range(count):
        rng = np.random.default_rng([seed, SPLITS[split], i])
        real = sample_channel_realization(params, rng)
        stack[M] = rng.uniform(-cfg.bound, cfg.bound, N)
        snr = float(rng.integers(lo, hi + 1)) if snr_db is None else float(snr_db)
        H = synthesize_channel(real, stack, geom)
        var = noise_variance_for_snr(snr)
        noise = complex_gaussian((M, N), var, rng) if var > 0 else 0.0
        meas[i] = H[:M] + noise
        targets[i] = stack[M]
        truth[i] = H[M]
        snrs[i] = snr
    return ChannelDataset(meas, Z, targets, truth, snrs)


def to_records(ds: ChannelDataset) -> np.ndarray:
    rec = np.zeros(len(ds), dtype=record_dtype(ds.M, ds.N))
    rec["snr_db"] = ds.snr_db
    rec["pilot_meas"][..., 0] = ds.meas.real
    rec["pilot_meas"][..., 1] = ds.meas.imag
    rec["pilot_shapes"] = np.broadcast_to(ds.pilot_shapes, (len(ds), ds.M, ds.N))
    rec["target_shape"] = ds.targets
    rec["target_channel"][..., 0] = ds.truth.real
    rec["target_channel"][..., 1] = ds.truth.imag
    return rec


def from_records(rec: np.ndarray) -> ChannelDataset:
    meas = rec["pilot_meas"][..., 0].astype(np.float64) + 1j * rec["pilot_meas"][..., 1]
    truth = rec["target_channel"][..., 0].astype(np.float64) + 1j * rec["target_channel"][..., 1]
    shapes = np.asarray(rec["pilot_shapes"], dtype=np.float64)
    if len(rec) and np.all(shapes == shapes[:1]):
        shapes = shapes[0]
    return ChannelDataset(meas, shapes, np.asarray(rec["target_shape"], dtype=np.float64), truth,
                          np.asarray(rec["snr_db"], dtype=np.float64))


def write_dataset(path, ds: ChannelDataset, manifest_extra: Optional[Dict[str, Any]] = None) -> Path:
    rec = to_records(ds)
    dt = rec.dtype
    manifest = {
        "format": "fimce-dataset",
        "version": VERSION,
        "count": len(ds),
        "M": ds.M,
        "N": ds.N,
        "record_bytes": dt.itemsize,
        "fields": [
            {"name": name, "dtype": dt.fields[name][0].base.str, "shape": list(dt.fields[name][0].shape),
             "offset": dt.fields[name][1]}
            for name in dt.names
        ],
    }
    manifest.update(manifest_extra or {})
    text = json.dumps(manifest, sort_keys=True).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(f"{MAGIC} {VERSION} {len(text)}\n".encode())
        fh.write(text)
        fh.write(rec.tobytes())
    return path


@dataclass
class DatasetFile:
    manifest: Dict[str, Any]
    records: np.ndarray

    def __len__(self):
        return len(self.records)

    def to_dataset(self) -> ChannelDataset:
        return from_records(self.records)


def read_dataset(path, mmap: bool = True) -> DatasetFile:
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.readline().decode("ascii", errors="replace").split()
        if len(head) != 3 or head[0] != MAGIC:
            raise ValueError(f"{path} is not a dataset file")
        if int(head[1]) != VERSION:
            raise ValueError(f"unsupported dataset version {head[1]}")
        manifest = json.loads(fh.read(int(head[2])))
        offset = fh.tell()
    dt = record_dtype(manifest["M"], manifest["N"])
    if dt.itemsize != manifest["record_bytes"]:
        raise ValueError("record layout in manifest does not match this reader")
    if mmap:
        records = np.memmap(path, dtype=dt, mode="r", offset=offset, shape=(manifest["count"],))
    else:
        records = np.fromfile(path, dtype=dt, offset=offset, count=manifest["count"])
    return DatasetFile(manifest, records)


def generate_dataset(cfg: ExperimentConfig, split: str, count: int, seed: int, path,
                     snr_db: Optional[float] = None) -> Path:
    ds = sample_arrays(cfg, split, count, seed, snr_db)
    extra = {"split": split, "seed": seed, "snr_db": snr_db, "config": cfg.to_dict()}
    return write_dataset(path, ds, extra)


def training_sets(cfg: ExperimentConfig, seed: Optional[int] = None):
    """``(train, val)`` split of ``cfg.train.n_samples`` samples."""
    seed = cfg.seed if seed is None else seed
    t = cfg.train
    train = sample_arrays(cfg, "train", t.n_samples - t.n_val, seed)
    val = sample_arrays(cfg, "val", t.n_val, seed) if t.n_val else None
    return train, val
