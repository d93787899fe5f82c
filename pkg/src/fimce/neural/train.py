"""Mini-batch training, fine-tuning and loss gradients for :class:`HFNO`."""
from __future__ import annotations

import copy
import logging
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import torch

from fimce.neural.model import FnoConfig, HFNO, features_from_arrays

log = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 64
    lr: float = 1e-3
    lr_step: int = 10
    lr_gamma: float = 0.5
    n_samples: int = 20000
    n_val: int = 1000
    snr_range: Tuple[int, int] = (0, 20)
    seed: int = 0

    def __post_init__(self):
        self.snr_range = tuple(self.snr_range)
        if min(self.epochs, self.batch_size, self.n_samples) < 0 or self.batch_size == 0:
            raise ValueError("training counts must be positive")
        if not 0 <= self.n_val < self.n_samples:
            raise ValueError("n_val must be smaller than n_samples")


@dataclass
class ChannelDataset:
    """In-memory samples: pilot measurements ``(S, M, N)``, shapes, targets and true target channels."""

    meas: np.ndarray
    pilot_shapes: np.ndarray  # (S, M, N) or (M, N)
    targets: np.ndarray  # (S, N)
    truth: np.ndarray  # (S, N) complex
    snr_db: np.ndarray  # (S,)

    def __len__(self):
        return self.meas.shape[0]

    @property
    def M(self) -> int:
        return self.meas.shape[1]

    @property
    def N(self) -> int:
        return self.meas.shape[2]

    def subset(self, idx) -> "ChannelDataset":
        ps = self.pilot_shapes if self.pilot_shapes.ndim == 2 else self.pilot_shapes[idx]
        return ChannelDataset(self.meas[idx], ps, self.targets[idx], self.truth[idx], self.snr_db[idx])

    def features(self, idx=None, dtype=np.float32) -> np.ndarray:
        if idx is None:
            idx = slice(None)
        meas = self.meas[idx]
        ps = self.pilot_shapes if self.pilot_shapes.ndim == 2 else self.pilot_shapes[idx]
        ps = np.broadcast_to(ps, meas.shape)
        return features_from_arrays(meas, ps, self.targets[idx], dtype)


@dataclass
class TrainLog:
    epoch_loss: List[float] = field(default_factory=list)
    val_nmse: List[float] = field(default_factory=list)
    init_val_nmse: float = float("nan")
    best_epoch: int = 0  # 0 means the initialization was best
    seconds: float = 0.0

    def rows(self):
        yield ("epoch", "train_loss", "val_nmse")
        yield (0, "", repr(self.init_val_nmse))
        for i, (l, v) in enumerate(zip(self.epoch_loss, self.val_nmse), start=1):
            yield (i, repr(l), repr(v))


def mse_loss(predictions: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Batch mean of the squared error norm."""
    if predictions.shape != targets.shape:
        raise ValueError(f"prediction shape {tuple(predictions.shape)} != target shape {tuple(targets.shape)}")
    return (predictions - targets).abs().pow(2).sum(dim=-1).mean()


def loss_gradients(model: HFNO, features: torch.Tensor, targets: torch.Tensor) -> Tuple[float, Dict[str, torch.Tensor]]:
    model.zero_grad()
    loss = mse_loss(model(features), targets)
    loss.backward()
    grads = {n: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p))
             for n, p in model.named_parameters()}
    return float(loss.detach()), grads


def compute_norm_stats(ds: ChannelDataset):
    """Per-channel mean and scale of the inputs and the (Re, Im) targets."""
    X = ds.features(dtype=np.float64)
    in_mean = X.mean(axis=(0, 2))
    in_scale = X.std(axis=(0, 2))
    # constant channels (e.g. the flat pilot shape) are scaled by their magnitude
    flat = in_scale <= 1e-9 * np.maximum(np.abs(in_mean), 1e-300)
    in_scale = np.where(flat, np.where(in_mean != 0, np.abs(in_mean), 1.0), in_scale)
    Y = np.stack([ds.truth.real, ds.truth.imag], axis=1)
    out_mean = Y.mean(axis=(0, 2))
    out_scale = Y.std(axis=(0, 2))
    out_scale = np.where(out_scale > 0, out_scale, 1.0)
    return in_mean, in_scale, out_mean, out_scale


def predict(model: HFNO, features: np.ndarray, batch_size: int = 512) -> np.ndarray:
    dtype = next(model.parameters()).dtype
    out = []
    model.eval()
    with torch.no_grad():
        for b in range(0, features.shape[0], batch_size):
            out.append(model(torch.as_tensor(features[b:b + batch_size], dtype=dtype)).numpy())
    return np.concatenate(out).astype(np.complex128)


def dataset_nmse(model: HFNO, ds: ChannelDataset) -> np.ndarray:
    """Per-sample NMSE on denormalized outputs."""
    est = predict(model, ds.features())
    err = np.sum(np.abs(est - ds.truth) ** 2, axis=1)
    return err / np.sum(np.abs(ds.truth) ** 2, axis=1)


def _run_epochs(model: HFNO, train_set: ChannelDataset, val_set: Optional[ChannelDataset], cfg: TrainConfig,
                epochs: int, seed: int, select_best: bool, trainlog: TrainLog) -> HFNO:
    rng = np.random.default_rng(seed)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    sched = torch.optim.lr_scheduler.StepLR(opt, step_size=cfg.lr_step, gamma=cfg.lr_gamma)
    dtype = next(model.parameters()).dtype
    cdtype = torch.complex128 if dtype == torch.float64 else torch.complex64
    best_state = copy.deepcopy(model.state_dict())
    best_val = trainlog.init_val_nmse
    n = len(train_set)
    for epoch in range(1, epochs + 1):
        model.train()
        perm = rng.permutation(n)
        total = 0.0
        for b in range(0, n, cfg.batch_size):
            idx = np.sort(perm[b:b + cfg.batch_size])
            x = torch.as_tensor(train_set.features(idx), dtype=dtype)
            y = torch.as_tensor(train_set.truth[idx], dtype=cdtype)
            loss = mse_loss(model(x), y)
            if not torch.isfinite(loss):
                raise TrainingDivergedError(f"non-finite loss {loss.item()} at epoch {epoch}, batch {b // cfg.batch_size}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        sched.step()
        trainlog.epoch_loss.append(total / n)
        if val_set is not None:
            v = float(np.mean(dataset_nmse(model, val_set)))
            trainlog.val_nmse.append(v)
            if select_best and v <= best_val:
                best_val, trainlog.best_epoch = v, epoch
                best_state = copy.deepcopy(model.state_dict())
            log.info("epoch %d loss %.5f val NMSE %.2f dB", epoch, total / n, 10 * np.log10(v))
        else:
            log.info("epoch %d loss %.5f", epoch, total / n)
    if select_best and val_set is not None:
        model.load_state_dict(best_state)
    return model


def train(train_set: ChannelDataset, val_set: Optional[ChannelDataset], cfg: TrainConfig,
          fno_cfg: FnoConfig, rng_seed: Optional[int] = None) -> Tuple[HFNO, TrainLog]:
    """Fit an H-FNO from scratch and return the best-validation model with its log."""
    if len(train_set) == 0:
        raise ValueError("empty training set")
    if train_set.M != fno_cfg.M:
        raise ValueError(f"dataset has M={train_set.M}, model expects M={fno_cfg.M}")
    fno_cfg.check_resolution(train_set.N)
    seed = cfg.seed if rng_seed is None else rng_seed
    torch.manual_seed(seed)
    model = HFNO(fno_cfg)
    model.set_norm_stats(*compute_norm_stats(train_set))
    trainlog = TrainLog()
    if val_set is not None:
        trainlog.init_val_nmse = float(np.mean(dataset_nmse(model, val_set)))
    else:
        trainlog.init_val_nmse = float("inf")
    t0 = time.perf_counter()
    _run_epochs(model, train_set, val_set, cfg, cfg.epochs, seed, True, trainlog)
    trainlog.seconds = time.perf_counter() - t0
    return model, trainlog


def fine_tune(model: HFNO, new_set: ChannelDataset, epochs: int, cfg: TrainConfig,
              rng_seed: Optional[int] = None) -> HFNO:
    """Continue optimizing a copy of ``model`` on ``new_set``; normalization stays frozen."""
    tuned = copy.deepcopy(model)
    if epochs == 0:
        return tuned
    tuned.cfg.check_resolution(new_set.N)
    seed = cfg.seed if rng_seed is None else rng_seed
    torch.manual_seed(seed)
    _run_epochs(tuned, new_set, None, cfg, epochs, seed, False, TrainLog())
    return tuned
