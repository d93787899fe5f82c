"""Monte Carlo experiment drivers. Each returns rows ready for CSV output."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from fimce.bench.config import ExperimentConfig
from fimce.bench.dataset import pilot_shapes_for, sample_arrays
from fimce.channel import (
    PilotSet,
    complex_gaussian,
    noise_variance_for_snr,
    observe_pilots,
    sample_channel_realization,
    synthesize_channel,
)
from fimce.geometry import DeformationShape, pilot_shape_set
from fimce.interp import knn_estimate, krr_estimate, krr_fit, nearest_neighbor_estimate
from fimce.neural.model import HFNO, export_spectral_weights, features_from_arrays
from fimce.neural.train import ChannelDataset, dataset_nmse, fine_tune, predict
from fimce.sparse import angular_grid, default_omp_stop, mutual_coherence, omp, omp_estimate, stack_sensing_matrix

log = logging.getLogger(__name__)

ESTIMATORS = ("nn", "knn", "krr", "omp", "hfno")
BENCH_HEADER = ("estimator", "snr_db", "M", "N", "L", "trials", "nmse_mean", "nmse_db", "stderr")
GENERALIZATION_HEADER = ("study", "nx", "nz", "bound_wavelengths", "mode", "snr_db", "trials",
                         "nmse_mean", "nmse_db", "stderr")
COHERENCE_HEADER = ("design", "M", "D", "draws", "mu_mean", "mu_std")


class MissingModelError(ValueError):
    pass


@dataclass(frozen=True)
class BenchRow:
    estimator: str
    snr_db: float
    M: int
    N: int
    L: int
    trials: int
    nmse_mean: float
    nmse_db: float
    stderr: float

    def as_tuple(self):
        return (self.estimator, self.snr_db, self.M, self.N, self.L, self.trials, self.nmse_mean, self.nmse_db,
                self.stderr)


def summarize(values: np.ndarray) -> Tuple[float, float, float]:
    """``(mean, mean in dB, standard error)``."""
    values = np.asarray(values, dtype=np.float64)
    mean = float(values.mean())
    se = float(values.std(ddof=1) / np.sqrt(values.size)) if values.size > 1 else 0.0
    return mean, float(10 * np.log10(mean)) if mean > 0 else float("-inf"), se


def _trial_rng(seed: int, trial: int) -> np.random.Generator:
    return np.random.default_rng([seed, trial])


@dataclass
class TrialDraw:
    """Everything random in one trial, shared across SNRs and estimators."""

    pilot_channels: np.ndarray  # (M, N) noiseless
    target: np.ndarray  # (N,)
    truth: np.ndarray  # (N,)
    unit_noise: np.ndarray  # (M, N), unit-variance complex Gaussian


def draw_trials(cfg: ExperimentConfig, Z: np.ndarray, trials: int, seed: int,
                target_fn: Optional[Callable[[np.random.Generator], np.ndarray]] = None) -> List[TrialDraw]:
    geom, params = cfg.array_geometry(), cfg.channel_params()
    out = []
    for t in range(trials):
        rng = _trial_rng(seed, t)
        real = sample_channel_realization(params, rng)
        target = rng.uniform(-cfg.bound, cfg.bound, geom.n_elements) if target_fn is None else target_fn(rng)
        H = synthesize_channel(real, np.vstack([Z, target]), geom)
        noise = complex_gaussian(Z.shape, 1.0, rng)
        out.append(TrialDraw(H[:-1], target, H[-1], noise))
    return out


def _nmse_rows(est: np.ndarray, truth: np.ndarray) -> np.ndarray:
    return np.sum(np.abs(est - truth) ** 2, axis=-1) / np.sum(np.abs(truth) ** 2, axis=-1)


class ModelBasedEstimators:
    """Nearest-neighbor, KNN, KRR and OMP with the configured hyperparameters."""

    def __init__(self, cfg: ExperimentConfig, Z: np.ndarray):
        self.cfg = cfg
        self.geom = cfg.array_geometry()
        self.shapes = [DeformationShape(z, cfg.bound) for z in Z]
        self.grid = angular_grid(cfg.estimators.grid_theta, cfg.estimators.grid_phi)
        self.sensing = stack_sensing_matrix(self.shapes, self.grid, self.geom)
        self.knn_cfg = cfg.knn_config(len(self.shapes))
        n_paths = cfg.estimators.omp_max_atoms or cfg.channel.L * cfg.channel.G
        self.max_atoms = min(n_paths, self.sensing.phi_matrix.shape[0], self.grid.D)

    def omp_solution(self, pilots: PilotSet):
        y = pilots.measurements.ravel()
        _, tol = default_omp_stop(self.max_atoms, pilots.noise_variance, y)
        return omp(y, self.sensing, self.max_atoms, tol * self.cfg.estimators.omp_noise_factor)

    def estimate(self, name: str, pilots: PilotSet, target: np.ndarray) -> np.ndarray:
        if name == "nn":
            return nearest_neighbor_estimate(pilots, target)
        if name == "knn":
            return knn_estimate(pilots, target, self.knn_cfg)
        if name == "krr":
            e = self.cfg.estimators
            return krr_estimate(krr_fit(pilots, e.krr_gamma, e.krr_lambda), target)
        if name == "omp":
            return omp_estimate(self.omp_solution(pilots), target, self.grid, self.geom)
        raise ValueError(f"unknown estimator {name!r}")


def _map(fn, items, threads: int):
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(fn, items))
    return [fn(i) for i in items]


def evaluate_cell(cfg: ExperimentConfig, Z: np.ndarray, draws: Sequence[TrialDraw], snr_db: float,
                  estimators: Iterable[str], model: Optional[HFNO] = None, threads: int = 1) -> Dict[str, np.ndarray]:
    """Per-trial NMSE for each estimator at one SNR."""
    estimators = list(estimators)
    var = noise_variance_for_snr(snr_db)
    std = np.sqrt(var)
    mb = [e for e in estimators if e != "hfno"]
    out: Dict[str, np.ndarray] = {}
    if mb:
        ctx = ModelBasedEstimators(cfg, Z)

        def one(t: int):
            d = draws[t]
            pilots = PilotSet(ctx.shapes, d.pilot_channels + std * d.unit_noise, var)
            return [_nmse_rows(ctx.estimate(name, pilots, d.target), d.truth) for name in mb]

        res = np.array(_map(one, range(len(draws)), threads))
        for j, name in enumerate(mb):
            out[name] = res[:, j]
    if "hfno" in estimators:
        if model is None:
            raise MissingModelError("H-FNO requested but no trained model supplied")
        meas = np.stack([d.pilot_channels + std * d.unit_noise for d in draws])
        targets = np.stack([d.target for d in draws])
        truth = np.stack([d.truth for d in draws])
        feats = features_from_arrays(meas, np.broadcast_to(Z, meas.shape), targets, np.float32)
        out["hfno"] = _nmse_rows(predict(model, feats), truth)
    return out


def run_benchmark(cfg: ExperimentConfig, models: Optional[Mapping[int, HFNO]] = None,
                  estimators: Sequence[str] = ESTIMATORS, threads: int = 1,
                  raw: Optional[Dict] = None) -> List[BenchRow]:
    """NMSE per ``(estimator, SNR, M)`` averaged over ``cfg.trials`` fresh trials.

    ``models`` maps pilot count to a trained H-FNO. Trial ``t`` uses the
    stream ``(seed, t)`` so every estimator and SNR sees the same channel and
    target. ``raw``, if given, receives the per-trial NMSE arrays.
    """
    models = models or {}
    rows: List[BenchRow] = []
    N = cfg.geometry.nx * cfg.geometry.nz
    for M in cfg.pilot_counts:
        ests = list(estimators)
        if "hfno" in ests and M not in models:
            raise MissingModelError(f"no H-FNO model for M={M}")
        Z = pilot_shapes_for(cfg, M)
        draws = draw_trials(cfg, Z, cfg.trials, cfg.seed)
        for snr in cfg.snr_db:
            res = evaluate_cell(cfg, Z, draws, snr, ests, models.get(M), threads)
            for name in ests:
                mean, db, se = summarize(res[name])
                rows.append(BenchRow(name, float(snr), M, N, cfg.channel.L, cfg.trials, mean, db, se))
                if raw is not None:
                    raw[(name, float(snr), M)] = res[name]
    return rows


def _eval_rows(study, cfg, mode, snr, values):
    mean, db, se = summarize(values)
    return (study, cfg.geometry.nx, cfg.geometry.nz, cfg.pilots.bound_wavelengths, mode, float(snr), len(values),
            mean, db, se)


def run_generalization(cfg: ExperimentConfig, model: HFNO, sizes=((10, 10), (12, 12), (14, 14)),
                       bounds=(0.25, 0.5, 1.0), snr_db: float = 10.0, finetune: bool = True,
                       finetune_samples: int = 500, finetune_epochs: int = 10, threads: int = 1) -> List[tuple]:
    """Zero-shot (and fine-tuned) NMSE across array sizes and deformation ranges."""
    rows = []
    for nx, nz in sizes:
        c = cfg.replace(geometry__nx=nx, geometry__nz=nz)
        model.cfg.check_resolution(nx * nz)
        Z = pilot_shapes_for(c)
        draws = draw_trials(c, Z, c.trials, c.seed)
        zero = evaluate_cell(c, Z, draws, snr_db, ["hfno"], model)["hfno"]
        rows.append(_eval_rows("size", c, "zero_shot", snr_db, zero))
        if finetune:
            ft_set = sample_arrays(c, "finetune", finetune_samples, c.seed, pilot_shapes=Z)
            tuned = fine_tune(model, ft_set, finetune_epochs, c.train)
            tuned_nmse = evaluate_cell(c, Z, draws, snr_db, ["hfno"], tuned)["hfno"]
            rows.append(_eval_rows("size", c, "fine_tuned", snr_db, tuned_nmse))
    for b in bounds:
        c = cfg.replace(pilots__bound_wavelengths=b)
        Z = pilot_shapes_for(c)
        draws = draw_trials(c, Z, c.trials, c.seed)
        res = evaluate_cell(c, Z, draws, snr_db, ["hfno", "knn"], model, threads)
        rows.append(_eval_rows("deformation", c, "zero_shot", snr_db, res["hfno"]))
        rows.append(_eval_rows("deformation", c, "knn", snr_db, res["knn"]))
    return rows


def run_coherence(cfg: ExperimentConfig, random_draws: int = 100) -> List[tuple]:
    geom = cfg.array_geometry()
    M = cfg.pilots.M
    grid = angular_grid(cfg.estimators.grid_theta, cfg.estimators.grid_phi)

    def mu(shapes):
        return mutual_coherence(stack_sensing_matrix(shapes, grid, geom))

    rows = [("fourier", M, grid.D, 1, mu(pilot_shape_set(M, "fourier", geom, cfg.bound)), 0.0)]
    seeds = np.random.SeedSequence([cfg.seed, 7]).spawn(random_draws)
    rand = np.array([mu(pilot_shape_set(M, "random", geom, cfg.bound, rng_seed=s)) for s in seeds])
    rows.append(("random", M, grid.D, random_draws, float(rand.mean()), float(rand.std(ddof=1))))
    greedy = pilot_shape_set(M, "greedy", geom, cfg.bound, rng_seed=cfg.seed, grid=grid)
    rows.append(("greedy", M, grid.D, 1, mu(greedy), 0.0))
    return rows


def coherence_samples(cfg: ExperimentConfig, random_draws: int = 100) -> Tuple[float, np.ndarray]:
    """Fourier-set coherence and the coherence of each random draw (same streams as :func:`run_coherence`)."""
    geom = cfg.array_geometry()
    grid = angular_grid(cfg.estimators.grid_theta, cfg.estimators.grid_phi)
    M = cfg.pilots.M
    mu_f = mutual_coherence(stack_sensing_matrix(pilot_shape_set(M, "fourier", geom, cfg.bound), grid, geom))
    seeds = np.random.SeedSequence([cfg.seed, 7]).spawn(random_draws)
    mus = np.array([mutual_coherence(stack_sensing_matrix(pilot_shape_set(M, "random", geom, cfg.bound, rng_seed=s),
                                                          grid, geom)) for s in seeds])
    return mu_f, mus


# interpretability ------------------------------------------------------------

def spectral_weight_rows(model: HFNO) -> List[tuple]:
    return [(block, k, float(v)) for block, mags in export_spectral_weights(model).items() for k, v in enumerate(mags)]


def feature_rows(cfg: ExperimentConfig, model: HFNO, snr_db: float = 10.0, n_channels: int = 3) -> List[tuple]:
    """First channels of the highest-resolution encoder output and the bottleneck for one input."""
    Z = pilot_shapes_for(cfg)
    d = draw_trials(cfg, Z, 1, cfg.seed)[0]
    meas = (d.pilot_channels + np.sqrt(noise_variance_for_snr(snr_db)) * d.unit_noise)[None]
    feats = features_from_arrays(meas, Z[None], d.target[None], np.float32)
    import torch

    cap: Dict[str, "torch.Tensor"] = {}
    with torch.no_grad():
        model.eval()
        model(torch.as_tensor(feats), capture=cap)
    rows = []
    for block in ("encoder0", "bottleneck"):
        act = cap[block][0].numpy()
        for c in range(min(n_channels, act.shape[0])):
            rows.extend((block, c, i, float(v)) for i, v in enumerate(act[c]))
    return rows


def gain_curve_rows(cfg: ExperimentConfig, model: HFNO, L_values=(5, 20), n_delta: int = 21,
                    snr_db: float = 10.0) -> List[tuple]:
    """``|h_n|`` as element ``n`` alone is displaced by ``delta``; truth, H-FNO and OMP."""
    rows = []
    for L in L_values:
        c = cfg.replace(channel__L=L)
        geom, N = c.array_geometry(), c.geometry.nx * c.geometry.nz
        Z = pilot_shapes_for(c)
        rng = _trial_rng(c.seed, 0)
        real = sample_channel_realization(c.channel_params(), rng)
        shapes = [DeformationShape(z, c.bound) for z in Z]
        pilots = observe_pilots(real, shapes, snr_db, geom, rng)
        deltas = np.linspace(-c.bound, c.bound, n_delta)
        targets = np.zeros((N * n_delta, N))
        elem = np.repeat(np.arange(N), n_delta)
        targets[np.arange(N * n_delta), elem] = np.tile(deltas, N)
        truth = synthesize_channel(real, targets, geom)
        feats = features_from_arrays(np.broadcast_to(pilots.measurements, (len(targets),) + Z.shape),
                                     np.broadcast_to(Z, (len(targets),) + Z.shape), targets, np.float32)
        hfno = predict(model, feats)
        ctx = ModelBasedEstimators(c, Z)
        sol = ctx.omp_solution(pilots)
        from fimce.channel import array_response

        idx = np.asarray(sol.support, dtype=int)
        A = array_response(geom, targets, ctx.grid.theta[idx], ctx.grid.phi[idx])  # (T, S, N)
        omp_est = np.einsum("s,tsn->tn", sol.gains, A) if idx.size else np.zeros_like(truth)
        sel = np.arange(len(targets))
        for method, H in (("truth", truth), ("hfno", hfno), ("omp", omp_est)):
            gains = np.abs(H[sel, elem])
            rows.extend((L, method, int(n), float(dl), float(g)) for n, dl, g in zip(elem, np.tile(deltas, N), gains))
    return rows


def run_interpretability(cfg: ExperimentConfig, model: HFNO) -> Dict[str, Tuple[tuple, List[tuple]]]:
    return {
        "spectral_weights": (("block", "mode", "magnitude"), spectral_weight_rows(model)),
        "features": (("block", "channel", "index", "value"), feature_rows(cfg, model)),
        "gain_curves": (("L", "method", "element", "delta", "gain"), gain_curve_rows(cfg, model)),
    }
