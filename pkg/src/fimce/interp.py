"""Interpolation and kernel-regression channel estimators over deformation space."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from fimce.channel import PilotSet
from fimce.geometry import DeformationShape

log = logging.getLogger(__name__)

PINV_RCOND = 1e-12


class SingularKernelError(np.linalg.LinAlgError):
    pass


def _zeta(shape) -> np.ndarray:
    return shape.zeta if isinstance(shape, DeformationShape) else np.asarray(shape, dtype=np.float64)


def _shape_matrix(shapes) -> np.ndarray:
    if isinstance(shapes, PilotSet):
        return shapes.shape_matrix()
    if isinstance(shapes, np.ndarray):
        return np.atleast_2d(shapes).astype(np.float64)
    return np.stack([_zeta(s) for s in shapes])


def nearest_neighbor_estimate(pilots: PilotSet, target) -> np.ndarray:
    """Measurement of the pilot shape closest to ``target`` (lowest index wins ties)."""
    if pilots.M == 0:
        raise ValueError("empty pilot set")
    d2 = np.sum((pilots.shape_matrix() - _zeta(target)) ** 2, axis=1)
    return pilots.measurements[int(np.argmin(d2))]


def linear_interp_1d(zeta_a, h_a, zeta_b, h_b, zeta_target):
    if zeta_a == zeta_b:
        raise ValueError("interpolation abscissae coincide")
    t = (zeta_target - zeta_a) / (zeta_b - zeta_a)
    return np.asarray(h_a) + (np.asarray(h_b) - np.asarray(h_a)) * t


@dataclass(frozen=True)
class KnnConfig:
    k_bar: int = 5
    ridge_eps: float = 1e-8

    def __post_init__(self):
        if self.k_bar < 1 or self.ridge_eps < 0:
            raise ValueError("k_bar must be >= 1 and ridge_eps >= 0")


def knn_weights(pilot_shapes, target, cfg: KnnConfig = KnnConfig()) -> Tuple[np.ndarray, np.ndarray]:
    """Neighbor indices and least-squares weights reconstructing ``target`` from them."""
    Z = _shape_matrix(pilot_shapes)
    zt = _zeta(target)
    M = Z.shape[0]
    if cfg.k_bar > M:
        raise ValueError(f"k_bar={cfg.k_bar} exceeds the {M} available pilots")
    d2 = np.sum((Z - zt) ** 2, axis=1)
    idx = np.argsort(d2, kind="stable")[: cfg.k_bar]
    Zb = Z[idx].T  # (N, k)
    gram = Zb.T @ Zb
    rhs = Zb.T @ zt
    eps = cfg.ridge_eps * np.trace(gram) / cfg.k_bar
    try:
        w = linalg.solve(gram + eps * np.eye(cfg.k_bar), rhs, assume_a="pos")
    except np.linalg.LinAlgError:
        w = np.linalg.lstsq(Zb, zt, rcond=None)[0]
    return idx, w


def knn_estimate(pilots: PilotSet, target, cfg: KnnConfig = KnnConfig()) -> np.ndarray:
    idx, w = knn_weights(pilots, target, cfg)
    return w @ pilots.measurements[idx]


def rbf_kernel(shape_a, shape_b, gamma: float) -> float:
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    a, b = _zeta(shape_a), _zeta(shape_b)
    if a.shape != b.shape:
        raise ValueError("shapes differ in length")
    return float(np.exp(-gamma * np.sum((a - b) ** 2)))


def rbf_gram(A: np.ndarray, B: np.ndarray, gamma: float) -> np.ndarray:
    d2 = np.sum(A ** 2, axis=1)[:, None] + np.sum(B ** 2, axis=1)[None, :] - 2 * A @ B.T
    return np.exp(-gamma * np.maximum(d2, 0.0))


def median_heuristic_gamma(Z: np.ndarray) -> float:
    """``1 / (2 median^2)`` of pairwise distances; 1.0 when fewer than two distinct shapes."""
    iu = np.triu_indices(Z.shape[0], k=1)
    if iu[0].size == 0:
        return 1.0
    d = np.sqrt(np.sum((Z[iu[0]] - Z[iu[1]]) ** 2, axis=1))
    med = np.median(d)
    return 1.0 if med == 0 else float(1.0 / (2 * med ** 2))


@dataclass(frozen=True)
class KrrModel:
    gamma: float
    lam: float
    pilot_shapes: np.ndarray  # (M, N)
    coefficients: np.ndarray  # (M, N) complex
    kernel_matrix: np.ndarray  # (M, M)


def krr_fit(pilots: PilotSet, gamma: Optional[float] = None, lam: float = 1e-2) -> KrrModel:
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    Z = pilots.shape_matrix()
    M = Z.shape[0]
    if gamma is None:
        gamma = median_heuristic_gamma(Z)
    K = rbf_gram(Z, Z, gamma)
    np.fill_diagonal(K, 1.0)
    H = pilots.measurements
    if lam == 0 and M > 1:
        iu = np.triu_indices(M, k=1)
        if np.any(np.all(Z[iu[0]] == Z[iu[1]], axis=1)):
            raise SingularKernelError("duplicate pilot shapes make K singular at lambda=0")
    A = K + lam * np.eye(M)
    try:
        C = linalg.cho_solve(linalg.cho_factor(A), H)
    except np.linalg.LinAlgError:
        log.debug("Cholesky failed for KRR system, using pseudo-inverse (rcond=%g)", PINV_RCOND)
        C = np.linalg.pinv(A, rcond=PINV_RCOND) @ H
    return KrrModel(float(gamma), float(lam), Z, C, K)


def krr_estimate(model: KrrModel, target) -> np.ndarray:
    k = rbf_gram(_zeta(target)[None, :], model.pilot_shapes, model.gamma)[0]
    return k @ model.coefficients
