"""Angular-dictionary sparse recovery: OMP, mutual coherence, pilot design."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from fimce.channel import array_response
from fimce.geometry import ArrayGeometry, DeformationShape, distinct_fourier_shapes, random_shape

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AngularGrid:
    theta: np.ndarray
    phi: np.ndarray

    @property
    def D(self) -> int:
        return self.theta.size

    @property
    def angles(self):
        return list(zip(self.theta.tolist(), self.phi.tolist()))


def angular_grid(d_theta: int, d_phi: int) -> AngularGrid:
    """Cell-centered grid over ``(0, pi) x (0, pi)``; atom ``d = i_theta * d_phi + i_phi``."""
    if d_theta < 1 or d_phi < 1:
        raise ValueError("grid counts must be >= 1")
    th = (np.arange(d_theta) + 0.5) * np.pi / d_theta
    ph = (np.arange(d_phi) + 0.5) * np.pi / d_phi
    T, P = np.meshgrid(th, ph, indexing="ij")
    return AngularGrid(T.ravel(), P.ravel())


def build_dictionary(shape, grid: AngularGrid, geom: ArrayGeometry) -> np.ndarray:
    """``N x D`` matrix of steering vectors for the deformed array."""
    zeta = shape.zeta if isinstance(shape, DeformationShape) else np.asarray(shape)
    return array_response(geom, zeta, grid.theta, grid.phi).T


@dataclass(frozen=True)
class SensingMatrix:
    phi_matrix: np.ndarray  # (M*N, D)
    source_shapes: List[DeformationShape]
    grid: AngularGrid


def stack_sensing_matrix(shapes: Sequence[DeformationShape], grid: AngularGrid, geom: ArrayGeometry) -> SensingMatrix:
    if len(shapes) < 1:
        raise ValueError("need at least one shape")
    Z = np.stack([s.zeta for s in shapes])
    A = array_response(geom, Z, grid.theta, grid.phi)  # (M, D, N)
    phi = np.transpose(A, (0, 2, 1)).reshape(-1, grid.D)
    return SensingMatrix(phi, list(shapes), grid)


@dataclass
class SparseSolution:
    support: List[int] = field(default_factory=list)
    gains: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=complex))
    residual_norm: float = 0.0
    residual_history: List[float] = field(default_factory=list)
    rank_deficient: bool = False


def omp(y_stack: np.ndarray, sensing, max_atoms: int, residual_tol: float = 0.0) -> SparseSolution:
    """Orthogonal matching pursuit on the stacked system ``y = Phi x``.

    Stops after ``max_atoms`` atoms or once ``||r|| <= residual_tol * ||y||``.
    ``sensing`` may be a :class:`SensingMatrix` or a bare matrix.
    """
    Phi = sensing.phi_matrix if isinstance(sensing, SensingMatrix) else np.asarray(sensing)
    rows, D = Phi.shape
    if max_atoms > min(D, rows):
        raise ValueError(f"max_atoms={max_atoms} exceeds min(D, MN)={min(D, rows)}")
    if residual_tol < 0:
        raise ValueError("residual_tol must be non-negative")
    y = np.asarray(y_stack, dtype=np.complex128)
    y_norm = np.linalg.norm(y)
    sol = SparseSolution(residual_norm=float(y_norm), residual_history=[float(y_norm)])
    if y_norm == 0:
        return sol
    col_norms = np.linalg.norm(Phi, axis=0)
    stop = residual_tol * y_norm
    r = y
    support: List[int] = []
    x = np.zeros(0, dtype=np.complex128)
    while len(support) < max_atoms and np.linalg.norm(r) > stop:
        corr = np.abs(Phi.conj().T @ r) / col_norms
        corr[support] = -1.0
        support.append(int(np.argmax(corr)))
        sub = Phi[:, support]
        q, rr = np.linalg.qr(sub)
        diag = np.abs(np.diag(rr))
        if diag.min() <= 1e-10 * diag.max():
            sol.rank_deficient = True
            log.warning("rank-deficient OMP support of size %d, using pseudo-inverse", len(support))
            x = np.linalg.pinv(sub) @ y
        else:
            x = np.linalg.solve(rr, q.conj().T @ y)
        r = y - sub @ x
        sol.residual_history.append(float(np.linalg.norm(r)))
    sol.support = support
    sol.gains = x
    sol.residual_norm = float(np.linalg.norm(r))
    return sol


def default_omp_stop(n_paths: int, noise_variance: float, y_stack: np.ndarray):
    """``(max_atoms, residual_tol)`` with a noise-floor residual stop."""
    y_norm = np.linalg.norm(y_stack)
    tol = np.sqrt(noise_variance * y_stack.size) / y_norm if y_norm > 0 else 0.0
    return n_paths, float(tol)


def omp_estimate(solution: SparseSolution, target_shape, grid: AngularGrid, geom: ArrayGeometry) -> np.ndarray:
    if not solution.support:
        return np.zeros(geom.n_elements, dtype=np.complex128)
    zeta = target_shape.zeta if isinstance(target_shape, DeformationShape) else np.asarray(target_shape)
    idx = np.asarray(solution.support)
    A = array_response(geom, zeta, grid.theta[idx], grid.phi[idx])  # (S, N)
    return solution.gains @ A


def _coherence_from_gram(gram: np.ndarray) -> float:
    norms = np.sqrt(np.real(np.diag(gram)))
    c = np.abs(gram) / np.outer(norms, norms)
    np.fill_diagonal(c, 0.0)
    return float(min(c.max(), 1.0))


def mutual_coherence(sensing) -> float:
    """Largest normalized inner product between two distinct columns."""
    Phi = sensing.phi_matrix if isinstance(sensing, SensingMatrix) else np.asarray(sensing)
    if Phi.shape[1] < 2:
        raise ValueError("coherence needs at least two atoms")
    return _coherence_from_gram(Phi.conj().T @ Phi)


def shape_gram(shape: DeformationShape, grid: AngularGrid, geom: ArrayGeometry) -> np.ndarray:
    A = build_dictionary(shape, grid, geom)
    return A.conj().T @ A


def default_candidate_pool(geom: ArrayGeometry, bound: float, rng: np.random.Generator,
                           n_random: int = 16) -> List[DeformationShape]:
    """Every distinct Fourier shape followed by ``n_random`` uniform random shapes."""
    return distinct_fourier_shapes(geom, bound) + [random_shape(geom, bound, rng) for _ in range(n_random)]


def greedy_pilot_selection(candidate_pool: Sequence[DeformationShape], M: int, grid: AngularGrid,
                           geom: ArrayGeometry) -> List[DeformationShape]:
    """Add, one at a time, the pool shape that minimizes the stacked dictionary's coherence.

    The stacked Gram matrix is the sum of per-shape Gram matrices, so each
    candidate costs one ``D x D`` addition.
    """
    if len(candidate_pool) < M:
        raise ValueError(f"pool of {len(candidate_pool)} cannot supply {M} shapes")
    for s in candidate_pool:
        if np.any(np.abs(s.zeta) > s.bound * (1 + 1e-12)):
            raise ValueError("candidate violates the displacement bound")
    grams = [shape_gram(s, grid, geom) for s in candidate_pool]
    chosen: List[int] = []
    acc = np.zeros_like(grams[0])
    for _ in range(M):
        best, best_mu = -1, np.inf
        for i, g in enumerate(grams):
            if i in chosen:
                continue
            mu = _coherence_from_gram(acc + g)
            if mu < best_mu:
                best, best_mu = i, mu
        chosen.append(best)
        acc = acc + grams[best]
    return [candidate_pool[i] for i in chosen]
