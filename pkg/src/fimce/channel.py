"""Clustered multipath mmWave channel for a deformable array.

All phases are referenced to the array center, so a flat array facing a
path along its normal sees an all-ones steering vector.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from fimce.geometry import ArrayGeometry, DeformationShape, ElementPositions, basis_vectors, element_positions


@dataclass(frozen=True)
class ChannelParams:
    L: int = 5
    G: int = 6
    pathloss_exponent: float = 2.2
    reference_loss: float = 1.0
    reference_distance: float = 1.0
    carrier_frequency: float = 28e9
    angular_spread: float = np.deg2rad(5.0)
    bs_position: Tuple[float, float, float] = (0.0, 0.0, 10.0)
    user_box: Tuple[Tuple[float, float, float], Tuple[float, float, float]] = ((-10.0, 10.0, 0.0), (10.0, 30.0, 0.0))
    normalize_power: bool = True
    cluster_angle_range: Tuple[float, float] = (np.pi / 4, 3 * np.pi / 4)

    def __post_init__(self):
        if self.L < 1 or self.G < 1:
            raise ValueError("L and G must be >= 1")
        if self.pathloss_exponent <= 0 or self.reference_distance <= 0:
            raise ValueError("pathloss exponent and reference distance must be positive")
        if self.angular_spread < 0:
            raise ValueError("angular spread must be non-negative")

    @property
    def n_paths(self) -> int:
        return self.L * self.G


def direction(theta, phi) -> np.ndarray:
    """Unit departure vector(s); trailing axis has length 3."""
    theta = np.asarray(theta, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    st = np.sin(theta)
    return np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta)], axis=-1)


@dataclass(frozen=True)
class PathComponent:
    theta: float
    phi: float
    gain: complex

    @property
    def direction(self) -> np.ndarray:
        return direction(self.theta, self.phi)


@dataclass(frozen=True)
class ChannelRealization:
    """One sampled environment. Arrays are shaped ``(L, G)``."""

    theta: np.ndarray
    phi: np.ndarray
    gains: np.ndarray
    user_distance: float
    power_scale: float = 1.0

    @property
    def n_paths(self) -> int:
        return self.gains.size

    @property
    def effective_gains(self) -> np.ndarray:
        return self.power_scale * self.gains

    @property
    def clusters(self) -> List[List[PathComponent]]:
        g = self.effective_gains
        return [
            [PathComponent(float(self.theta[l, i]), float(self.phi[l, i]), complex(g[l, i])) for i in range(g.shape[1])]
            for l in range(g.shape[0])
        ]

    @classmethod
    def from_paths(cls, theta, phi, gains, user_distance=1.0) -> "ChannelRealization":
        """Build a single-cluster realization from flat path lists (mostly for tests)."""
        theta = np.atleast_1d(np.asarray(theta, dtype=np.float64))[None, :]
        phi = np.atleast_1d(np.asarray(phi, dtype=np.float64))[None, :]
        gains = np.atleast_1d(np.asarray(gains, dtype=np.complex128))[None, :]
        return cls(theta, phi, gains, user_distance, 1.0)


@dataclass(frozen=True)
class PilotSet:
    shapes: List[DeformationShape]
    measurements: np.ndarray  # (M, N) complex
    noise_variance: float

    def __post_init__(self):
        meas = np.asarray(self.measurements)
        if meas.ndim != 2 or meas.shape[0] != len(self.shapes) or len(self.shapes) < 1:
            raise ValueError("shapes and measurements must both have M >= 1 entries")
        object.__setattr__(self, "measurements", meas)

    @property
    def M(self) -> int:
        return len(self.shapes)

    def shape_matrix(self) -> np.ndarray:
        """``(M, N)`` matrix of pilot displacements."""
        return np.stack([s.zeta for s in self.shapes])


@dataclass(frozen=True)
class PilotMatrix:
    sequences: np.ndarray  # (P, K), column k is s_k

    @property
    def K(self) -> int:
        return self.sequences.shape[1]

    @property
    def P(self) -> int:
        return self.sequences.shape[0]


def pathloss(distance: float, params: ChannelParams) -> float:
    return params.reference_loss * (distance / params.reference_distance) ** (-params.pathloss_exponent)


def steering_vector(positions: ElementPositions, theta, phi, wavelength: float) -> np.ndarray:
    """Steering vector(s) of the deformed array. Vectorizes over angle arrays: result is ``angles.shape + (N,)``."""
    u = direction(theta, phi)
    phase = (2 * np.pi / wavelength) * (u @ positions.rows.T)
    return np.exp(1j * phase)


def _local_offsets(geom: ArrayGeometry, zeta: np.ndarray):
    i_t, j_t, k_t = basis_vectors(geom.orientation)
    x, z = geom.local_coordinates()
    rigid = x[:, None] * i_t[None, :] + z[:, None] * j_t[None, :]
    return rigid, zeta[:, None] * k_t[None, :]


def rigid_steering(geom: ArrayGeometry, theta, phi) -> np.ndarray:
    rigid, _ = _local_offsets(geom, np.zeros(geom.n_elements))
    return np.exp(1j * geom.wavenumber * (direction(theta, phi) @ rigid.T))


def flex_factor(shape: DeformationShape, geom: ArrayGeometry, theta, phi) -> np.ndarray:
    if len(shape) != geom.n_elements:
        raise ValueError("shape does not match geometry")
    _, flex = _local_offsets(geom, shape.zeta)
    return np.exp(1j * geom.wavenumber * (direction(theta, phi) @ flex.T))


def array_response(geom: ArrayGeometry, zeta: np.ndarray, theta, phi) -> np.ndarray:
    """Steering vectors relative to the array center for one or many shapes.

    ``zeta`` may be ``(N,)`` or ``(S, N)``; angles are flat arrays of length P.
    Returns ``(P, N)`` or ``(S, P, N)``. This is the fast path used by the
    simulator and the dictionaries; it equals :func:`steering_vector` for an
    array centered at the origin.
    """
    i_t, j_t, k_t = basis_vectors(geom.orientation)
    x, z = geom.local_coordinates()
    u = direction(np.ravel(theta), np.ravel(phi))  # (P, 3)
    kappa = geom.wavenumber
    rigid_phase = kappa * (np.outer(u @ i_t, x) + np.outer(u @ j_t, z))  # (P, N)
    uk = kappa * (u @ k_t)  # (P,)
    zeta = np.asarray(zeta, dtype=np.float64)
    flex_phase = uk[:, None] * zeta[..., None, :]
    return np.exp(1j * (rigid_phase + flex_phase))


def sample_channel_realization(params: ChannelParams, rng: np.random.Generator) -> ChannelRealization:
    lo, hi = (np.asarray(c, dtype=np.float64) for c in params.user_box)
    user = rng.uniform(np.minimum(lo, hi), np.maximum(lo, hi))
    distance = float(np.linalg.norm(user - np.asarray(params.bs_position)))

    a, b = params.cluster_angle_range
    mean_theta = rng.uniform(a, b, params.L)
    mean_phi = rng.uniform(a, b, params.L)
    eps = 1e-6
    theta = np.clip(mean_theta[:, None] + params.angular_spread * rng.standard_normal((params.L, params.G)), eps, np.pi - eps)
    phi = np.clip(mean_phi[:, None] + params.angular_spread * rng.standard_normal((params.L, params.G)), eps, np.pi - eps)

    beta = pathloss(distance, params)
    # literal 1/sqrt(sum_l G_l); uniform G per cluster here
    g = (rng.standard_normal((params.L, params.G)) + 1j * rng.standard_normal((params.L, params.G))) / np.sqrt(2)
    gains = np.sqrt(beta) / np.sqrt(params.L * params.G) * g
    scale = 1.0 / np.sqrt(beta) if params.normalize_power else 1.0
    return ChannelRealization(theta, phi, gains, distance, scale)


def synthesize_channel(real: ChannelRealization, shape, geom: ArrayGeometry) -> np.ndarray:
    """Channel vector(s) for one shape (``DeformationShape`` or ``(N,)``) or a stack ``(S, N)``."""
    zeta = shape.zeta if isinstance(shape, DeformationShape) else np.asarray(shape, dtype=np.float64)
    if zeta.shape[-1] != geom.n_elements:
        raise ValueError("shape does not match geometry")
    a = array_response(geom, zeta, real.theta, real.phi)
    return real.effective_gains.ravel() @ a


def make_orthogonal_pilots(K: int, P: int) -> PilotMatrix:
    """First ``K`` columns of the ``P``-point DFT matrix (unit-modulus symbols)."""
    if P < K:
        raise ValueError(f"need P >= K for orthogonal pilots, got P={P}, K={K}")
    p = np.arange(P)[:, None]
    k = np.arange(K)[None, :]
    return PilotMatrix(np.exp(-2j * np.pi * p * k / P))


def complex_gaussian(shape, variance: float, rng: np.random.Generator) -> np.ndarray:
    std = np.sqrt(variance / 2)
    return std * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def uplink_frame(channels: Sequence[np.ndarray], pilots: PilotMatrix, sigma_w: float,
                 rng: np.random.Generator) -> np.ndarray:
    H = np.stack([np.asarray(h) for h in channels], axis=1)  # (N, K)
    if H.shape[1] != pilots.K:
        raise ValueError(f"{H.shape[1]} channels for {pilots.K} pilot sequences")
    Y = H @ pilots.sequences.conj().T
    if sigma_w > 0:
        Y = Y + complex_gaussian(Y.shape, sigma_w ** 2, rng)
    return Y


def despread(Y: np.ndarray, s_k: np.ndarray) -> np.ndarray:
    if Y.shape[1] != s_k.shape[0]:
        raise ValueError("frame length does not match pilot length")
    return Y @ s_k / s_k.shape[0]


def noise_variance_for_snr(snr_db: float) -> float:
    return 0.0 if np.isinf(snr_db) and snr_db > 0 else 10.0 ** (-snr_db / 10)


def observe_pilots(real: ChannelRealization, shapes: Sequence[DeformationShape], snr_db: float,
                   geom: ArrayGeometry, rng: np.random.Generator) -> PilotSet:
    """Noisy per-shape channel estimates at per-element noise variance ``10**(-snr_db/10)``."""
    Z = np.stack([s.zeta for s in shapes])
    H = synthesize_channel(real, Z, geom)
    var = noise_variance_for_snr(snr_db)
    if var > 0:
        H = H + complex_gaussian(H.shape, var, rng)
    return PilotSet(list(shapes), H, var)


def nmse(estimate: np.ndarray, truth: np.ndarray) -> float:
    estimate = np.asarray(estimate)
    truth = np.asarray(truth)
    if estimate.shape != truth.shape:
        raise ValueError("estimate and truth differ in length")
    energy = np.vdot(truth, truth).real
    if energy <= 0:
        raise ValueError("truth has zero norm")
    err = estimate - truth
    return float(np.vdot(err, err).real / energy)


def spatial_spectrum(h: np.ndarray, nx: int, nz: int) -> np.ndarray:
    """Unnormalized 2D DFT over the ``(i_x, i_z)`` grid; ``||S||^2 = N ||h||^2``."""
    h = np.asarray(h)
    if h.shape[-1] != nx * nz:
        raise ValueError(f"vector of length {h.shape[-1]} does not fit a {nx}x{nz} grid")
    return np.fft.fft2(h.reshape(h.shape[:-1] + (nx, nz)))
