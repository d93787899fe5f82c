"""FIM array geometry, orientation frames and deformation shapes.

Element ``n`` sits at grid index ``(i_x, i_z)`` with ``n = i_x * nz + i_z``
(consecutive indices sweep ``z`` within one ``x`` column).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0

# (theta_t, phi_t, rho_t) giving i_t = x, j_t = z, k_t = y
CANONICAL_ORIENTATION = (np.pi / 2, np.pi / 2, 0.0)


def wavelength_for(frequency_hz: float) -> float:
    return SPEED_OF_LIGHT / frequency_hz


@dataclass(frozen=True)
class ArrayGeometry:
    """Uniform planar array on a flexible substrate.

    ``dx`` and ``dz`` are element spacings in wavelengths; ``center`` and
    ``wavelength`` are in meters.
    """

    nx: int = 8
    nz: int = 8
    dx: float = 0.5
    dz: float = 0.5
    orientation: Tuple[float, float, float] = CANONICAL_ORIENTATION
    center: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    wavelength: float = wavelength_for(28e9)

    def __post_init__(self):
        if self.nx < 1 or self.nz < 1:
            raise ValueError(f"element counts must be >= 1, got {self.nx}x{self.nz}")
        if self.dx <= 0 or self.dz <= 0:
            raise ValueError("element spacing must be positive")
        if self.wavelength <= 0:
            raise ValueError("wavelength must be positive")
        theta, phi, rho = self.orientation
        if not (0 <= theta < np.pi and 0 <= phi < np.pi and 0 <= rho < 2 * np.pi):
            raise ValueError(f"orientation {self.orientation} outside [0,pi)x[0,pi)x[0,2pi)")

    @property
    def n_elements(self) -> int:
        return self.nx * self.nz

    @property
    def wavenumber(self) -> float:
        return 2 * np.pi / self.wavelength

    def grid_indices(self) -> Tuple[np.ndarray, np.ndarray]:
        """Return ``(i_x, i_z)`` for every flat index ``n``."""
        n = np.arange(self.n_elements)
        return n // self.nz, n % self.nz

    def flat_index(self, ix, iz):
        return np.asarray(ix) * self.nz + np.asarray(iz)

    def local_coordinates(self) -> Tuple[np.ndarray, np.ndarray]:
        """Centered in-plane coordinates ``(x_n, z_n)`` in meters."""
        ix, iz = self.grid_indices()
        x = (ix - (self.nx - 1) / 2) * self.dx * self.wavelength
        z = (iz - (self.nz - 1) / 2) * self.dz * self.wavelength
        return x, z

    def with_size(self, nx: int, nz: int) -> "ArrayGeometry":
        return ArrayGeometry(nx, nz, self.dx, self.dz, self.orientation, self.center, self.wavelength)


@dataclass(frozen=True)
class DeformationShape:
    """Per-element perpendicular displacement ``zeta`` (meters), bounded by ``bound``."""

    zeta: np.ndarray
    bound: float

    def __post_init__(self):
        zeta = np.asarray(self.zeta, dtype=np.float64)
        if zeta.ndim != 1:
            raise ValueError("zeta must be a vector")
        if self.bound <= 0:
            raise ValueError("bound must be positive")
        # tolerate round-off from generators that hit the bound exactly
        if np.any(np.abs(zeta) > self.bound * (1 + 1e-12)):
            raise ValueError("displacement exceeds bound")
        zeta.setflags(write=False)
        object.__setattr__(self, "zeta", zeta)

    def __len__(self):
        return self.zeta.shape[0]

    @classmethod
    def flat(cls, n: int, bound: float) -> "DeformationShape":
        return cls(np.zeros(n), bound)


@dataclass(frozen=True)
class ElementPositions:
    rows: np.ndarray  # (N, 3) global coordinates, meters
    nx: int
    nz: int

    def __len__(self):
        return self.rows.shape[0]


def basis_vectors(orientation: Sequence[float]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Local frame ``(i_t, j_t, k_t)``; ``k_t`` is the undeformed surface normal."""
    theta, phi, rho = orientation
    st, ct = np.sin(theta), np.cos(theta)
    sp, cp = np.sin(phi), np.cos(phi)
    sr, cr = np.sin(rho), np.cos(rho)
    k = np.array([st * cp, st * sp, ct])
    i = np.array([sp * cr - ct * cp * sr, -cp * cr - ct * sp * sr, st * sr])
    j = np.array([-sp * sr - ct * cp * cr, cp * sr - ct * sp * cr, st * cr])
    # cos(pi/2) is 6e-17, not 0; snap round-off so axis-aligned frames are exact
    return tuple(np.where(np.abs(v) < 4 * np.finfo(float).eps, 0.0, v) for v in (i, j, k))


def _check_shape(geom: ArrayGeometry, shape: DeformationShape) -> None:
    if len(shape) != geom.n_elements:
        raise ValueError(f"shape has {len(shape)} elements, geometry has {geom.n_elements}")


def element_positions(geom: ArrayGeometry, shape: DeformationShape) -> ElementPositions:
    _check_shape(geom, shape)
    i_t, j_t, k_t = basis_vectors(geom.orientation)
    x, z = geom.local_coordinates()
    rows = (
        np.asarray(geom.center, dtype=np.float64)[None, :]
        + x[:, None] * i_t[None, :]
        + z[:, None] * j_t[None, :]
        + shape.zeta[:, None] * k_t[None, :]
    )
    return ElementPositions(rows, geom.nx, geom.nz)


def fourier_basis_shape(u: int, v: int, geom: ArrayGeometry, bound: float) -> DeformationShape:
    """Cosine deformation at spatial frequency ``(u, v)``."""
    if u < 0 or v < 0:
        raise ValueError("frequency indices must be non-negative")
    ix, iz = geom.grid_indices()
    zeta = bound * np.cos(2 * np.pi * (u * ix / geom.nx + v * iz / geom.nz))
    return DeformationShape(np.clip(zeta, -bound, bound), bound)


def fourier_frequency_order(geom: ArrayGeometry) -> List[Tuple[int, int]]:
    """All ``(u, v)`` pairs, low frequencies first: sorted by ``(max(u, v), u, v)``."""
    pairs = [(u, v) for u in range(geom.nx) for v in range(geom.nz)]
    return sorted(pairs, key=lambda p: (max(p), p[0], p[1]))


def distinct_fourier_shapes(geom: ArrayGeometry, bound: float, limit: Optional[int] = None) -> List[DeformationShape]:
    """Cosine shapes in low-frequency-first order with aliased duplicates removed.

    Aliased pairs (e.g. ``(0, 5)`` and ``(0, 3)`` on an 8-wide axis) produce the
    same cosine pattern; later duplicates are skipped.
    """
    shapes: List[DeformationShape] = []
    for u, v in fourier_frequency_order(geom):
        if limit is not None and len(shapes) == limit:
            break
        cand = fourier_basis_shape(u, v, geom, bound)
        if any(np.allclose(cand.zeta, s.zeta, rtol=0, atol=1e-12 * bound) for s in shapes):
            continue
        shapes.append(cand)
    return shapes


def fourier_shapes(M: int, geom: ArrayGeometry, bound: float) -> List[DeformationShape]:
    """First ``M`` distinct cosine shapes."""
    shapes = distinct_fourier_shapes(geom, bound, M)
    if len(shapes) < M:
        raise ValueError(f"only {len(shapes)} distinct Fourier shapes exist for {geom.nx}x{geom.nz}, asked for {M}")
    return shapes


def random_shape(geom: ArrayGeometry, bound: float, rng: np.random.Generator) -> DeformationShape:
    return DeformationShape(rng.uniform(-bound, bound, geom.n_elements), bound)


def pilot_shape_set(M: int, kind: str, geom: ArrayGeometry, bound: float, rng_seed=None,
                    **greedy_kwargs) -> List[DeformationShape]:
    """Generate ``M`` probing shapes of the given ``kind``.

    ``kind`` is ``"fourier"``, ``"random"`` or ``"greedy"``. The greedy kind
    draws its candidate pool from ``rng_seed`` and minimizes the mutual
    coherence of the stacked angular dictionary; extra keyword arguments are
    forwarded to :func:`fimce.sparse.greedy_pilot_selection`.
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    if kind == "fourier":
        if M > geom.n_elements:
            raise ValueError(f"M={M} exceeds basis size N={geom.n_elements}")
        return fourier_shapes(M, geom, bound)
    rng = np.random.default_rng(rng_seed)
    if kind == "random":
        return [random_shape(geom, bound, rng) for _ in range(M)]
    if kind == "greedy":
        from fimce.sparse import angular_grid, default_candidate_pool, greedy_pilot_selection

        grid = greedy_kwargs.pop("grid", None) or angular_grid(16, 16)
        pool = greedy_kwargs.pop("pool", None) or default_candidate_pool(geom, bound, rng)
        return greedy_pilot_selection(pool, M, grid, geom, **greedy_kwargs)
    raise ValueError(f"unknown pilot kind {kind!r}")
