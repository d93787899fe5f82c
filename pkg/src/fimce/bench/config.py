"""Experiment configuration: nested dataclasses loaded from and echoed to JSON."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from fimce.channel import ChannelParams
from fimce.geometry import ArrayGeometry, wavelength_for
from fimce.interp import KnnConfig
from fimce.neural.model import FnoConfig
from fimce.neural.train import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class GeometryConfig:
    nx: int = 8
    nz: int = 8
    dx: float = 0.5
    dz: float = 0.5


@dataclass
class ChannelConfig:
    L: int = 5
    G: int = 6
    pathloss_exponent: float = 2.2
    reference_loss: float = 1.0
    reference_distance: float = 1.0
    carrier_frequency: float = 28e9
    angular_spread_deg: float = 5.0
    bs_position: Tuple[float, float, float] = (0.0, 0.0, 10.0)
    user_box: Tuple[Tuple[float, float, float], Tuple[float, float, float]] = ((-10.0, 10.0, 0.0), (10.0, 30.0, 0.0))
    normalize_power: bool = True
    K: int = 4


@dataclass
class PilotConfig:
    M: int = 16
    kind: str = "fourier"
    bound_wavelengths: float = 0.5


@dataclass
class EstimatorConfig:
    k_bar: int = 5
    ridge_eps: float = 1e-8
    krr_gamma: Optional[float] = None
    krr_lambda: float = 1e-2
    grid_theta: int = 16
    grid_phi: int = 16
    omp_max_atoms: Optional[int] = None
    omp_noise_factor: float = 1.0


@dataclass
class ExperimentConfig:
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    pilots: PilotConfig = field(default_factory=PilotConfig)
    estimators: EstimatorConfig = field(default_factory=EstimatorConfig)
    fno: FnoConfig = field(default_factory=FnoConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    snr_db: List[float] = field(default_factory=lambda: [0, 5, 10, 15, 20])
    pilot_counts: List[int] = field(default_factory=lambda: [16])
    trials: int = 500
    seed: int = 0
    out_dir: str = "out"

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.pilots.bound_wavelengths <= 0:
            raise ConfigError("deformation bound must be positive")

    # derived objects -------------------------------------------------------
    @property
    def wavelength(self) -> float:
        return wavelength_for(self.channel.carrier_frequency)

    @property
    def bound(self) -> float:
        return self.pilots.bound_wavelengths * self.wavelength

    def array_geometry(self) -> ArrayGeometry:
        g = self.geometry
        return ArrayGeometry(g.nx, g.nz, g.dx, g.dz, wavelength=self.wavelength)

    def channel_params(self) -> ChannelParams:
        c = self.channel
        return ChannelParams(
            L=c.L, G=c.G, pathloss_exponent=c.pathloss_exponent, reference_loss=c.reference_loss,
            reference_distance=c.reference_distance, carrier_frequency=c.carrier_frequency,
            angular_spread=float(np.deg2rad(c.angular_spread_deg)), bs_position=tuple(c.bs_position),
            user_box=tuple(tuple(p) for p in c.user_box), normalize_power=c.normalize_power,
        )

    def knn_config(self, M: Optional[int] = None) -> KnnConfig:
        k = self.estimators.k_bar if M is None else min(self.estimators.k_bar, M)
        return KnnConfig(k, self.estimators.ridge_eps)

    def fno_config(self, M: Optional[int] = None) -> FnoConfig:
        f = self.fno
        return FnoConfig(f.d_v, f.l_enc, f.modes_per_resolution, f.activation, self.pilots.M if M is None else M)

    def replace(self, **sections) -> "ExperimentConfig":
        """Copy with top-level fields or ``section__field`` overrides, e.g. ``geometry__nx=10``."""
        d = self.to_dict()
        for key, val in sections.items():
            if "__" in key:
                sec, name = key.split("__", 1)
                d[sec][name] = val
            else:
                d[key] = val
        return ExperimentConfig.from_dict(d)

    # serialization ---------------------------------------------------------
    def to_dict(self) -> Dict[str, Any]:
        return json.loads(json.dumps(asdict(self)))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ExperimentConfig":
        return _build(cls, data, "config")

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        return cls.from_dict(data)


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be an object")
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    kwargs = {}
    for name, val in data.items():
        f = known[name]
        default = f.default_factory() if f.default_factory is not dataclasses.MISSING else f.default
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), val, f"{where}.{name}")
        else:
            kwargs[name] = val
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid {where}: {e}") from e
