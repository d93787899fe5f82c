"""Hierarchical Fourier neural operator over the flattened antenna index.

Fields are ``(batch, channels, N)`` tensors; the spectral transform runs along
the last axis (the column-major flattened array).
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from fimce.channel import PilotSet
from fimce.geometry import DeformationShape


class ModeBoundError(ValueError):
    pass


@dataclass
class FnoConfig:
    d_v: int = 64
    l_enc: int = 2
    modes_per_resolution: Tuple[int, ...] = (16, 8, 4)
    activation: str = "gelu"
    M: int = 16

    def __post_init__(self):
        self.modes_per_resolution = tuple(int(k) for k in self.modes_per_resolution)
        if len(self.modes_per_resolution) != self.l_enc + 1:
            raise ValueError("need one mode count per resolution (l_enc + 1)")
        if self.d_v < 1 or self.l_enc < 0 or self.M < 1:
            raise ValueError("invalid FNO sizes")

    @property
    def input_channels(self) -> int:
        return 3 * self.M + 1

    @property
    def output_channels(self) -> int:
        return 2

    def check_resolution(self, n: int) -> None:
        if n % (2 ** self.l_enc):
            raise ValueError(f"N={n} not divisible by 2^{self.l_enc}")
        for r, k in enumerate(self.modes_per_resolution):
            n_r = n // 2 ** r
            if k > n_r // 2 + 1:
                raise ModeBoundError(f"{k} modes exceed floor({n_r}/2)+1 at resolution {n_r}")


ACTIVATIONS = {"gelu": F.gelu, "relu": F.relu, "tanh": torch.tanh, "identity": lambda x: x}


def spectral_conv(x: torch.Tensor, weights: torch.Tensor) -> torch.Tensor:
    """Multiply the lowest ``kappa`` rfft modes by ``weights[:, :, k]``, zero the rest.

    ``x`` is ``(B, d_in, N)`` or ``(d_in, N)``; ``weights`` is complex
    ``(d_in, d_out, kappa)``.
    """
    squeeze = x.dim() == 2
    if squeeze:
        x = x[None]
    n = x.shape[-1]
    kappa = weights.shape[-1]
    if kappa > n // 2 + 1:
        raise ModeBoundError(f"{kappa} modes exceed floor({n}/2)+1 for length {n}")
    xf = torch.fft.rfft(x, dim=-1)
    mixed = torch.einsum("bik,iok->bok", xf[..., :kappa], weights)
    pad = n // 2 + 1 - kappa
    if pad:
        mixed = torch.cat([mixed, mixed.new_zeros(mixed.shape[:-1] + (pad,))], dim=-1)
    out = torch.fft.irfft(mixed, n=n, dim=-1)
    return out[0] if squeeze else out


def avg_pool(x: torch.Tensor, factor: int = 2) -> torch.Tensor:
    n = x.shape[-1]
    if n % factor:
        raise ValueError(f"length {n} not divisible by {factor}")
    return x.reshape(x.shape[:-1] + (n // factor, factor)).mean(-1)


def upsample_linear(x: torch.Tensor, factor: int = 2) -> torch.Tensor:
    """Linear interpolation at half-cell offsets with endpoint replication: [2, 6] -> [2, 3, 5, 6]."""
    squeeze = x.dim() == 2
    if squeeze:
        x = x[None]
    out = F.interpolate(x, scale_factor=factor, mode="linear", align_corners=False)
    return out[0] if squeeze else out


class SpectralConv1d(nn.Module):
    def __init__(self, d_in: int, d_out: int, modes: int):
        super().__init__()
        self.modes = modes
        scale = 1.0 / (d_in * d_out)
        # real/imag stored as a trailing axis of length 2
        self.weight = nn.Parameter(scale * torch.rand(d_in, d_out, modes, 2))

    def complex_weight(self) -> torch.Tensor:
        return torch.view_as_complex(self.weight)

    def forward(self, x):
        return spectral_conv(x, self.complex_weight())


class FnoBlock(nn.Module):
    """``act(W v + K v)``: pointwise affine path plus truncated spectral path."""

    def __init__(self, d_in: int, d_out: int, modes: int, activation: str = "gelu"):
        super().__init__()
        self.spectral = SpectralConv1d(d_in, d_out, modes)
        self.pointwise = nn.Conv1d(d_in, d_out, 1)
        self.act = ACTIVATIONS[activation]

    def forward(self, x):
        return self.act(self.pointwise(x) + self.spectral(x))


def fourier_layer(x: torch.Tensor, spectral_weights: torch.Tensor, pointwise_weight: torch.Tensor,
                  pointwise_bias: Optional[torch.Tensor] = None, activation: str = "gelu") -> torch.Tensor:
    """Functional form of :class:`FnoBlock` (pointwise weight is ``(d_out, d_in)``)."""
    if pointwise_weight.shape[1] != x.shape[-2] or spectral_weights.shape[0] != x.shape[-2]:
        raise ValueError("channel width mismatch")
    local = torch.einsum("oi,...in->...on", pointwise_weight, x)
    if pointwise_bias is not None:
        local = local + pointwise_bias[:, None]
    return ACTIVATIONS[activation](local + spectral_conv(x, spectral_weights))


class HFNO(nn.Module):
    """U-shaped stack of FNO blocks with average pooling, linear upsampling and skip concatenation."""

    def __init__(self, cfg: FnoConfig):
        super().__init__()
        self.cfg = cfg
        d, act, modes = cfg.d_v, cfg.activation, cfg.modes_per_resolution
        self.lift = nn.Conv1d(cfg.input_channels, d, 1)
        self.encoders = nn.ModuleList(FnoBlock(d, d, modes[r], act) for r in range(cfg.l_enc))
        self.bottleneck = FnoBlock(d, d, modes[cfg.l_enc], act)
        self.decoders = nn.ModuleList(FnoBlock(2 * d, d, modes[r], act) for r in reversed(range(cfg.l_enc)))
        self.proj_hidden = nn.Conv1d(d, d, 1)
        self.proj_out = nn.Conv1d(d, cfg.output_channels, 1)
        self.act = ACTIVATIONS[act]
        self.register_buffer("in_mean", torch.zeros(cfg.input_channels))
        self.register_buffer("in_scale", torch.ones(cfg.input_channels))
        self.register_buffer("out_mean", torch.zeros(cfg.output_channels))
        self.register_buffer("out_scale", torch.ones(cfg.output_channels))

    def set_norm_stats(self, in_mean, in_scale, out_mean, out_scale) -> None:
        for name, val in (("in_mean", in_mean), ("in_scale", in_scale), ("out_mean", out_mean), ("out_scale", out_scale)):
            getattr(self, name).copy_(torch.as_tensor(np.asarray(val), dtype=getattr(self, name).dtype))

    def forward_latent(self, x: torch.Tensor, capture: Optional[Dict[str, torch.Tensor]] = None) -> torch.Tensor:
        """Normalized input ``(B, 3M+1, N)`` to the real two-channel output before denormalization."""
        self.cfg.check_resolution(x.shape[-1])
        v = self.lift(x)
        skips = []
        for r, block in enumerate(self.encoders):
            v = block(v)
            if capture is not None:
                capture[f"encoder{r}"] = v.detach()
            skips.append(v)
            v = avg_pool(v)
        v = self.bottleneck(v)
        if capture is not None:
            capture["bottleneck"] = v.detach()
        for block, skip in zip(self.decoders, reversed(skips)):
            v = block(torch.cat([upsample_linear(v), skip], dim=1))
        return self.proj_out(self.act(self.proj_hidden(v)))

    def normalize(self, features: torch.Tensor) -> torch.Tensor:
        return (features - self.in_mean[:, None]) / self.in_scale[:, None]

    def forward(self, features: torch.Tensor, capture=None) -> torch.Tensor:
        """Raw features ``(B, 3M+1, N)`` to the denormalized complex channel ``(B, N)``."""
        out = self.forward_latent(self.normalize(features), capture)
        out = out * self.out_scale[:, None] + self.out_mean[:, None]
        return torch.complex(out[:, 0], out[:, 1])


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def build_input_features(pilots: PilotSet, target) -> np.ndarray:
    """``(3M+1, N)`` field: Re/Im of each measurement interleaved, then pilot shapes, then the target shape."""
    zt = target.zeta if isinstance(target, DeformationShape) else np.asarray(target)
    meas = pilots.measurements
    if meas.shape[1] != zt.shape[0]:
        raise ValueError("pilot measurements and target shape differ in N")
    return features_from_arrays(meas[None], pilots.shape_matrix()[None], zt[None])[0]


def features_from_arrays(meas: np.ndarray, pilot_shapes: np.ndarray, targets: np.ndarray,
                         dtype=np.float64) -> np.ndarray:
    """Batched feature builder: ``meas (B, M, N)`` complex, ``pilot_shapes (B, M, N)``, ``targets (B, N)``."""
    B, M, N = meas.shape
    if pilot_shapes.shape[-2:] != (M, N) or targets.shape[-1] != N:
        raise ValueError("feature inputs disagree on M or N")
    out = np.empty((B, 3 * M + 1, N), dtype=dtype)
    out[:, 0:2 * M:2] = meas.real
    out[:, 1:2 * M:2] = meas.imag
    out[:, 2 * M:3 * M] = np.broadcast_to(pilot_shapes, (B, M, N))
    out[:, 3 * M] = targets
    return out


def export_spectral_weights(model: HFNO) -> Dict[str, np.ndarray]:
    """Mean ``|R[:, :, k]|`` over input/output channels, per block and mode."""
    blocks = [(f"encoder{r}", b) for r, b in enumerate(model.encoders)]
    blocks.append(("bottleneck", model.bottleneck))
    blocks += [(f"decoder{i}", b) for i, b in enumerate(model.decoders)]
    with torch.no_grad():
        return {name: b.spectral.complex_weight().abs().mean(dim=(0, 1)).cpu().numpy().astype(np.float64)
                for name, b in blocks}
