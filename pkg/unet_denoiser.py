"""
U-Net Denoiser
Predicts the clean channel z0 from (z_t, H_hat, t). The coarse estimate is
concatenated with z_t on the channel axis and a sinusoidal embedding of t is
added inside every residual block, at every resolution.
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, List

import torch
import torch.nn as nn
import torch.nn.functional as F

from core_config import CSI_CFG, DiffSection
from errors import InvalidArgumentError

logger = logging.getLogger(__name__)


@dataclass
class DenoiserConfig:
    base_channels: int = 64
    mults: List[int] = field(default_factory=lambda: [1, 2, 3, 4])
    time_dim: int = 128
    rows: int = CSI_CFG.N_DELAY
    cols: int = CSI_CFG.N_TX
    csi_channels: int = 2

    def __post_init__(self):
        if self.base_channels < 1 or not self.mults or any(m < 1 for m in self.mults):
            raise InvalidArgumentError("base_channels and mults must be positive")
        if self.time_dim < 2 or self.time_dim % 2:
            raise InvalidArgumentError("time_dim must be an even number >= 2")

    @classmethod
    def from_section(cls, section: DiffSection, rows: int, cols: int) -> 'DenoiserConfig':
        return cls(section.base_channels, list(section.mults), section.time_dim, rows, cols)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> 'DenoiserConfig':
        return cls(**d)


def sinusoidal_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """(B,) timesteps -> (B, dim) [sin | cos] features"""
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, device=t.device, dtype=torch.float64) / half)
    args = t.to(torch.float64)[:, None] * freqs[None, :]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=-1)


def _groups(channels: int) -> int:
    return 8 if channels % 8 == 0 else 1


class TimeResBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, time_dim: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(_groups(in_ch), in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.time_proj = nn.Linear(time_dim, out_ch)
        self.norm2 = nn.GroupNorm(_groups(out_ch), out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.shortcut = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x: torch.Tensor, temb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.time_proj(temb)[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.shortcut(x)


class UNetDenoiser(nn.Module):
    """
    Symmetric encoder/decoder with one residual block per level, average-pool
    downsampling, nearest upsampling to the skip's size and concatenated skips.
    """

    def __init__(self, config: DenoiserConfig):
        super().__init__()
        self.config = config
        ch = [config.base_channels * m for m in config.mults]
        tdim = config.time_dim

        self.time_mlp = nn.Sequential(
            nn.Linear(tdim, tdim), nn.SiLU(), nn.Linear(tdim, tdim)
        )
        self.input_conv = nn.Conv2d(2 * config.csi_channels, ch[0], 3, padding=1)

        self.down = nn.ModuleList()
        prev = ch[0]
        for c in ch:
            self.down.append(TimeResBlock(prev, c, tdim))
            prev = c
        self.middle = TimeResBlock(prev, prev, tdim)

        self.up = nn.ModuleList()
        for c in reversed(ch):
            self.up.append(TimeResBlock(prev + c, c, tdim))
            prev = c

        self.out_norm = nn.GroupNorm(_groups(prev), prev)
        self.out_conv = nn.Conv2d(prev, config.csi_channels, 3, padding=1)

    def forward(self, z_t: torch.Tensor, h_hat: torch.Tensor, t) -> torch.Tensor:
        if z_t.shape != h_hat.shape or z_t.dim() != 4 or z_t.shape[1] != self.config.csi_channels:
            raise InvalidArgumentError(
                f"Denoiser inputs must share shape (B, {self.config.csi_channels}, R, C): "
                f"{tuple(z_t.shape)} vs {tuple(h_hat.shape)}"
            )
        t = torch.as_tensor(t, device=z_t.device)
        if t.dim() == 0:
            t = t.expand(z_t.shape[0])
        temb = self.time_mlp(sinusoidal_embedding(t, self.config.time_dim).to(z_t.dtype))

        x = self.input_conv(torch.cat([z_t, h_hat], dim=1))
        skips = []
        for i, block in enumerate(self.down):
            x = block(x, temb)
            skips.append(x)
            if i < len(self.down) - 1 and min(x.shape[-2:]) >= 2:
                x = F.avg_pool2d(x, 2)

        x = self.middle(x, temb)

        for block in self.up:
            skip = skips.pop()
            if x.shape[-2:] != skip.shape[-2:]:
                x = F.interpolate(x, size=skip.shape[-2:], mode='nearest')
            x = block(torch.cat([x, skip], dim=1), temb)

        return self.out_conv(F.silu(self.out_norm(x)))


def denoiser_forward(z_t: torch.Tensor, h_hat: torch.Tensor, t, model: Callable) -> torch.Tensor:
    """
    Predict z0 (not the noise) from a noisy state and the coarse estimate.

    Args:
        z_t: Noisy state, shape (B, 2, R, C).
        h_hat: Stage-1 reconstruction, same shape as z_t.
        t: Timestep, a scalar or one per sample; scalars are broadcast.
        model: UNetDenoiser or any callable with the same signature.

    Returns:
        z0 estimate with the shape of z_t.
    """
    t = torch.as_tensor(t, device=z_t.device)
    if t.dim() == 0:
        t = t.expand(z_t.shape[0])
    return model(z_t, h_hat, t)
