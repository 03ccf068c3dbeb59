"""
Feedback Channel
Uplink transmission of the complex latent (AWGN or Rayleigh with MRC combining)
and imperfect downlink channel estimation at the UE.

Latents are complex torch tensors whose last axis holds the k channel uses.
Estimation error is applied to plane-stacked numpy arrays in physical units.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np
import torch

from core_config import CSI_CFG, ChannelSection
from errors import DegenerateInputError, InvalidArgumentError
from csi_data import channel_power

logger = logging.getLogger(__name__)

SnrLike = Union[float, torch.Tensor]


@dataclass(frozen=True)
class ChannelConfig:
    mode: str = "AWGN"                  # AWGN | RAYLEIGH_MRC
    snr_db: float = 10.0
    mrc_branches: int = CSI_CFG.MRC_BRANCHES
    train_snr_range_db: Tuple[float, float] = (-5.0, 10.0)

    def __post_init__(self):
        if self.mode not in ("AWGN", "RAYLEIGH_MRC"):
            raise InvalidArgumentError(f"Unknown channel mode: {self.mode}")
        if math.isnan(self.snr_db) or self.snr_db == -math.inf:
            raise InvalidArgumentError(f"snr_db must be finite or +inf, got {self.snr_db}")
        if self.mrc_branches < 1:
            raise InvalidArgumentError("mrc_branches must be >= 1")
        low, high = self.train_snr_range_db
        if low > high:
            raise InvalidArgumentError(f"train_snr_range_db low > high: {low} > {high}")

    @classmethod
    def from_section(cls, section: ChannelSection) -> 'ChannelConfig':
        return cls(
            mode=section.mode,
            snr_db=section.snr_db,
            mrc_branches=section.mrc_branches,
            train_snr_range_db=tuple(section.train_snr_range_db),
        )

    @property
    def is_noiseless(self) -> bool:
        return self.snr_db == CSI_CFG.NOISELESS_SNR


@dataclass(frozen=True)
class CnrConfig:
    cnr_db: float = CSI_CFG.PERFECT_CSI

    def __post_init__(self):
        if math.isnan(self.cnr_db) or self.cnr_db == -math.inf:
            raise InvalidArgumentError(f"cnr_db must be finite or +inf, got {self.cnr_db}")

    @property
    def is_perfect(self) -> bool:
        return self.cnr_db == CSI_CFG.PERFECT_CSI


# =============================================================================
# Power constraint
# =============================================================================

def power_normalize(s: torch.Tensor) -> torch.Tensor:
    """Scale each vector (last axis) to average power exactly 1"""
    k = s.shape[-1]
    energy = (s.real ** 2 + s.imag ** 2).sum(dim=-1, keepdim=True)
    if bool((energy == 0).any()):
        raise DegenerateInputError("power_normalize of an all-zero latent")
    return s * torch.sqrt(k / energy)


def segment_bounds(k_active: int, rates: Sequence[int]) -> list:
    """Segment end points inside the active prefix: the nested rates up to k_active"""
    bounds = [r for r in sorted(rates) if r < k_active]
    bounds.append(k_active)
    return bounds


def segment_power_normalize(s: torch.Tensor, k_active: int, rates: Sequence[int] = ()) -> torch.Tensor:
    """
    Power-normalize each nested segment [k_{i-1}, k_i) of the active prefix
    independently and zero everything from k_active on.

    Every segment ends with average power 1, so the whole prefix does too and
    the first k_1 entries do not depend on k_active.
    """
    if not 1 <= k_active <= s.shape[-1]:
        raise InvalidArgumentError(f"k_active={k_active} outside [1, {s.shape[-1]}]")
    pieces = []
    start = 0
    for end in segment_bounds(k_active, rates):
        pieces.append(power_normalize(s[..., start:end]))
        start = end
    suffix = torch.zeros_like(s[..., k_active:])
    return torch.cat(pieces + [suffix], dim=-1)


# =============================================================================
# Uplink
# =============================================================================

def noise_variance(snr_db: SnrLike) -> SnrLike:
    """Per-entry complex noise variance for unit signal power"""
    if isinstance(snr_db, torch.Tensor):
        return torch.pow(10.0, -snr_db / 10.0)
    return 10.0 ** (-snr_db / 10.0)


def _complex_normal(shape, generator, device, dtype) -> torch.Tensor:
    """Unit-variance circular complex Gaussian"""
    real_dtype = torch.float64 if dtype == torch.complex128 else torch.float32
    re = torch.randn(shape, generator=generator, device=device, dtype=real_dtype)
    im = torch.randn(shape, generator=generator, device=device, dtype=real_dtype)
    return torch.complex(re, im) / math.sqrt(2.0)


def mrc_gains(shape, branches: int, generator: Optional[torch.Generator] = None,
              device=None, dtype=torch.complex64) -> torch.Tensor:
    """Post-combining gain sum_j |h_j|^2 for i.i.d. unit-variance Rayleigh branches"""
    h = _complex_normal(tuple(shape) + (branches,), generator, device, dtype)
    return (h.real ** 2 + h.imag ** 2).sum(dim=-1)


def transmit(
    s: torch.Tensor,
    config: ChannelConfig,
    generator: Optional[torch.Generator] = None,
    snr_db: Optional[SnrLike] = None
) -> torch.Tensor:
    """
    Send power-normalized latents over the uplink.

    snr_db overrides config.snr_db and may be a scalar or one value per
    leading sample (shape s.shape[:-1] or s.shape[:1]). +inf is noiseless.
    """
    snr = config.snr_db if snr_db is None else snr_db

    if not isinstance(snr, torch.Tensor):
        if snr == CSI_CFG.NOISELESS_SNR:
            return s.clone()
        sigma2 = torch.tensor(noise_variance(float(snr)), device=s.device)
    else:
        sigma2 = noise_variance(snr.to(device=s.device, dtype=torch.float64))
        while sigma2.dim() < s.dim():
            sigma2 = sigma2.unsqueeze(-1)

    if config.mode == "RAYLEIGH_MRC":
        gain = mrc_gains(s.shape, config.mrc_branches, generator, s.device, s.dtype)
        sigma2 = sigma2 / gain

    noise = _complex_normal(s.shape, generator, s.device, s.dtype)
    scale = torch.sqrt(sigma2).to(noise.real.dtype)
    return s + noise * scale


def sample_training_snr(range_db: Tuple[float, float], rng: np.random.Generator, size=None):
    """Uniform draw in [low, high] dB; a float, or an array when size is given"""
    low, high = range_db
    if low > high:
        raise InvalidArgumentError(f"Invalid SNR range ({low}, {high})")
    draw = rng.uniform(low, high, size=size)
    return float(draw) if size is None else draw


# =============================================================================
# Imperfect CSI
# =============================================================================

def inject_estimation_error(
    values: np.ndarray,
    cnr: CnrConfig,
    rng: np.random.Generator,
    p_h: Optional[float] = None
) -> np.ndarray:
    """
    H_tilde = H + E on plane-stacked values (..., 2, R, C) in physical units.

    E is circular complex Gaussian with per-entry variance p_h * 10^(-cnr_db/10).
    p_h is the dataset-level mean entry power; when omitted it is taken from
    `values` itself.
    """
    if cnr.is_perfect:
        return values
    if p_h is None:
        p_h = channel_power(values)
    variance = p_h * 10.0 ** (-cnr.cnr_db / 10.0)
    noise = rng.standard_normal(np.shape(values)) * math.sqrt(variance / 2.0)
    return (np.asarray(values, dtype=np.float64) + noise).astype(np.asarray(values).dtype)
