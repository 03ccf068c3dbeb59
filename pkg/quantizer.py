"""
Latent Quantizer
mu-law companding plus a mid-rise uniform scalar quantizer, applied to the
real and imaginary parts of the latent independently.

numpy functions (compand, expand, quantize_uniform) check their [-1, 1]
domain and are the reference definitions; the torch path used inside the
models clips first and carries a straight-through gradient.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import torch

from errors import InvalidArgumentError, OutOfRangeError

logger = logging.getLogger(__name__)

_DOMAIN_TOL = 1e-12


@dataclass(frozen=True)
class QuantConfig:
    mu: float = 50.0
    bits: int = 4
    s_max: float = 1.0

    def __post_init__(self):
        if not self.mu > 0:
            raise InvalidArgumentError(f"mu must be > 0, got {self.mu}")
        if self.bits < 1:
            raise InvalidArgumentError(f"bits must be >= 1, got {self.bits}")
        if not self.s_max > 0:
            raise InvalidArgumentError(f"s_max must be > 0, got {self.s_max}")

    @property
    def levels(self) -> int:
        return 2 ** self.bits

    @property
    def step(self) -> float:
        return 2.0 / self.levels


def feedback_bits(k: int, bits: int) -> int:
    """Bits per feedback report: real and imaginary part of k entries"""
    return 2 * k * bits


def _check_domain(x: np.ndarray, name: str):
    if np.any(np.abs(x) > 1.0 + _DOMAIN_TOL) or np.any(np.isnan(x)):
        raise OutOfRangeError(f"{name} input must lie in [-1, 1]")


def compand(x, mu: float):
    """sign(x) * log(1 + mu|x|) / log(1 + mu)"""
    x_arr = np.asarray(x, dtype=np.float64)
    _check_domain(x_arr, "compand")
    y = np.sign(x_arr) * np.log1p(mu * np.abs(x_arr)) / np.log1p(mu)
    return float(y) if y.ndim == 0 else y


def expand(y, mu: float):
    """sign(y) * ((1 + mu)^|y| - 1) / mu"""
    y_arr = np.asarray(y, dtype=np.float64)
    _check_domain(y_arr, "expand")
    x = np.sign(y_arr) * np.expm1(np.abs(y_arr) * np.log1p(mu)) / mu
    return float(x) if x.ndim == 0 else x


def quantize_uniform(y, bits: int) -> Tuple:
    """Mid-rise quantizer with 2^bits levels on [-1, 1]; returns (code, y_hat)"""
    if bits < 1:
        raise InvalidArgumentError(f"bits must be >= 1, got {bits}")
    y_arr = np.asarray(y, dtype=np.float64)
    _check_domain(y_arr, "quantize_uniform")
    levels = 2 ** bits
    step = 2.0 / levels
    code = np.clip(np.floor((y_arr + 1.0) / step), 0, levels - 1).astype(np.int64)
    y_hat = -1.0 + (code + 0.5) * step
    if y_arr.ndim == 0:
        return int(code), float(y_hat)
    return code, y_hat


# =============================================================================
# torch path
# =============================================================================

def _compand_t(x: torch.Tensor, mu: float) -> torch.Tensor:
    return torch.sign(x) * torch.log1p(mu * torch.abs(x)) / math.log1p(mu)


def _expand_t(y: torch.Tensor, mu: float) -> torch.Tensor:
    return torch.sign(y) * torch.expm1(torch.abs(y) * math.log1p(mu)) / mu


def _quantize_t(y: torch.Tensor, bits: int) -> torch.Tensor:
    levels = 2 ** bits
    step = 2.0 / levels
    code = torch.clamp(torch.floor((y + 1.0) / step), 0, levels - 1)
    return -1.0 + (code + 0.5) * step


def _quantize_components(x: torch.Tensor, config: QuantConfig) -> torch.Tensor:
    scaled = torch.clamp(x / config.s_max, -1.0, 1.0)
    y_hat = _quantize_t(_compand_t(scaled, config.mu), config.bits)
    return _expand_t(y_hat, config.mu) * config.s_max


class StraightThroughQuantize(torch.autograd.Function):
    """Forward: clip, compand, quantize, expand. Backward: identity"""

    @staticmethod
    def forward(ctx, x, config):
        return _quantize_components(x, config)

    @staticmethod
    def backward(ctx, grad_output):
        return grad_output, None


def quantize_latent(s: torch.Tensor, config: QuantConfig, straight_through: bool = True) -> torch.Tensor:
    """Quantize real and imaginary parts of a complex latent independently"""
    parts = torch.stack([s.real, s.imag], dim=-1)
    if straight_through:
        q = StraightThroughQuantize.apply(parts, config)
    else:
        q = _quantize_components(parts, config)
    return torch.complex(q[..., 0], q[..., 1])


def clip_rate(s: torch.Tensor, s_max: float, k_active: Optional[int] = None) -> float:
    """Share of active real/imag components whose magnitude exceeds s_max"""
    if k_active is not None:
        s = s[..., :k_active]
    parts = torch.stack([s.real, s.imag], dim=-1)
    return float((parts.abs() > s_max).float().mean())


class LatentScaleTracker:
    """
    Exponential moving average of the per-batch max |component| of the
    latent. Updated during training, frozen for evaluation.
    """

    def __init__(self, decay: float = 0.99, s_max: Optional[float] = None):
        if not 0.0 <= decay < 1.0:
            raise InvalidArgumentError(f"EMA decay must be in [0, 1), got {decay}")
        self.decay = decay
        self.s_max = s_max
        self.frozen = False

    def update(self, s: torch.Tensor, k_active: Optional[int] = None) -> float:
        if self.frozen:
            return self.value
        if k_active is not None:
            s = s[..., :k_active]
        batch_max = float(torch.maximum(s.real.abs().max(), s.imag.abs().max()).detach())
        if self.s_max is None:
            self.s_max = batch_max
        else:
            self.s_max = self.decay * self.s_max + (1.0 - self.decay) * batch_max
        return self.value

    def freeze(self):
        self.frozen = True

    @property
    def value(self) -> float:
        # An untrained tracker falls back to the unit-power scale
        return self.s_max if self.s_max and self.s_max > 0 else 1.0

    def config(self, mu: float, bits: int) -> QuantConfig:
        return QuantConfig(mu=mu, bits=bits, s_max=self.value)

    def to_dict(self) -> dict:
        return {'decay': self.decay, 's_max': self.s_max, 'frozen': self.frozen}

    @classmethod
    def from_dict(cls, d: dict) -> 'LatentScaleTracker':
        tracker = cls(decay=d.get('decay', 0.99), s_max=d.get('s_max'))
        tracker.frozen = bool(d.get('frozen', False))
        return tracker
