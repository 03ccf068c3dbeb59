"""
Pipeline API Layer
Thin, stable API over a trained ModelBundle: UE-side encoding, uplink feedback,
Stage-1 reconstruction and Stage-2 refinement. Evaluation sweeps, benchmarks
and the CLI all go through here.
"""

import logging
import math
from typing import Dict, Optional

import numpy as np
import torch

from autoencoder import LatentVector
from core_config import PLATFORM_VERSION
from data_normalization import CsiNormalizer
from errors import InvalidArgumentError
from feedback_channel import ChannelConfig
from persistence import ModelBundle
from quantizer import QuantConfig
from residual_diffusion import DiffusionSchedule, TrainMode, make_schedule, sample

logger = logging.getLogger(__name__)

DEFAULT_MU = 50.0


class RdJsccPipeline:
    """Unified API for two-stage CSI reconstruction"""

    def __init__(self, bundle: ModelBundle, channel: Optional[ChannelConfig] = None,
                 device: str = 'cpu', deterministic_init: bool = False):
        self.bundle = bundle
        self.channel = channel or ChannelConfig()
        self.device = device
        self.deterministic_init = deterministic_init
        self.autoencoder = bundle.autoencoder.to(device).eval()
        self.denoiser = bundle.denoiser.to(device).eval() if bundle.denoiser is not None else None
        self._schedule: Optional[DiffusionSchedule] = None
        self._dtype = next(self.autoencoder.parameters()).dtype

    # ------------------------------------------------------------------
    # Properties
    # ------------------------------------------------------------------

    @property
    def rates(self):
        return self.autoencoder.rates

    @property
    def max_steps(self) -> int:
        return int(self.bundle.diffusion.get('N', 0)) if self.denoiser is not None else 0

    @property
    def train_mode(self) -> TrainMode:
        return self.bundle.train_mode

    @property
    def schedule(self) -> DiffusionSchedule:
        if self._schedule is None:
            d = self.bundle.diffusion
            self._schedule = make_schedule(int(d['N']), d.get('schedule', 'cosine'), d.get('horizon'))
        return self._schedule

    # ------------------------------------------------------------------
    # Domain conversion
    # ------------------------------------------------------------------

    def to_network(self, values_phys: np.ndarray) -> torch.Tensor:
        normalized = CsiNormalizer.apply(np.asarray(values_phys, dtype=np.float64), self.bundle.stats)
        return torch.as_tensor(normalized, dtype=self._dtype, device=self.device)

    def to_physical(self, values_norm: torch.Tensor) -> np.ndarray:
        arr = values_norm.detach().cpu().numpy().astype(np.float64)
        return CsiNormalizer.denormalize(arr, self.bundle.stats)

    def quant_config(self, bits: int, latent: Optional[torch.Tensor] = None) -> Optional[QuantConfig]:
        """bits = 0 means unquantized; post-hoc use without a tracked scale takes the batch max"""
        if bits <= 0:
            return None
        mu = float(self.bundle.extra.get('quant_mu', DEFAULT_MU))
        if self.bundle.tracker is not None and self.bundle.tracker.s_max:
            s_max = self.bundle.tracker.value
        elif latent is not None:
            s_max = float(torch.maximum(latent.real.abs().max(), latent.imag.abs().max())) or 1.0
        else:
            s_max = 1.0
        return QuantConfig(mu=mu, bits=bits, s_max=s_max)

    # ------------------------------------------------------------------
    # Stages
    # ------------------------------------------------------------------

    def digital_gate_snr(self) -> float:
        """
        Gate SNR for a quantized report on the noiseless digital link: the
        noiseless input for STE-trained models, otherwise the top of the
        analog training SNR range.
        """
        if self.bundle.quant_mode == 'ste':
            return math.inf
        return float(self.bundle.extra.get('train_snr_max_db', math.inf))

    @torch.no_grad()
    def encode(self, H: torch.Tensor, snr_db: float, k: Optional[int] = None, bits: int = 0) -> LatentVector:
        """UE side. A quantized report is sent with the digital-link gate input"""
        gate_snr = self.digital_gate_snr() if bits > 0 else snr_db
        latent = self.autoencoder.encode(H, gate_snr, k)
        quant = self.quant_config(bits, latent.values)
        if quant is None:
            return latent
        return self.autoencoder.encode(H, gate_snr, k, quant=quant, straight_through=False)

    @torch.no_grad()
    def feedback(self, latent: LatentVector, snr_db: float, bits: int = 0,
                 generator: Optional[torch.Generator] = None) -> torch.Tensor:
        return self.autoencoder.feedback(latent, self.channel, snr_db, generator, digital=bits > 0)

    @torch.no_grad()
    def stage1(self, H: torch.Tensor, snr_db: float, k: Optional[int] = None, bits: int = 0,
               generator: Optional[torch.Generator] = None) -> torch.Tensor:
        latent = self.encode(H, snr_db, k, bits)
        y = self.feedback(latent, snr_db, bits, generator)
        return self.autoencoder.decode(y, self.digital_gate_snr() if bits > 0 else snr_db)

    @torch.no_grad()
    def refine(self, h_hat: torch.Tensor, n_steps: int,
               generator: Optional[torch.Generator] = None) -> torch.Tensor:
        """Stage 2 on any coarse estimate in the network domain"""
        if self.denoiser is None:
            raise InvalidArgumentError("This bundle has no denoiser; use early exit (n_steps = 0)")
        return sample(h_hat, self.denoiser, self.schedule, n_steps, self.train_mode,
                      generator, self.deterministic_init)

    def reconstruct(
        self,
        H_phys: np.ndarray,
        snr_db: float,
        k: Optional[int] = None,
        n_steps: int = 0,
        bits: int = 0,
        early_exit: bool = False,
        generator: Optional[torch.Generator] = None
    ) -> Dict:
        """
        Full two-stage reconstruction of physical-unit CSI (n, 2, R, C).

        Returns a dict with stable schema:
            {
                'h_rec': ndarray,        # physical units, final output
                'h_stage1': ndarray,     # physical units, Stage-1 output
                'n_steps': int,          # 0 when Stage 2 was skipped
                'mode': str,
                'k': int,
                'bits': int,
                'snr_db': float,
                'platform_version': str
            }
        """
        k = self.autoencoder.config.k_active if k is None else k
        H = self.to_network(H_phys)
        h_hat = self.stage1(H, snr_db, k, bits, generator)

        used_steps = 0 if early_exit or self.denoiser is None else n_steps
        if used_steps > 0:
            h_out = self.refine(h_hat, used_steps, generator)
            mode = self.train_mode.value
        else:
            h_out = h_hat
            mode = 'STAGE1'

        stage1_phys = self.to_physical(h_hat)
        return {
            'h_rec': stage1_phys if h_out is h_hat else self.to_physical(h_out),
            'h_stage1': stage1_phys,
            'n_steps': used_steps,
            'mode': mode,
            'k': k,
            'bits': bits,
            'snr_db': snr_db,
            'platform_version': PLATFORM_VERSION,
        }
