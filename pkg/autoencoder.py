"""
Stage-1 Autoencoder
SNR-adaptive convolutional encoder (UE side), nested-rate latent with
per-segment power normalization, and residual-block decoder (BS side).

Tensors are batched: CSI is (B, 2, R, C) real, latents are (B, k_max) complex.
"""

import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import torch
import torch.nn as nn

from core_config import AeSection, CSI_CFG
from errors import InvalidArgumentError
from feedback_channel import ChannelConfig, segment_power_normalize, transmit
from quantizer import QuantConfig, quantize_latent

logger = logging.getLogger(__name__)

SnrLike = Union[float, torch.Tensor]

ENCODER_PRESETS = {
    'FOUR_LAYER': [(2, 11), (32, 9), (48, 7), (2, 5)],
    'TWO_LAYER': [(2, 7), (2, 7)],
}
DECODER_BLOCK = [(16, 7), (24, 5), (2, 3)]


# =============================================================================
# Configs
# =============================================================================

@dataclass
class EncoderConfig:
    layers: List[Tuple[int, int]] = field(default_factory=lambda: list(ENCODER_PRESETS['FOUR_LAYER']))
    latent_k_max: int = 32
    depth: str = 'FOUR_LAYER'
    rows: int = CSI_CFG.N_DELAY
    cols: int = CSI_CFG.N_TX
    in_channels: int = 2

    @classmethod
    def preset(cls, depth: str, latent_k_max: int = 32, rows: int = CSI_CFG.N_DELAY,
               cols: int = CSI_CFG.N_TX) -> 'EncoderConfig':
        if depth not in ENCODER_PRESETS:
            raise InvalidArgumentError(f"Unknown encoder depth preset: {depth}")
        return cls(list(ENCODER_PRESETS[depth]), latent_k_max, depth, rows, cols)


@dataclass
class DecoderConfig:
    input_kernel: int = 7
    n_res_blocks: int = 5
    block: List[Tuple[int, int]] = field(default_factory=lambda: list(DECODER_BLOCK))
    latent_k_max: int = 32
    rows: int = CSI_CFG.N_DELAY
    cols: int = CSI_CFG.N_TX
    channels: int = 2


@dataclass
class MrlConfig:
    enabled: bool = False
    rates: List[int] = field(default_factory=lambda: [8, 16, 32])
    weights: List[float] = field(default_factory=lambda: [1.0, 1.0, 1.0])

    def validate(self, latent_k_max: int):
        if list(self.rates) != sorted(self.rates) or len(set(self.rates)) != len(self.rates):
            raise InvalidArgumentError(f"MRL rates must be strictly ascending: {self.rates}")
        if any(r < 1 or r > latent_k_max for r in self.rates):
            raise InvalidArgumentError(f"MRL rates must lie in [1, {latent_k_max}]: {self.rates}")
        if len(self.weights) != len(self.rates) or any(w < 0 for w in self.weights):
            raise InvalidArgumentError("MRL weights must be non-negative, one per rate")


@dataclass
class AutoencoderConfig:
    """Everything needed to rebuild an autoencoder from a checkpoint"""
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    mrl: MrlConfig = field(default_factory=MrlConfig)
    k_active: int = 16
    snr_cap_db: float = 40.0

    @classmethod
    def from_section(cls, section: AeSection, rows: int, cols: int) -> 'AutoencoderConfig':
        return cls(
            encoder=EncoderConfig.preset(section.depth, section.latent_k_max, rows, cols),
            decoder=DecoderConfig(n_res_blocks=section.n_res_blocks, latent_k_max=section.latent_k_max,
                                  rows=rows, cols=cols),
            mrl=MrlConfig(section.mrl.enabled, list(section.mrl.rates), list(section.mrl.weights)),
            k_active=section.k_active,
            snr_cap_db=section.snr_cap_db,
        )

    @property
    def rates(self) -> List[int]:
        """Rate set the model serves"""
        return list(self.mrl.rates) if self.mrl.enabled else [self.k_active]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> 'AutoencoderConfig':
        enc = dict(d['encoder'])
        enc['layers'] = [tuple(layer) for layer in enc['layers']]
        dec = dict(d['decoder'])
        dec['block'] = [tuple(b) for b in dec['block']]
        return cls(
            encoder=EncoderConfig(**enc),
            decoder=DecoderConfig(**dec),
            mrl=MrlConfig(**d['mrl']),
            k_active=d['k_active'],
            snr_cap_db=d['snr_cap_db'],
        )


@dataclass
class LatentVector:
    values: torch.Tensor        # (B, k_max) complex, zero from k_active on
    k_active: int

    @property
    def rate(self) -> int:
        return self.k_active


# =============================================================================
# SNR adaptation
# =============================================================================

def snr_input(snr_db: SnrLike, batch: int, cap_db: float, device=None, dtype=torch.float32) -> torch.Tensor:
    """(B, 1) gate input snr_db / 10, with the noiseless sentinel clamped to the cap"""
    snr = torch.as_tensor(snr_db, dtype=dtype, device=device)
    if snr.dim() == 0:
        snr = snr.expand(batch)
    snr = torch.clamp(snr.reshape(batch), max=cap_db)
    return (snr / 10.0).unsqueeze(-1)


class SnrGate(nn.Module):
    """FC(1 -> C/2, ReLU) -> FC(C/2 -> C, sigmoid); one gate per feature channel"""

    def __init__(self, channels: int):
        super().__init__()
        hidden = max(channels // 2, 1)
        self.fc1 = nn.Linear(1, hidden)
        self.fc2 = nn.Linear(hidden, channels)

    def gates(self, snr: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.fc2(torch.relu(self.fc1(snr))))

    def forward(self, features: torch.Tensor, snr: torch.Tensor) -> torch.Tensor:
        return features * self.gates(snr)[:, :, None, None]


def snr_adapt(features: torch.Tensor, snr_db: SnrLike, gate: SnrGate, cap_db: float = 40.0) -> torch.Tensor:
    """
    Scale each feature channel by its SNR gate.

    Args:
        features: (B, C, h, w) feature maps
        snr_db: scalar or one SNR per sample; +inf is clamped to cap_db
        gate: the layer's SnrGate (C outputs)
        cap_db: clamp applied before the snr_db / 10 normalization

    Returns:
        features with channel c multiplied by gate_c(snr)
    """
    snr = snr_input(snr_db, features.shape[0], cap_db, features.device, features.dtype)
    return gate(features, snr)


# =============================================================================
# Networks
# =============================================================================

def _conv(in_ch: int, out_ch: int, kernel: int) -> nn.Conv2d:
    return nn.Conv2d(in_ch, out_ch, kernel, stride=1, padding=kernel // 2)


class CsiEncoder(nn.Module):
    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.config = config
        convs, gates = [], []
        in_ch = config.in_channels
        for out_ch, kernel in config.layers:
            convs.append(_conv(in_ch, out_ch, kernel))
            gates.append(SnrGate(out_ch))
            in_ch = out_ch
        self.convs = nn.ModuleList(convs)
        self.gates = nn.ModuleList(gates)
        self.dense = nn.Linear(in_ch * config.rows * config.cols, 2 * config.latent_k_max)

    def forward(self, H: torch.Tensor, snr_db: SnrLike, cap_db: float = 40.0) -> torch.Tensor:
        """(B, 2, R, C) -> (B, 2 k_max) reals"""
        x = H
        for conv, gate in zip(self.convs, self.gates):
            x = snr_adapt(torch.relu(conv(x)), snr_db, gate, cap_db)
        return self.dense(x.flatten(start_dim=1))


class ResidualBlock(nn.Module):
    def __init__(self, channels: int, spec: Sequence[Tuple[int, int]]):
        super().__init__()
        layers = []
        in_ch = channels
        for i, (out_ch, kernel) in enumerate(spec):
            out_ch = channels if i == len(spec) - 1 else out_ch
            layers.append(_conv(in_ch, out_ch, kernel))
            in_ch = out_ch
        self.layers = nn.ModuleList(layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = x
        for i, layer in enumerate(self.layers):
            out = layer(out)
            if i < len(self.layers) - 1:
                out = torch.relu(out)
        return x + out


class CsiDecoder(nn.Module):
    def __init__(self, config: DecoderConfig):
        super().__init__()
        self.config = config
        ch = config.channels
        self.dense = nn.Linear(2 * config.latent_k_max, ch * config.rows * config.cols)
        self.input_conv = _conv(ch, ch, config.input_kernel)
        self.blocks = nn.ModuleList([ResidualBlock(ch, config.block) for _ in range(config.n_res_blocks)])
        self.gates = nn.ModuleList([SnrGate(ch) for _ in range(config.n_res_blocks)])

    def forward(self, y_real: torch.Tensor, snr_db: SnrLike, cap_db: float = 40.0) -> torch.Tensor:
        """(B, 2 k_max) reals -> (B, 2, R, C)"""
        cfg = self.config
        x = self.dense(y_real).reshape(-1, cfg.channels, cfg.rows, cfg.cols)
        x = torch.relu(self.input_conv(x))
        for block, gate in zip(self.blocks, self.gates):
            x = snr_adapt(block(x), snr_db, gate, cap_db)
        return x


def pair_complex(reals: torch.Tensor) -> torch.Tensor:
    """Interleaved (re, im, re, im, ...) -> complex"""
    return torch.complex(reals[..., 0::2], reals[..., 1::2])


def unpair_complex(z: torch.Tensor) -> torch.Tensor:
    """Inverse of pair_complex"""
    return torch.stack([z.real, z.imag], dim=-1).flatten(start_dim=-2)


class CsiAutoencoder(nn.Module):
    """
    Stage-1 model. encode() runs on the UE, decode() on the BS; forward()
    chains them through the uplink for training and evaluation.
    """

    def __init__(self, config: AutoencoderConfig):
        super().__init__()
        if config.encoder.latent_k_max != config.decoder.latent_k_max:
            raise InvalidArgumentError("Encoder and decoder disagree on latent_k_max")
        if config.mrl.enabled:
            config.mrl.validate(config.encoder.latent_k_max)
        self.config = config
        self.encoder = CsiEncoder(config.encoder)
        self.decoder = CsiDecoder(config.decoder)

    @property
    def k_max(self) -> int:
        return self.config.encoder.latent_k_max

    @property
    def rates(self) -> List[int]:
        return self.config.rates

    def _check_csi(self, H: torch.Tensor):
        expected = (2, self.config.encoder.rows, self.config.encoder.cols)
        if H.dim() != 4 or tuple(H.shape[1:]) != expected:
            raise InvalidArgumentError(f"Expected CSI batch (B, {expected}), got {tuple(H.shape)}")

    def encode(
        self,
        H: torch.Tensor,
        snr_db: SnrLike,
        k_active: Optional[int] = None,
        quant: Optional[QuantConfig] = None,
        straight_through: bool = True
    ) -> LatentVector:
        """
        Conv stack -> dense -> complex pairing -> nested masking and power normalization

        Args:
            H: Normalized CSI batch (B, 2, R, C)
            snr_db: Uplink SNR fed to the gates; scalar or one per sample, +inf allowed
            k_active: Active rate, one of self.rates (default: config.k_active)
            quant: Quantize each component after normalization
            straight_through: Identity gradient through the quantizer

        Returns:
            LatentVector whose first k_active entries carry unit power per
            segment and whose suffix is zero

        Raises:
            InvalidArgumentError: on a bad CSI shape or a rate outside the set
        """
        self._check_csi(H)
        k_active = self.config.k_active if k_active is None else k_active
        if k_active not in self.rates:
            raise InvalidArgumentError(f"k_active={k_active} is not in the rate set {self.rates}")

        reals = self.encoder(H, snr_db, self.config.snr_cap_db)
        s = segment_power_normalize(pair_complex(reals), k_active, self.rates)
        if quant is not None:
            s = quantize_latent(s, quant, straight_through=straight_through)
            s = self._mask(s, k_active)
        return LatentVector(s, k_active)

    def _mask(self, y: torch.Tensor, k_active: int) -> torch.Tensor:
        mask = torch.zeros(self.k_max, dtype=y.real.dtype, device=y.device)
        mask[:k_active] = 1.0
        return y * mask

    def decode(self, y: torch.Tensor, snr_db: SnrLike) -> torch.Tensor:
        """
        Reconstruct CSI from a received latent.

        Args:
            y: Received latent (B, k_max) complex, masked entries zero
            snr_db: SNR the report was sent at, or the gate SNR for a digital link

        Returns:
            Normalized CSI estimate (B, 2, R, C)
        """
        if y.dim() != 2 or y.shape[-1] != self.k_max:
            raise InvalidArgumentError(f"Expected latent (B, {self.k_max}), got {tuple(y.shape)}")
        reals = unpair_complex(y)
        return self.decoder(reals, snr_db, self.config.snr_cap_db)

    def feedback(
        self,
        latent: LatentVector,
        channel: ChannelConfig,
        snr_db: Optional[SnrLike] = None,
        generator: Optional[torch.Generator] = None,
        digital: bool = False
    ) -> torch.Tensor:
        """
        Uplink for the active prefix; a digital (quantized) link is noiseless.

        Returns:
            Received latent with entries from k_active on set to zero
        """
        if digital:
            return latent.values.clone()
        y = transmit(latent.values, channel, generator, snr_db)
        return self._mask(y, latent.k_active)

    def forward(
        self,
        H: torch.Tensor,
        snr_db: SnrLike,
        channel: ChannelConfig,
        k_active: Optional[int] = None,
        generator: Optional[torch.Generator] = None,
        quant: Optional[QuantConfig] = None
    ) -> torch.Tensor:
        """encode -> feedback -> decode at one rate; returns the reconstruction"""
        latent = self.encode(H, snr_db, k_active, quant)
        y = self.feedback(latent, channel, snr_db, generator, digital=quant is not None)
        return self.decode(y, snr_db)

    def forward_all_rates(
        self,
        H: torch.Tensor,
        snr_db: SnrLike,
        channel: ChannelConfig,
        generator: Optional[torch.Generator] = None,
        quant: Optional[QuantConfig] = None
    ) -> Dict[int, torch.Tensor]:
        """
        One reconstruction per served rate from a single encoder pass.

        Returns:
            Dict mapping each rate k to its reconstruction (B, 2, R, C)
        """
        self._check_csi(H)
        reals = self.encoder(H, snr_db, self.config.snr_cap_db)
        z = pair_complex(reals)
        out = {}
        for k in self.rates:
            s = segment_power_normalize(z, k, self.rates)
            if quant is not None:
                s = self._mask(quantize_latent(s, quant), k)
            y = self.feedback(LatentVector(s, k), channel, snr_db, generator, digital=quant is not None)
            out[k] = self.decode(y, snr_db)
        return out


# =============================================================================
# Losses
# =============================================================================

def mse_loss(H: torch.Tensor, H_hat: torch.Tensor) -> torch.Tensor:
    """
    Squared Frobenius error over both planes, averaged over the batch.

    Args:
        H: Target CSI (B, 2, R, C) or a single (2, R, C) sample
        H_hat: Reconstruction of the same shape

    Returns:
        Scalar tensor
    """
    if H.shape != H_hat.shape:
        raise InvalidArgumentError(f"Shape mismatch: {tuple(H.shape)} vs {tuple(H_hat.shape)}")
    diff = (H - H_hat) ** 2
    if diff.dim() <= 3:
        return diff.sum()
    return diff.flatten(start_dim=1).sum(dim=1).mean()


def mrl_loss(H: torch.Tensor, reconstructions: Dict[int, torch.Tensor], mrl: MrlConfig) -> torch.Tensor:
    """
    Sum over rates of weight_i * mse(H, H_hat^(k_i))

    Args:
        H: Target CSI batch
        reconstructions: Output of forward_all_rates, keyed by rate
        mrl: Rate set and weights

    Returns:
        Scalar tensor
    """
    if sorted(reconstructions) != sorted(mrl.rates):
        raise InvalidArgumentError(
            f"Reconstructions for rates {sorted(reconstructions)} do not match rate set {mrl.rates}"
        )
    total = None
    for rate, weight in zip(mrl.rates, mrl.weights):
        term = weight * mse_loss(H, reconstructions[rate])
        total = term if total is None else total + term
    return total


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def log_parameter_counts(model: CsiAutoencoder) -> Dict[str, int]:
    counts = {
        'encoder': count_parameters(model.encoder),
        'decoder': count_parameters(model.decoder),
    }
    counts['total'] = counts['encoder'] + counts['decoder']
    logger.info("Autoencoder parameters: encoder=%d decoder=%d total=%d",
                counts['encoder'], counts['decoder'], counts['total'])
    return counts
