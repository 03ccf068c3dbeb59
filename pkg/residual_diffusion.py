"""
Residual Diffusion (Stage 2)
Noise schedule with residual weights, the residual forward process, the
weighted z0-prediction loss, the deterministic few-step sampler that starts
at the coarse Stage-1 estimate, and the denoiser trainer.

The forward process interpolates from the clean channel z0 toward the coarse
estimate H_hat = z0 + r:

    z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) (lam r + eps)

so that at t = N the noiseless chain sits at sqrt(abar_N) H_hat.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Any, Callable, Dict, List, Optional

import numpy as np
import pandas as pd
import torch
from tqdm import tqdm

from autoencoder import CsiAutoencoder
from core_config import OptimizerSection
from data_normalization import CsiNormalizer, NormStats
from errors import InvalidArgumentError
from feedback_channel import ChannelConfig, CnrConfig, inject_estimation_error, sample_training_snr
from quantizer import QuantConfig
from training import (
    LossGuard,
    TrainResult,
    TrainingState,
    cosine_lr,
    make_optimizer,
    restore_rngs,
    sample_batch,
    set_lr,
    snapshot_state,
)
from unet_denoiser import DenoiserConfig, UNetDenoiser, denoiser_forward

logger = logging.getLogger(__name__)

COSINE_OFFSET = 0.008
BETA_MAX = 0.999
BETA_MIN = 1e-12
LINEAR_BETA_RANGE = (1e-4, 0.02)

Denoiser = Callable[[torch.Tensor, torch.Tensor, torch.Tensor], torch.Tensor]


class TrainMode(str, Enum):
    RESIDUAL_DIFFUSION = "RESIDUAL_DIFFUSION"
    GENERATIVE_DIFFUSION = "GENERATIVE_DIFFUSION"
    SUPERVISED_UNET = "SUPERVISED_UNET"


@dataclass(frozen=True)
class DiffusionSchedule:
    """Arrays are indexed by t = 0..N with abar[0] = 1 and eta[0] = 0"""
    N: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    eta: np.ndarray
    lam: float
    kind: str = "cosine"
    horizon: int = 0

    def sqrt_ab(self, t: int) -> float:
        return math.sqrt(self.alpha_bar[t])

    def sqrt_1mab(self, t: int) -> float:
        return math.sqrt(1.0 - self.alpha_bar[t])


def make_schedule(N: int, kind: str = "cosine", horizon: Optional[int] = None) -> DiffusionSchedule:
    """
    Build the N-step schedule.

    Args:
        N: Number of diffusion steps actually used, >= 1
        kind: "cosine" or "linear" beta curve
        horizon: Nominal chain length the beta curve is defined over (default N).
            Only its first N steps are used, so a longer horizon keeps more signal at t = N.

    Returns:
        DiffusionSchedule with beta, alpha_bar (alpha_bar[0] = 1) and the residual weight
    """
    if N < 1:
        raise InvalidArgumentError(f"N must be >= 1, got {N}")
    T = N if horizon is None else int(horizon)
    if T < N:
        raise InvalidArgumentError(f"horizon ({T}) must be >= N ({N})")

    if kind == "cosine":
        steps = np.arange(N + 1, dtype=np.float64)
        f = np.cos(((steps / T) + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * np.pi / 2.0) ** 2
        ab_curve = f / f[0]
        beta = 1.0 - ab_curve[1:] / ab_curve[:-1]
    elif kind == "linear":
        beta = np.linspace(LINEAR_BETA_RANGE[0], LINEAR_BETA_RANGE[1], T, dtype=np.float64)[:N]
    else:
        raise InvalidArgumentError(f"Unknown schedule kind: {kind}")

    beta = np.clip(beta, BETA_MIN, BETA_MAX)
    alpha = 1.0 - beta
    alpha_bar = np.concatenate([[1.0], np.cumprod(alpha)])

    ab_N = alpha_bar[N]
    lam = math.sqrt(ab_N) / math.sqrt(1.0 - ab_N)
    eta = lam * np.sqrt(1.0 - alpha_bar) / np.sqrt(alpha_bar)
    eta[N] = 1.0

    return DiffusionSchedule(
        N=N,
        beta=np.concatenate([[0.0], beta]),
        alpha=np.concatenate([[1.0], alpha]),
        alpha_bar=alpha_bar,
        eta=eta,
        lam=lam,
        kind=kind,
        horizon=T,
    )


# =============================================================================
# Forward process and loss
# =============================================================================

def _coef(values: np.ndarray, t, ref: torch.Tensor):
    """Per-sample coefficient broadcastable against ref (B, ...)"""
    if isinstance(t, torch.Tensor) and t.dim() > 0:
        c = torch.as_tensor(values, dtype=ref.dtype, device=ref.device)[t.long().to(ref.device)]
        return c.reshape(-1, *([1] * (ref.dim() - 1)))
    return float(values[int(t)])


def _check_t(t, N: int):
    t_arr = t if isinstance(t, torch.Tensor) else torch.as_tensor(t)
    if bool((t_arr < 0).any()) or bool((t_arr > N).any()):
        raise InvalidArgumentError(f"t must lie in [0, {N}]")


def forward_diffuse(z0: torch.Tensor, r: torch.Tensor, t, eps: torch.Tensor,
                    schedule: DiffusionSchedule, lam: Optional[float] = None) -> torch.Tensor:
    """
    Noise a clean batch towards its residual: sqrt(abar_t) z0 + sqrt(1 - abar_t) (lam r + eps)

    Args:
        z0: Clean channels (B, 2, R, C)
        r: Residual H_hat - z0, same shape
        t: Timestep in [0, N], scalar or one per sample
        eps: Standard Gaussian noise, same shape as z0
        schedule: Diffusion schedule
        lam: Residual weight; None uses schedule.lam, 0 gives the plain process

    Returns:
        z_t with the shape of z0
    """
    _check_t(t, schedule.N)
    lam = schedule.lam if lam is None else lam
    sqrt_ab = _coef(np.sqrt(schedule.alpha_bar), t, z0)
    sqrt_1mab = _coef(np.sqrt(1.0 - schedule.alpha_bar), t, z0)
    return sqrt_ab * z0 + sqrt_1mab * (lam * r + eps)


def standard_forward(z0: torch.Tensor, t, eps: torch.Tensor, schedule: DiffusionSchedule) -> torch.Tensor:
    """Plain noising process without a residual term"""
    _check_t(t, schedule.N)
    sqrt_ab = _coef(np.sqrt(schedule.alpha_bar), t, z0)
    sqrt_1mab = _coef(np.sqrt(1.0 - schedule.alpha_bar), t, z0)
    return sqrt_ab * z0 + sqrt_1mab * eps


def loss_weight(t, schedule: DiffusionSchedule, w_max: float = 5.0, ref: Optional[torch.Tensor] = None):
    """min(abar_t / (1 - abar_t), w_max)"""
    ab = schedule.alpha_bar
    with np.errstate(divide='ignore'):
        w = np.minimum(np.where(ab < 1.0, ab / np.maximum(1.0 - ab, 1e-300), np.inf), w_max)
    if ref is None:
        return float(w[int(t)])
    return _coef(w, t, ref)


def diffusion_loss(z0: torch.Tensor, h_hat: torch.Tensor, t, eps: torch.Tensor, denoiser: Denoiser,
                   schedule: DiffusionSchedule, w_max: float = 5.0, lam: Optional[float] = None) -> torch.Tensor:
    """
    Batch mean of w_t * ||z0 - f(z_t, H_hat, t)||^2 with z_t from forward_diffuse.

    Args:
        z0: Clean channels (B, 2, R, C)
        h_hat: Stage-1 reconstructions, same shape
        t: Timesteps in [1, N], scalar or (B,)
        eps: Gaussian noise for the forward draw
        denoiser: z0-predicting network
        schedule: Diffusion schedule
        w_max: Clamp on the SNR weight
        lam: Residual weight override

    Returns:
        Scalar loss tensor
    """
    z_t = forward_diffuse(z0, h_hat - z0, t, eps, schedule, lam)
    t_batch = torch.as_tensor(t, device=z0.device)
    if t_batch.dim() == 0:
        t_batch = t_batch.expand(z0.shape[0])
    z0_hat = denoiser_forward(z_t, h_hat, t_batch, denoiser)
    err = ((z0 - z0_hat) ** 2).flatten(start_dim=1).sum(dim=1)
    w = loss_weight(t_batch, schedule, w_max, ref=err)
    return (w * err).mean()


# =============================================================================
# Reverse process
# =============================================================================

def denoise_step(z_t: torch.Tensor, z0_hat: torch.Tensor, t: int, t_prev: int,
                 schedule: DiffusionSchedule) -> torch.Tensor:
    """
    One deterministic reverse step from t to t_prev.

    Returns sqrt(abar_prev) z0_hat + m (z_t - sqrt(abar_t) z0_hat) with
    m = sqrt(1 - abar_prev) / sqrt(1 - abar_t). With an exact z0_hat the
    result has the forward marginal at t_prev.

    Raises:
        InvalidArgumentError: unless 0 <= t_prev < t <= N
    """
    if not 0 <= t_prev < t <= schedule.N:
        raise InvalidArgumentError(f"denoise_step needs 0 <= t_prev < t <= N, got t={t}, t_prev={t_prev}")
    m = schedule.sqrt_1mab(t_prev) / schedule.sqrt_1mab(t)
    return schedule.sqrt_ab(t_prev) * z0_hat + m * (z_t - schedule.sqrt_ab(t) * z0_hat)


def timestep_indices(N: int, n_steps: int) -> List[int]:
    """Uniform descending stride from N to 0, n_steps + 1 entries"""
    if not 1 <= n_steps <= N:
        raise InvalidArgumentError(f"n_steps must be within [1, {N}], got {n_steps}")
    return [N - (i * N) // n_steps for i in range(n_steps + 1)]


@torch.no_grad()
def sample(
    h_hat: torch.Tensor,
    denoiser: Denoiser,
    schedule: DiffusionSchedule,
    n_steps: int,
    mode: TrainMode = TrainMode.RESIDUAL_DIFFUSION,
    generator: Optional[torch.Generator] = None,
    deterministic_init: bool = False
) -> torch.Tensor:
    """
    Refine a Stage-1 reconstruction with the reverse process.

    Args:
        h_hat: Stage-1 reconstructions (B, 2, R, C)
        denoiser: z0-predicting network
        schedule: Diffusion schedule the denoiser was trained with
        n_steps: Reverse steps, uniform stride from N down to 0
        mode: RESIDUAL_DIFFUSION starts at sqrt(abar_N) H_hat plus
            sqrt(1 - abar_N) eps; GENERATIVE_DIFFUSION starts from pure noise;
            SUPERVISED_UNET is a single call f(H_hat, H_hat, 0)
        generator: Source of the initial noise
        deterministic_init: Drop the eps term of the residual start

    Returns:
        Refined channels with the shape of h_hat
    """
    mode = TrainMode(mode)
    if mode is TrainMode.SUPERVISED_UNET:
        return denoiser_forward(h_hat, h_hat, 0, denoiser)

    steps = timestep_indices(schedule.N, n_steps)
    N = schedule.N
    if mode is TrainMode.GENERATIVE_DIFFUSION:
        z = torch.randn(h_hat.shape, generator=generator, device=h_hat.device, dtype=h_hat.dtype)
    else:
        z = schedule.sqrt_ab(N) * h_hat
        if not deterministic_init:
            eps = torch.randn(h_hat.shape, generator=generator, device=h_hat.device, dtype=h_hat.dtype)
            z = z + schedule.sqrt_1mab(N) * eps

    for t, t_prev in zip(steps[:-1], steps[1:]):
        z0_hat = denoiser_forward(z, h_hat, t, denoiser)
        z = denoise_step(z, z0_hat, t, t_prev, schedule)
    return z


# =============================================================================
# Stage-2 trainer
# =============================================================================

def build_denoiser(config: DenoiserConfig, seed: int, device: str = 'cpu') -> UNetDenoiser:
    torch.manual_seed(seed)
    model = UNetDenoiser(config).to(device)
    logger.info("Denoiser parameters: %d", sum(p.numel() for p in model.parameters()))
    return model


def freeze(model: torch.nn.Module) -> torch.nn.Module:
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)
    return model


def train_denoiser(
    train_values: np.ndarray,
    autoencoder: CsiAutoencoder,
    config: DenoiserConfig,
    schedule: DiffusionSchedule,
    channel: ChannelConfig,
    optim: OptimizerSection,
    seed: int,
    stats: NormStats,
    p_h: float,
    mode: TrainMode = TrainMode.RESIDUAL_DIFFUSION,
    k_active: Optional[int] = None,
    w_max: float = 5.0,
    cnr: CnrConfig = CnrConfig(),
    quant: Optional[QuantConfig] = None,
    model: Optional[UNetDenoiser] = None,
    resume: Optional[TrainingState] = None,
    device: str = 'cpu',
    progress: bool = False
) -> TrainResult:
    """
    Stage-2 loop with the autoencoder frozen: run encode -> uplink -> decode
    to get H_hat, draw t uniformly in [1, N] and Gaussian eps, and minimize
    the weighted z0-prediction loss. GENERATIVE_DIFFUSION drops the residual
    term (lam = 0); SUPERVISED_UNET regresses z0 from f(H_hat, H_hat, 0).

    Args:
        train_values: Plane-stacked training CSI in physical units
        autoencoder: Trained Stage-1 model, frozen here
        config: Denoiser architecture
        schedule: Diffusion schedule
        channel: Uplink model; training SNRs are drawn from train_snr_range_db
        optim: Learning-rate schedule, batch size and iteration count
        seed: Seeds both numpy and torch streams
        stats: Normalization fitted on the training split
        p_h: Mean entry power, scales the estimation error
        mode: Stage-2 variant
        k_active: Rate to train at (default: the autoencoder's)
        w_max: Clamp on the loss weight
        cnr: Imperfect-CSI level of the encoder input
        quant: Quantize the latent on a noiseless link
        model, resume: Continue a previous run

    Returns:
        TrainResult with the eval-mode denoiser, loss log and resumable state

    Raises:
        DivergenceError: on a non-finite loss
    """
    mode = TrainMode(mode)
    if len(train_values) < 1:
        raise InvalidArgumentError("train_denoiser needs at least one training sample")

    freeze(autoencoder)
    if model is None:
        model = build_denoiser(config, seed, device)
    model.train()

    optimizer = make_optimizer(model, optim, resume)
    rng, generator = restore_rngs(seed, resume, device)
    guard = LossGuard()
    lam = 0.0 if mode is TrainMode.GENERATIVE_DIFFUSION else None
    dtype = next(model.parameters()).dtype

    rows = list(resume.log_rows) if resume else []
    start = resume.iteration if resume else 0

    iterator = tqdm(range(start, optim.iterations), desc='train-diffusion', disable=not progress)
    for iteration in iterator:
        lr = cosine_lr(iteration, optim.iterations, optim.lr, optim.lr_min)
        set_lr(optimizer, lr)

        idx = sample_batch(rng, len(train_values), optim.batch_size)
        clean_phys = train_values[idx]
        observed_phys = inject_estimation_error(clean_phys, cnr, rng, p_h)
        z0 = torch.as_tensor(CsiNormalizer.apply(clean_phys.astype(np.float64), stats),
                             dtype=dtype, device=device)
        inputs = torch.as_tensor(CsiNormalizer.apply(observed_phys.astype(np.float64), stats),
                                 dtype=dtype, device=device)

        if quant is not None:
            snr = torch.full((len(idx),), math.inf, dtype=torch.float64)
        else:
            snr = torch.as_tensor(sample_training_snr(channel.train_snr_range_db, rng, size=len(idx)))

        with torch.no_grad():
            h_hat = autoencoder(inputs, snr, channel, k_active, generator, quant)

        row: Dict[str, Any] = {'iteration': iteration, 'lr': lr}
        if mode is TrainMode.SUPERVISED_UNET:
            pred = denoiser_forward(h_hat, h_hat, 0, model)
            loss = ((z0 - pred) ** 2).flatten(start_dim=1).sum(dim=1).mean()
            row['t_mean'] = 0.0
        else:
            t = torch.as_tensor(rng.integers(1, schedule.N + 1, size=len(idx)), device=device)
            eps = torch.randn(z0.shape, generator=generator, dtype=dtype, device=device)
            loss = diffusion_loss(z0, h_hat, t, eps, model, schedule, w_max, lam)
            row['t_mean'] = float(t.float().mean())

        row['loss'] = guard.check(loss, iteration)

        optimizer.zero_grad()
        loss.backward()
        torch.nn.utils.clip_grad_norm_(model.parameters(), optim.grad_clip)
        optimizer.step()

        if iteration % max(optim.log_every, 1) == 0 or iteration == optim.iterations - 1:
            rows.append(row)
            iterator.set_postfix(loss=f"{row['loss']:.4g}")

    if rows:
        logger.info("train-diffusion (%s) finished, loss %.6g -> %.6g",
                    mode.value, rows[0]['loss'], rows[-1]['loss'])

    model.eval()
    state = snapshot_state(max(start, optim.iterations), optimizer, rng, generator, rows)
    return TrainResult(model=model, log=pd.DataFrame(rows), state=state)
