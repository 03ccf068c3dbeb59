"""
Training Loops
Shared optimizer/schedule/divergence plumbing plus the Stage-1 autoencoder
trainer. The Stage-2 denoiser trainer lives in residual_diffusion and reuses
the helpers defined here.

Usage:
    from training import train_autoencoder

    result = train_autoencoder(train_values, ae_config, channel, ae_section.optimizer,
                               seed=0, stats=stats, p_h=p_h)
    result.log.to_csv(run_dir / 'loss_log_ae.csv', index=False)
"""

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Deque, Dict, List, Optional

import numpy as np
import pandas as pd
import torch
from tqdm import tqdm

from autoencoder import AutoencoderConfig, CsiAutoencoder, log_parameter_counts, mrl_loss, mse_loss
from core_config import CSI_CFG, OptimizerSection, QuantSection
from data_normalization import CsiNormalizer, NormStats
from errors import DivergenceError, InvalidArgumentError
from feedback_channel import ChannelConfig, CnrConfig, inject_estimation_error, sample_training_snr
from quantizer import LatentScaleTracker, QuantConfig, clip_rate

logger = logging.getLogger(__name__)

RECENT_LOSSES = 10


# =============================================================================
# Shared plumbing
# =============================================================================

def cosine_lr(iteration: int, total: int, lr: float, lr_min: float) -> float:
    """Cosine annealing from lr at iteration 0 to lr_min at `total`"""
    if total <= 0:
        return lr
    progress = min(iteration / total, 1.0)
    return lr_min + 0.5 * (lr - lr_min) * (1.0 + math.cos(math.pi * progress))


def set_lr(optimizer: torch.optim.Optimizer, lr: float):
    for group in optimizer.param_groups:
        group['lr'] = lr


@dataclass
class TrainingState:
    """Everything a resumed run needs besides the model weights"""
    iteration: int = 0
    optimizer_state: Optional[Dict[str, Any]] = None
    rng_state: Optional[Dict[str, Any]] = None
    generator_state: Optional[torch.Tensor] = None
    tracker: Optional[Dict[str, Any]] = None
    log_rows: List[Dict[str, Any]] = field(default_factory=list)


@dataclass
class TrainResult:
    model: torch.nn.Module
    log: pd.DataFrame
    state: TrainingState
    tracker: Optional[LatentScaleTracker] = None


class LossGuard:
    """Keeps recent finite losses and aborts on the first non-finite one"""

    def __init__(self, history: int = RECENT_LOSSES):
        self.recent: Deque[float] = deque(maxlen=history)

    def check(self, loss: torch.Tensor, iteration: int) -> float:
        value = float(loss.detach())
        if not math.isfinite(value):
            raise DivergenceError(
                f"Loss became non-finite ({value}) at iteration {iteration}",
                iteration=iteration,
                recent_losses=list(self.recent),
            )
        self.recent.append(value)
        return value


def make_optimizer(model: torch.nn.Module, optim: OptimizerSection,
                   state: Optional[TrainingState] = None) -> torch.optim.Adam:
    optimizer = torch.optim.Adam(model.parameters(), lr=optim.lr)
    if state is not None and state.optimizer_state is not None:
        optimizer.load_state_dict(state.optimizer_state)
    return optimizer


def restore_rngs(seed: int, state: Optional[TrainingState], device=None):
    """numpy stream for batches/SNRs, torch stream for channel noise"""
    rng = np.random.default_rng(seed)
    generator = torch.Generator(device=device or 'cpu')
    generator.manual_seed(seed + 1)
    if state is not None:
        if state.rng_state is not None:
            rng.bit_generator.state = state.rng_state
        if state.generator_state is not None:
            generator.set_state(state.generator_state)
    return rng, generator


def sample_batch(rng: np.random.Generator, n: int, batch_size: int) -> np.ndarray:
    if n < 1:
        raise InvalidArgumentError("Training set is empty")
    return rng.choice(n, size=batch_size, replace=n < batch_size)


def snapshot_state(iteration: int, optimizer, rng, generator, rows, tracker=None) -> TrainingState:
    return TrainingState(
        iteration=iteration,
        optimizer_state=optimizer.state_dict(),
        rng_state=rng.bit_generator.state,
        generator_state=generator.get_state(),
        tracker=tracker.to_dict() if tracker is not None else None,
        log_rows=list(rows),
    )


# =============================================================================
# Stage 1
# =============================================================================

def build_autoencoder(config: AutoencoderConfig, seed: int, device: str = 'cpu') -> CsiAutoencoder:
    """Deterministic initialization from the seed"""
    torch.manual_seed(seed)
    model = CsiAutoencoder(config).to(device)
    log_parameter_counts(model)
    return model


def train_autoencoder(
    train_values: np.ndarray,
    config: AutoencoderConfig,
    channel: ChannelConfig,
    optim: OptimizerSection,
    seed: int,
    stats: NormStats,
    p_h: float,
    cnr: CnrConfig = CnrConfig(),
    quant: Optional[QuantSection] = None,
    model: Optional[CsiAutoencoder] = None,
    resume: Optional[TrainingState] = None,
    device: str = 'cpu',
    progress: bool = False
) -> TrainResult:
    """
    Stage-1 loop: sample a batch and per-sample training SNRs, optionally
    corrupt the UE's channel knowledge, encode (every nested rate when MRL
    is on), send over the uplink, decode, and minimize the reconstruction
    error against the clean channel.

    Args:
        train_values: physical-unit training split (n, 2, R, C)
        stats: normalization fitted on the same split
        p_h: dataset-level mean entry power for estimation-error injection
        quant: when enabled, latents are quantized with a straight-through
            gradient and the uplink is a noiseless digital link
        resume: state from a checkpoint; the run continues at its iteration

    Returns:
        TrainResult with the model, the per-iteration loss log and the
        state needed to resume.
    """
    if len(train_values) < 1:
        raise InvalidArgumentError("train_autoencoder needs at least one training sample")

    if model is None:
        model = build_autoencoder(config, seed, device)
    model.train()

    optimizer = make_optimizer(model, optim, resume)
    rng, generator = restore_rngs(seed, resume, device)
    guard = LossGuard()

    quant_on = quant is not None and quant.enabled
    tracker = None
    if quant_on:
        tracker = (LatentScaleTracker.from_dict(resume.tracker) if resume and resume.tracker
                   else LatentScaleTracker(decay=quant.ema_decay))

    rows = list(resume.log_rows) if resume else []
    start = resume.iteration if resume else 0
    dtype = next(model.parameters()).dtype

    iterator = tqdm(range(start, optim.iterations), desc='train-ae', disable=not progress)
    for iteration in iterator:
        lr = cosine_lr(iteration, optim.iterations, optim.lr, optim.lr_min)
        set_lr(optimizer, lr)

        idx = sample_batch(rng, len(train_values), optim.batch_size)
        clean_phys = train_values[idx]
        observed_phys = inject_estimation_error(clean_phys, cnr, rng, p_h)
        target = torch.as_tensor(CsiNormalizer.apply(clean_phys.astype(np.float64), stats),
                                 dtype=dtype, device=device)
        inputs = torch.as_tensor(CsiNormalizer.apply(observed_phys.astype(np.float64), stats),
                                 dtype=dtype, device=device)

        if quant_on:
            snr = torch.full((len(idx),), CSI_CFG.NOISELESS_SNR, dtype=torch.float64)
        else:
            snr = torch.as_tensor(sample_training_snr(channel.train_snr_range_db, rng, size=len(idx)))

        row: Dict[str, Any] = {'iteration': iteration, 'lr': lr}
        qcfg = None
        if quant_on:
            with torch.no_grad():
                s = model.encode(inputs, snr, model.rates[-1]).values
            tracker.update(s, model.rates[-1])
            qcfg = tracker.config(quant.mu, quant.bits)
            row['clip_rate'] = clip_rate(s, qcfg.s_max, model.rates[-1])

        if config.mrl.enabled:
            recons = model.forward_all_rates(inputs, snr, channel, generator, qcfg)
            loss = mrl_loss(target, recons, config.mrl)
            for k, recon in recons.items():
                row[f'mse_k{k}'] = float(mse_loss(target, recon).detach())
        else:
            recon = model(inputs, snr, channel, config.k_active, generator, qcfg)
            loss = mse_loss(target, recon)

        row['loss'] = guard.check(loss, iteration)

        optimizer.zero_grad()
        loss.backward()
        torch.nn.utils.clip_grad_norm_(model.parameters(), optim.grad_clip)
        optimizer.step()

        if iteration % max(optim.log_every, 1) == 0 or iteration == optim.iterations - 1:
            rows.append(row)
            iterator.set_postfix(loss=f"{row['loss']:.4g}")

    if rows:
        logger.info("train-ae finished at iteration %d, loss %.6g -> %.6g",
                    optim.iterations, rows[0]['loss'], rows[-1]['loss'])
    if tracker is not None:
        tracker.freeze()

    model.eval()
    state = snapshot_state(max(start, optim.iterations), optimizer, rng, generator, rows, tracker)
    return TrainResult(model=model, log=pd.DataFrame(rows), state=state, tracker=tracker)
