"""
Test fixtures: tiny model configs and synthetic channel generators
"""

import math
from pathlib import Path
from typing import List, Optional

import numpy as np
import torch

from autoencoder import AutoencoderConfig, DecoderConfig, EncoderConfig, MrlConfig
from csi_data import (
    ComplexityPreset,
    CsiDataset,
    Domain,
    SynthConfig,
    ad_to_sf,
    channel_power,
    generate_synthetic,
    steering_vector,
)
from data_normalization import CsiNormalizer
from persistence import ModelBundle
from residual_diffusion import TrainMode
from training import build_autoencoder
from unet_denoiser import DenoiserConfig, UNetDenoiser

TINY_ROWS = 4
TINY_COLS = 4


def tiny_ae_config(
    k_max: int = 4,
    k_active: int = 4,
    rows: int = TINY_ROWS,
    cols: int = TINY_COLS,
    mrl_rates: Optional[List[int]] = None
) -> AutoencoderConfig:
    """Autoencoder with well under 5k parameters"""
    mrl = MrlConfig(enabled=mrl_rates is not None,
                    rates=list(mrl_rates or [k_active]),
                    weights=[1.0] * len(mrl_rates or [k_active]))
    return AutoencoderConfig(
        encoder=EncoderConfig(layers=[(2, 3)], latent_k_max=k_max, depth='TINY', rows=rows, cols=cols),
        decoder=DecoderConfig(input_kernel=3, n_res_blocks=1, block=[(2, 3), (2, 3)],
                              latent_k_max=k_max, rows=rows, cols=cols),
        mrl=mrl,
        k_active=k_active,
    )


def tiny_denoiser_config(rows: int = TINY_ROWS, cols: int = TINY_COLS) -> DenoiserConfig:
    return DenoiserConfig(base_channels=2, mults=[1], time_dim=4, rows=rows, cols=cols)


def small_denoiser_config(rows: int = TINY_ROWS, cols: int = TINY_COLS) -> DenoiserConfig:
    """Two levels with GroupNorm(8) paths exercised"""
    return DenoiserConfig(base_channels=8, mults=[1, 2], time_dim=8, rows=rows, cols=cols)


def small_dataset(n: int = 40, preset: str = 'SIMPLE', seed: int = 0,
                  n_delay: int = TINY_ROWS, n_tx: int = TINY_COLS, n_subcarriers: int = 8) -> CsiDataset:
    config = SynthConfig.from_preset(ComplexityPreset(preset), n_delay=n_delay, n_tx=n_tx,
                                     n_subcarriers=n_subcarriers)
    return generate_synthetic(config, n, seed, Domain.AD)


def delay_limited_sf(n: int = 3, n_c: int = 16, n_t: int = 8, n_delay: int = 4, seed: int = 0) -> np.ndarray:
    """SF matrices whose delay support lies inside the first n_delay taps"""
    rng = np.random.default_rng(seed)
    H_ad = rng.standard_normal((n, n_delay, n_t)) + 1j * rng.standard_normal((n, n_delay, n_t))
    return ad_to_sf(H_ad, n_c)


def flat_channel_sf(n: int = 4, n_c: int = 8, n_t: int = 8, seed: int = 0) -> np.ndarray:
    """Single-path, zero-delay channels: every subcarrier sees the same unit-norm steering vector"""
    rng = np.random.default_rng(seed)
    out = np.empty((n, n_c, n_t), dtype=np.complex128)
    for i in range(n):
        theta = rng.uniform(-math.pi / 3, math.pi / 3)
        phase = np.exp(1j * rng.uniform(0, 2 * math.pi))
        out[i] = phase * steering_vector(theta, n_t)[None, :] / math.sqrt(n_t)
    return out


class OracleDenoiser:
    """Denoiser that always predicts the true clean signal"""

    def __init__(self, z0: torch.Tensor):
        self.z0 = z0
        self.calls = 0

    def __call__(self, z_t, h_hat, t):
        self.calls += 1
        return self.z0.clone()


def tiny_bundle(dataset: Optional[CsiDataset] = None, mrl_rates: Optional[List[int]] = None,
                with_denoiser: bool = True, mode: TrainMode = TrainMode.RESIDUAL_DIFFUSION,
                N: int = 4, seed: int = 0) -> ModelBundle:
    """Untrained but complete bundle around tiny networks"""
    dataset = dataset if dataset is not None else small_dataset()
    _, rows, cols = dataset.sample_shape
    k_active = mrl_rates[-1] if mrl_rates else 4
    ae_config = tiny_ae_config(k_active=k_active, rows=rows, cols=cols, mrl_rates=mrl_rates)
    autoencoder = build_autoencoder(ae_config, seed)
    bundle = ModelBundle(
        autoencoder=autoencoder.eval(),
        ae_config=ae_config,
        stats=CsiNormalizer.fit(dataset.values),
        p_h=channel_power(dataset.values),
        n_subcarriers=int(dataset.metadata.get('n_subcarriers', 8)),
    )
    if with_denoiser:
        torch.manual_seed(seed + 1)
        bundle.den_config = tiny_denoiser_config(rows, cols)
        bundle.denoiser = UNetDenoiser(bundle.den_config).eval()
        bundle.train_mode = mode
        bundle.diffusion = {'N': N, 'schedule': 'cosine', 'horizon': None, 'w_max': 5.0}
    return bundle


def tiny_run_overrides(out_dir: Path, tag: str = 'toy', iterations: int = 3) -> List[str]:
    """--set overrides for a seconds-long CLI run"""
    return [
        f'run.out_dir={out_dir}',
        f'run.tag={tag}',
        'run.progress=false',
        'data.preset=SIMPLE',
        'data.n_samples=24',
        'data.n_delay=4',
        'data.n_tx=4',
        'data.n_subcarriers=8',
        'data.test_fraction=0.25',
        'ae.depth=TWO_LAYER',
        'ae.latent_k_max=4',
        'ae.k_active=4',
        'ae.n_res_blocks=1',
        'ae.mrl.enabled=true',
        'ae.mrl.rates=[2,4]',
        'ae.mrl.weights=[1.0,1.0]',
        f'ae.optimizer.iterations={iterations}',
        'ae.optimizer.batch_size=8',
        'diff.N=4',
        'diff.n_steps_infer=2',
        'diff.base_channels=8',
        'diff.mults=[1,2]',
        'diff.time_dim=8',
        f'diff.optimizer.iterations={iterations}',
        'diff.optimizer.batch_size=8',
        'eval.snr_db=[0.0,10.0]',
        'eval.k=[2,4]',
        'eval.n_steps=[0,2,4]',
        'eval.plots=false',
        'bench.batch_size=16',
        'bench.n_repeats=2',
        'bench.warmup=1',
        'bench.steps=[2,4]',
    ]


def finite_difference_check(model, loss_fn, n_samples: int = 100, h: float = 1e-6, seed: int = 0) -> np.ndarray:
    """Relative errors between autograd and central differences at randomly chosen parameters"""
    model.zero_grad()
    loss_fn().backward()
    params = [p for p in model.parameters() if p.requires_grad]
    rng = np.random.default_rng(seed)
    errors = []
    with torch.no_grad():
        for _ in range(n_samples):
            p = params[rng.integers(len(params))]
            idx = tuple(int(rng.integers(d)) for d in p.shape)
            original = p[idx].item()
            p[idx] = original + h
            up = loss_fn().item()
            p[idx] = original - h
            down = loss_fn().item()
            p[idx] = original
            numeric = (up - down) / (2 * h)
            analytic = p.grad[idx].item()
            errors.append(abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-5))
    return np.array(errors)
