"""
Throughput Benchmark
Stage-wise samples/s for the encoder, decoder and the Stage-2 sampler at a
few step counts. Absolute figures are hardware-bound; ratios are what gets
compared across runs.
"""

import logging
import statistics
import time
from typing import Callable, Optional, Sequence

import numpy as np
import torch

from errors import InvalidArgumentError
from pipeline_api import RdJsccPipeline
from residual_diffusion import TrainMode
from result_schemas import ThroughputReport

logger = logging.getLogger(__name__)


def _sync(device: str):
    if str(device).startswith('cuda') and torch.cuda.is_available():
        torch.cuda.synchronize()


def bench_throughput(fn: Callable[[], object], batch_size: int, n_repeats: int = 5,
                     warmup: int = 2, device: str = 'cpu') -> float:
    """Median over repeats of batch_size / wall time of one fn() call"""
    if batch_size <= 0 or n_repeats <= 0:
        raise InvalidArgumentError("batch_size and n_repeats must be positive")
    for _ in range(max(warmup, 0)):
        fn()
    _sync(device)

    rates = []
    for _ in range(n_repeats):
        start = time.perf_counter()
        fn()
        _sync(device)
        elapsed = time.perf_counter() - start
        rates.append(batch_size / max(elapsed, 1e-12))
    return float(statistics.median(rates))


def run_benchmark(
    pipeline: RdJsccPipeline,
    values_phys: np.ndarray,
    snr_db: float = 10.0,
    batch_size: int = 1000,
    n_repeats: int = 5,
    warmup: int = 2,
    steps: Sequence[int] = (2, 20),
    seed: int = 0,
    k: Optional[int] = None
) -> ThroughputReport:
    """
    Times each stage on one fixed batch tiled from values_phys.

    Diffusion stages start from the Stage-1 output of that batch so only the
    sampler is timed. They are omitted when the bundle has no denoiser.
    """
    values_phys = np.asarray(values_phys)
    if len(values_phys) == 0:
        raise InvalidArgumentError("Benchmark needs at least one sample")
    reps = -(-batch_size // len(values_phys))
    batch = np.concatenate([values_phys] * reps, axis=0)[:batch_size]

    generator = torch.Generator(device=pipeline.device)
    generator.manual_seed(seed)
    H = pipeline.to_network(batch)
    k = pipeline.autoencoder.config.k_active if k is None else k
    report = ThroughputReport(device=str(pipeline.device))

    with torch.no_grad():
        latent = pipeline.encode(H, snr_db, k)
        y = pipeline.feedback(latent, snr_db, generator=generator)

        rate = bench_throughput(lambda: pipeline.encode(H, snr_db, k), batch_size,
                                n_repeats, warmup, pipeline.device)
        report.add('encoder', rate, batch_size, n_repeats)

        rate = bench_throughput(lambda: pipeline.autoencoder.decode(y, snr_db), batch_size,
                                n_repeats, warmup, pipeline.device)
        report.add('decoder', rate, batch_size, n_repeats)

        if pipeline.denoiser is None:
            logger.warning("Bundle has no denoiser; diffusion stages not measured")
        else:
            h_hat = pipeline.autoencoder.decode(y, snr_db)
            for n_steps in steps:
                if n_steps > pipeline.max_steps and pipeline.train_mode is not TrainMode.SUPERVISED_UNET:
                    logger.warning("Skipping diffusion-%d: bundle was trained with N=%d",
                                   n_steps, pipeline.max_steps)
                    continue
                rate = bench_throughput(lambda: pipeline.refine(h_hat, n_steps, generator),
                                        batch_size, n_repeats, warmup, pipeline.device)
                report.add(f'diffusion-{n_steps}', rate, batch_size, n_repeats)

    for stage in report.stages:
        logger.info("%-14s %12.1f samples/s  (x%.3f of encoder)",
                    stage.stage, stage.samples_per_s, stage.ratio_to_encoder)
    ratio = report.step_ratio()
    if ratio is not None:
        logger.info("20-step / 2-step throughput ratio: %.3f", ratio)
    return report
