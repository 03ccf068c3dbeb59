#!/usr/bin/env python3
"""
RD-JSCC command-line entry points

    python rdjscc_cli.py generate-data   --config toy.yaml
    python rdjscc_cli.py train-ae        --config toy.yaml [--resume]
    python rdjscc_cli.py train-diffusion --config toy.yaml [--resume]
    python rdjscc_cli.py eval            --config toy.yaml --set eval.k=[8,16,32]
    python rdjscc_cli.py bench           --config toy.yaml

Every command writes resolved_config.yaml, run.log and a runs.jsonl ledger
record under run.out_dir/run.tag. Exit codes: 0 success, 2 bad config or
arguments, 3 missing/corrupt data or checkpoints, 4 training divergence,
1 anything else.
"""

import argparse
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

from autoencoder import AutoencoderConfig
from benchmark import run_benchmark
from csi_data import (
    CsiDataset,
    Domain,
    SynthConfig,
    channel_power,
    generate_synthetic,
    load_cropped_ad,
    save_dataset,
)
from data_normalization import CsiNormalizer
from errors import CheckpointError, DivergenceError, MissingFileError, RdJsccError, exit_code_for
from evaluation import sweep, write_plot_data
from feedback_channel import ChannelConfig, CnrConfig
from persistence import ModelBundle, load_bundle, save_bundle
from pipeline_api import RdJsccPipeline
from residual_diffusion import TrainMode, make_schedule, train_denoiser
from run_config import RunConfig
from run_logger import RunLogger, setup_logging
from training import train_autoencoder
from unet_denoiser import DenoiserConfig

logger = logging.getLogger('rdjscc_cli')

AE_CHECKPOINT = 'ae.ckpt'
FULL_CHECKPOINT = 'rdjscc.ckpt'
AE_LOSS_LOG = 'loss_log_ae.csv'
DIFF_LOSS_LOG = 'loss_log_diffusion.csv'
METRICS_FILE = 'metrics.csv'
THROUGHPUT_FILE = 'throughput.csv'
DIVERGENCE_FILE = 'divergence.json'


# =============================================================================
# Data helpers
# =============================================================================

def synth_config(cfg: RunConfig) -> SynthConfig:
    d = cfg.data
    return SynthConfig.from_preset(
        d.preset,
        n_clusters=d.n_clusters,
        paths_per_cluster=d.paths_per_cluster,
        angular_spread=d.angular_spread,
        delay_spread=d.delay_spread,
        n_delay=d.n_delay,
        n_tx=d.n_tx,
        n_subcarriers=d.n_subcarriers,
    )


def default_data_path(cfg: RunConfig) -> Path:
    if cfg.data.path:
        return Path(cfg.data.path)
    return cfg.run_dir / f"csi_{cfg.data.preset.lower()}_{cfg.data.report_domain.lower()}.bin"


def load_data(cfg: RunConfig) -> CsiDataset:
    """AD-domain dataset in physical units, from file or regenerated from the seed"""
    if cfg.data.source == 'file':
        if not cfg.data.path:
            raise MissingFileError("data.source=file requires data.path")
        dataset = load_cropped_ad(cfg.data.path, cfg.data.n_delay)
    else:
        dataset = generate_synthetic(synth_config(cfg), cfg.data.n_samples, cfg.run.seed,
                                     Domain.AD, cfg.run.n_jobs)
    logger.info("Dataset: %d samples of shape %s", len(dataset), dataset.sample_shape)
    return dataset


def load_split(cfg: RunConfig):
    train, test = load_data(cfg).split(cfg.data.test_fraction)
    if len(test) == 0:
        logger.warning("Empty test split (data.test_fraction=%s); evaluating on the training split",
                       cfg.data.test_fraction)
        test = train
    return train, test


def _write_log(frame, path: Path) -> Path:
    frame.to_csv(path, index=False)
    return path


# =============================================================================
# Commands
# =============================================================================

def cmd_generate_data(cfg: RunConfig, args=None) -> Dict[str, Any]:
    config = synth_config(cfg)
    domain = Domain(cfg.data.report_domain)
    dataset = generate_synthetic(config, cfg.data.n_samples, cfg.run.seed, domain, cfg.run.n_jobs)
    path = save_dataset(dataset, default_data_path(cfg))
    print(f"Wrote {len(dataset)} {domain.value} samples ({config.preset.value}) to {path}")
    return {'path': str(path), 'n_samples': len(dataset), 'domain': domain.value,
            'preset': config.preset.value}


def cmd_train_ae(cfg: RunConfig, args=None) -> Dict[str, Any]:
    resume = bool(getattr(args, 'resume', False))
    run_dir = cfg.run_dir
    ckpt = run_dir / AE_CHECKPOINT
    device = cfg.run.device

    train, _ = load_split(cfg)
    _, rows, cols = train.sample_shape
    ae_config = AutoencoderConfig.from_section(cfg.ae, rows, cols)

    model = state = None
    if resume:
        if not ckpt.exists():
            raise CheckpointError(f"--resume given but no checkpoint at {ckpt}")
        previous = load_bundle(ckpt, device)
        model, state = previous.autoencoder, previous.ae_state
        stats, p_h = previous.stats, previous.p_h
        logger.info("Resuming train-ae at iteration %d", state.iteration if state else 0)
    else:
        stats = CsiNormalizer.fit(train.values)
        p_h = channel_power(train.values)

    quant_on = cfg.quant.enabled and cfg.quant.mode == 'ste'
    result = train_autoencoder(
        train.values, ae_config, ChannelConfig.from_section(cfg.channel), cfg.ae.optimizer,
        cfg.run.seed, stats, p_h, CnrConfig(cfg.che.cnr_db),
        cfg.quant if quant_on else None, model, state, device, cfg.run.progress,
    )

    bundle = ModelBundle(
        autoencoder=result.model,
        ae_config=ae_config,
        stats=stats,
        p_h=p_h,
        tracker=result.tracker,
        quant_mode=cfg.quant.mode if cfg.quant.enabled else None,
        n_subcarriers=cfg.data.n_subcarriers,
        ae_state=result.state,
        extra={'quant_mu': cfg.quant.mu, 'quant_bits': cfg.quant.bits,
               'train_snr_max_db': float(cfg.channel.train_snr_range_db[1])},
    )
    save_bundle(bundle, ckpt, cfg.digest())
    log_path = _write_log(result.log, run_dir / AE_LOSS_LOG)
    final = float(result.log['loss'].iloc[-1]) if len(result.log) else None
    print(f"Stage-1 checkpoint: {ckpt}  (final loss {final})")
    return {'checkpoint': str(ckpt), 'loss_log': str(log_path), 'iterations': result.state.iteration,
            'final_loss': final}


def cmd_train_diffusion(cfg: RunConfig, args=None) -> Dict[str, Any]:
    resume = bool(getattr(args, 'resume', False))
    run_dir = cfg.run_dir
    device = cfg.run.device
    ckpt = run_dir / FULL_CHECKPOINT

    ae_path = Path(cfg.diff.ae_checkpoint) if cfg.diff.ae_checkpoint else run_dir / AE_CHECKPOINT
    if not ae_path.exists():
        raise CheckpointError(f"train-diffusion needs a stage-1 checkpoint; none at {ae_path}")

    model = state = None
    if resume:
        if not ckpt.exists():
            raise CheckpointError(f"--resume given but no checkpoint at {ckpt}")
        base = load_bundle(ckpt, device)
        model, state = base.denoiser, base.den_state
        logger.info("Resuming train-diffusion at iteration %d", state.iteration if state else 0)
    else:
        base = load_bundle(ae_path, device)

    train, _ = load_split(cfg)
    _, rows, cols = train.sample_shape
    den_config = DenoiserConfig.from_section(cfg.diff, rows, cols)
    schedule = make_schedule(cfg.diff.N, cfg.diff.schedule, cfg.diff.horizon)
    mode = TrainMode(cfg.diff.mode)

    quant = None
    if base.quant_mode == 'ste' and base.tracker is not None:
        quant = base.tracker.config(float(base.extra.get('quant_mu', cfg.quant.mu)),
                                    int(base.extra.get('quant_bits', cfg.quant.bits)))

    result = train_denoiser(
        train.values, base.autoencoder, den_config, schedule, ChannelConfig.from_section(cfg.channel),
        cfg.diff.optimizer, cfg.run.seed, base.stats, base.p_h, mode, base.ae_config.k_active,
        cfg.diff.w_max, CnrConfig(cfg.che.cnr_db), quant, model, state, device, cfg.run.progress,
    )

    bundle = replace(
        base,
        denoiser=result.model,
        den_config=den_config,
        train_mode=mode,
        diffusion={'N': cfg.diff.N, 'schedule': cfg.diff.schedule, 'horizon': cfg.diff.horizon,
                   'w_max': cfg.diff.w_max},
        den_state=result.state,
    )
    save_bundle(bundle, ckpt, cfg.digest())
    log_path = _write_log(result.log, run_dir / DIFF_LOSS_LOG)
    final = float(result.log['loss'].iloc[-1]) if len(result.log) else None
    print(f"Two-stage checkpoint ({mode.value}): {ckpt}  (final loss {final})")
    return {'checkpoint': str(ckpt), 'loss_log': str(log_path), 'mode': mode.value,
            'iterations': result.state.iteration, 'final_loss': final}


def model_paths(cfg: RunConfig) -> Dict[str, Path]:
    """eval.models, or the run's own two-stage checkpoint (stage-1 only as fallback)"""
    if cfg.eval.models:
        paths = {model_id: Path(p) for model_id, p in cfg.eval.models.items()}
    else:
        full = cfg.run_dir / FULL_CHECKPOINT
        paths = {cfg.run.tag: full if full.exists() else cfg.run_dir / AE_CHECKPOINT}
    for model_id, path in paths.items():
        if not path.exists():
            raise CheckpointError(f"Checkpoint for model '{model_id}' not found: {path}")
    return paths


def load_pipelines(cfg: RunConfig) -> Dict[str, RdJsccPipeline]:
    channel = ChannelConfig.from_section(cfg.channel)
    return {
        model_id: RdJsccPipeline(load_bundle(path, cfg.run.device), channel, cfg.run.device,
                                 cfg.diff.deterministic_init)
        for model_id, path in model_paths(cfg).items()
    }


def cmd_eval(cfg: RunConfig, args=None) -> Dict[str, Any]:
    pipelines = load_pipelines(cfg)
    _, test = load_split(cfg)
    e = cfg.eval
    table = sweep(
        pipelines, test.values, e.snr_db, e.k, e.bits, e.cnr_db, e.n_steps,
        seed=cfg.run.seed, domain=cfg.data.report_domain, n_subcarriers=cfg.data.n_subcarriers,
        nmse_squared=e.nmse_squared, dl_snr_db=e.dl_snr_db, symbols_per_block=e.symbols_per_block,
        n_blocks=e.n_blocks,
    )
    metrics_path = table.to_csv(cfg.run_dir / METRICS_FILE)
    plot_files = write_plot_data(table, cfg.run_dir / 'plots', e.plots)

    frame = table.to_frame()
    if len(frame):
        print(frame[['model_id', 'mode', 'snr_db', 'k', 'bits', 'cnr_db', 'n_steps', 'nmse_db', 'bler']]
              .to_string(index=False))
    warnings: List[str] = []
    if len(table) == 0:
        warnings.append("No grid cell was servable by any model")
    return {'metrics': str(metrics_path), 'rows': len(table),
            'plot_data': {k: str(v) for k, v in plot_files.items()}, '_warnings': warnings}


def cmd_bench(cfg: RunConfig, args=None) -> Dict[str, Any]:
    pipelines = load_pipelines(cfg)
    model_id, pipeline = next(iter(pipelines.items()))
    _, test = load_split(cfg)
    b = cfg.bench
    report = run_benchmark(pipeline, test.values, cfg.channel.snr_db, b.batch_size, b.n_repeats,
                           b.warmup, b.steps, cfg.run.seed)
    path = report.to_csv(cfg.run_dir / THROUGHPUT_FILE)
    print(report.to_frame().to_string(index=False))
    ratio = report.step_ratio()
    if ratio is not None:
        print(f"20-step / 2-step throughput ratio: {ratio:.3f}")
    return {'model_id': model_id, 'report': str(path), **report.to_dict()}


COMMANDS: Dict[str, Callable[[RunConfig, Any], Dict[str, Any]]] = {
    'generate-data': cmd_generate_data,
    'train-ae': cmd_train_ae,
    'train-diffusion': cmd_train_diffusion,
    'eval': cmd_eval,
    'bench': cmd_bench,
}


# =============================================================================
# Entry point
# =============================================================================

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='rdjscc', description="Two-stage CSI feedback (RD-JSCC)")
    sub = parser.add_subparsers(dest='command', required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument('--config', type=str, default=None, help="YAML run config")
        p.add_argument('--set', dest='overrides', action='append', default=[], metavar='KEY=VALUE',
                       help="Override a dotted config key (repeatable)")
        if name in ('train-ae', 'train-diffusion'):
            p.add_argument('--resume', action='store_true',
                           help="Continue from the checkpoint in the run directory")
    return parser


def run_command(name: str, cfg: RunConfig, args=None) -> int:
    """Run one command with ledger bookkeeping; returns the exit code"""
    run_dir = cfg.run_dir
    cfg.write_resolved(run_dir)
    ledger = RunLogger(run_dir)
    inputs = {'tag': cfg.run.tag, 'seed': cfg.run.seed, 'config_digest': cfg.digest(),
              'resume': bool(getattr(args, 'resume', False))}

    start = time.time()
    try:
        outputs = COMMANDS[name](cfg, args)
    except DivergenceError as e:
        logger.error("%s diverged: %s", name, e)
        with open(run_dir / DIVERGENCE_FILE, 'w') as f:
            json.dump(e.diagnostics(), f, indent=2)
        ledger.log(name, inputs, {'diagnostics': str(run_dir / DIVERGENCE_FILE)},
                   error=f"{type(e).__name__}: {e}", duration_seconds=time.time() - start)
        return exit_code_for(e)
    except (RdJsccError, OSError) as e:
        logger.error("%s failed: %s", name, e)
        ledger.log(name, inputs, error=f"{type(e).__name__}: {e}", duration_seconds=time.time() - start)
        return exit_code_for(e)
    except Exception as e:
        logger.exception("%s crashed", name)
        ledger.log(name, inputs, error=f"{type(e).__name__}: {e}", duration_seconds=time.time() - start)
        raise

    warnings = outputs.pop('_warnings', None)
    ledger.log(name, inputs, outputs, warnings=warnings, duration_seconds=time.time() - start)
    logger.info("%s done in %.1fs", name, time.time() - start)
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig.load(args.config, args.overrides)
    except RdJsccError as e:
        setup_logging()
        logger.error("Invalid configuration: %s", e)
        return exit_code_for(e)

    setup_logging(cfg.run_dir)
    return run_command(args.command, cfg, args)


if __name__ == '__main__':
    sys.exit(main())
