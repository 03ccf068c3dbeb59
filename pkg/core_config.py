"""
Core Configuration Module
Centralized defaults for every config namespace (run, data, channel, che, ae, quant, diff, eval, bench)
"""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

# =============================================================================
# CENTRALIZED VERSION - Import this everywhere for consistency
# =============================================================================
PLATFORM_VERSION = "V1.00"
PLATFORM_NAME = "RD-JSCC CSI Feedback"
PLATFORM_BUILD_DATE = "2026-10-17"


def get_version_info() -> dict:
    """Get version info dict for run records and checkpoints"""
    return {
        "version": PLATFORM_VERSION,
        "name": PLATFORM_NAME,
        "build_date": PLATFORM_BUILD_DATE
    }


@dataclass
class CsiConfig:
    """Array geometry and numerical constants shared by all modules"""

    # Angular-delay crop
    N_DELAY: int = 32
    N_TX: int = 32
    N_SUBCARRIERS: int = 64

    # Perfect-CSI / noiseless sentinels
    PERFECT_CSI: float = math.inf
    NOISELESS_SNR: float = math.inf

    # NMSE floor reported for an exact reconstruction
    NMSE_FLOOR_DB: float = -120.0

    # MRC branches = BS antennas
    MRC_BRANCHES: int = 32


# =============================================================================
# RUN CONFIG SECTIONS
# Field names are the dotted config keys (section.field)
# =============================================================================

@dataclass
class RunSection:
    """Run identity and reproducibility"""
    seed: int = 0
    out_dir: str = "runs"
    tag: str = "default"
    device: str = "cpu"
    progress: bool = True
    n_jobs: int = 1


@dataclass
class DataSection:
    """Dataset source and synthetic generator knobs"""
    source: str = "synthetic"          # synthetic | file
    path: Optional[str] = None         # container path (file source, or generate-data output)
    preset: str = "COMPLEX"            # SIMPLE | COMPLEX
    n_samples: int = 5000
    n_subcarriers: int = 64            # N_c for SF-domain generation / reporting
    n_delay: int = 32
    n_tx: int = 32
    # Overrides of the preset (None = keep preset value)
    n_clusters: Optional[int] = None
    paths_per_cluster: Optional[int] = None
    angular_spread: Optional[float] = None
    delay_spread: Optional[float] = None
    test_fraction: float = 0.2
    report_domain: str = "AD"          # AD | SF


@dataclass
class ChannelSection:
    """Uplink feedback channel"""
    mode: str = "AWGN"                 # AWGN | RAYLEIGH_MRC
    snr_db: float = 10.0
    mrc_branches: int = 32
    train_snr_range_db: Tuple[float, float] = (-5.0, 10.0)


@dataclass
class CheSection:
    """Imperfect channel estimation at the UE"""
    cnr_db: float = math.inf           # inf = perfect CSI


@dataclass
class OptimizerSection:
    """First-order optimizer with cosine-annealed learning rate"""
    lr: float = 3e-4
    lr_min: float = 1e-5
    batch_size: int = 100
    iterations: int = 2000
    grad_clip: float = 1.0
    log_every: int = 1


@dataclass
class MrlSection:
    """Nested (Matryoshka) rate set"""
    enabled: bool = False
    rates: List[int] = field(default_factory=lambda: [8, 16, 32])
    weights: List[float] = field(default_factory=lambda: [1.0, 1.0, 1.0])


@dataclass
class AeSection:
    """Stage-1 autoencoder"""
    depth: str = "FOUR_LAYER"          # FOUR_LAYER | TWO_LAYER
    latent_k_max: int = 32
    k_active: int = 16
    n_res_blocks: int = 5
    snr_cap_db: float = 40.0
    mrl: MrlSection = field(default_factory=MrlSection)
    optimizer: OptimizerSection = field(default_factory=OptimizerSection)


@dataclass
class QuantSection:
    """Fixed-bit latent quantization"""
    enabled: bool = False
    mu: float = 50.0
    bits: int = 4
    ema_decay: float = 0.99
    mode: str = "ste"                  # ste | posthoc


@dataclass
class DiffSection:
    """Stage-2 residual diffusion"""
    N: int = 20
    schedule: str = "cosine"           # cosine | linear
    horizon: Optional[int] = None      # nominal chain length T (None = N)
    mode: str = "RESIDUAL_DIFFUSION"   # RESIDUAL_DIFFUSION | GENERATIVE_DIFFUSION | SUPERVISED_UNET
    n_steps_infer: int = 2
    base_channels: int = 64
    mults: List[int] = field(default_factory=lambda: [1, 2, 3, 4])
    time_dim: int = 128
    w_max: float = 5.0
    deterministic_init: bool = False
    ae_checkpoint: Optional[str] = None   # stage-1 bundle (None = <run_dir>/ae.ckpt)
    optimizer: OptimizerSection = field(
        default_factory=lambda: OptimizerSection(iterations=5000)
    )


@dataclass
class EvalSection:
    """Evaluation sweep grid"""
    snr_db: List[float] = field(default_factory=lambda: [-5.0, 0.0, 5.0, 10.0])
    k: List[int] = field(default_factory=lambda: [16])
    bits: List[int] = field(default_factory=lambda: [0])          # 0 = unquantized
    cnr_db: List[float] = field(default_factory=lambda: [math.inf])
    n_steps: List[int] = field(default_factory=lambda: [0, 2, 20])  # 0 = stage-1 only
    dl_snr_db: float = 10.0
    symbols_per_block: int = 1
    n_blocks: Optional[int] = None     # None = one block per test sample
    nmse_squared: bool = True
    plots: bool = True
    models: Dict[str, str] = field(default_factory=dict)          # model_id -> checkpoint


@dataclass
class BenchSection:
    """Throughput benchmark"""
    batch_size: int = 1000
    n_repeats: int = 5
    warmup: int = 2
    steps: List[int] = field(default_factory=lambda: [2, 20])


# Global configuration instances
CSI_CFG = CsiConfig()
