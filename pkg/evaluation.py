"""
Evaluation Harness
NMSE and uncoded-BLER metrics, cartesian sweeps over (SNR, rate, bits, CNR,
denoising steps), and the per-figure plot-data files.

All metrics are computed on denormalized (physical-unit) channels.
"""

import itertools
import logging
import math
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import torch
from scipy.special import erfc

from core_config import CSI_CFG
from csi_data import ad_to_sf, planes_to_complex
from errors import DegenerateInputError, InvalidArgumentError
from feedback_channel import CnrConfig, inject_estimation_error
from pipeline_api import RdJsccPipeline
from residual_diffusion import TrainMode
from result_schemas import MetricsRow, MetricsTable

logger = logging.getLogger(__name__)

PLOT_FILES = ('nmse_vs_snr', 'nmse_vs_k', 'nmse_vs_bits', 'bler_vs_snr')
EVAL_CHUNK = 500


# =============================================================================
# NMSE
# =============================================================================

def _ratio(z: np.ndarray, z_hat: np.ndarray, squared: bool) -> float:
    z = np.asarray(z)
    z_hat = np.asarray(z_hat)
    if z.shape != z_hat.shape:
        raise InvalidArgumentError(f"Shape mismatch: {z.shape} vs {z_hat.shape}")
    ref = float(np.sum(np.abs(z) ** 2))
    if ref == 0.0:
        raise DegenerateInputError("NMSE reference is identically zero")
    err = float(np.sum(np.abs(z - z_hat) ** 2))
    ratio = err / ref
    return ratio if squared else math.sqrt(ratio)


def _to_db(ratio: float, floor_db: float) -> float:
    if ratio <= 0.0:
        return floor_db
    return max(10.0 * math.log10(ratio), floor_db)


def nmse_db(z: np.ndarray, z_hat: np.ndarray, squared: bool = True,
            floor_db: float = CSI_CFG.NMSE_FLOOR_DB) -> float:
    """10 log10(||z - z_hat||^2 / ||z||^2), floored; unsquared ratio when squared=False"""
    return _to_db(_ratio(z, z_hat, squared), floor_db)


def batch_nmse_db(Z: np.ndarray, Z_hat: np.ndarray, squared: bool = True,
                  floor_db: float = CSI_CFG.NMSE_FLOOR_DB) -> float:
    """Mean of per-sample ratios over the leading axis, then dB"""
    if np.shape(Z) != np.shape(Z_hat):
        raise InvalidArgumentError(f"Shape mismatch: {np.shape(Z)} vs {np.shape(Z_hat)}")
    ratios = [_ratio(z, z_hat, squared) for z, z_hat in zip(Z, Z_hat)]
    return _to_db(float(np.mean(ratios)), floor_db)


# =============================================================================
# Uncoded BLER
# =============================================================================

def q_function(x):
    return 0.5 * erfc(np.asarray(x) / math.sqrt(2.0))


def qpsk_symbol_error_probability(snr_linear):
    """Gray-mapped QPSK with unit symbol energy at per-symbol SNR snr_linear"""
    p = q_function(np.sqrt(snr_linear))
    return 1.0 - (1.0 - p) ** 2


def _qpsk_symbols(rng: np.random.Generator, shape) -> Tuple[np.ndarray, np.ndarray]:
    bits = rng.integers(0, 2, size=tuple(shape) + (2,))
    symbols = ((1 - 2 * bits[..., 0]) + 1j * (1 - 2 * bits[..., 1])) / math.sqrt(2.0)
    return bits, symbols


def bler_uncoded(
    H_true_sf: np.ndarray,
    H_rec_sf: np.ndarray,
    dl_snr_db: float,
    symbols_per_block: int = 1,
    n_blocks: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    return_ser: bool = False
):
    """
    MRT from the reconstruction, QPSK through the true channel, hard decisions.

    Inputs are complex (n, N_c, N_t). Block b uses sample b % n and spans every
    subcarrier times symbols_per_block symbols. Subcarriers whose reconstructed
    row is zero are skipped. Returns BLER, or (BLER, SER) with return_ser.
    """
    H_true_sf = np.asarray(H_true_sf)
    H_rec_sf = np.asarray(H_rec_sf)
    if H_true_sf.ndim == 2:
        H_true_sf, H_rec_sf = H_true_sf[None], H_rec_sf[None]
    if H_true_sf.shape != H_rec_sf.shape:
        raise InvalidArgumentError(f"Shape mismatch: {H_true_sf.shape} vs {H_rec_sf.shape}")
    if symbols_per_block < 1:
        raise InvalidArgumentError("symbols_per_block must be >= 1")
    rng = rng if rng is not None else np.random.default_rng(0)
    n = H_true_sf.shape[0]
    n_blocks = n if n_blocks is None else n_blocks

    if dl_snr_db == -math.inf:
        return (1.0, 0.75) if return_ser else 1.0

    idx = np.arange(n_blocks) % n
    h_true = H_true_sf[idx]                         # (blocks, N_c, N_t)
    h_rec = H_rec_sf[idx]
    norms = np.linalg.norm(h_rec, axis=-1)          # (blocks, N_c)
    valid = norms > 0
    if not np.all(valid):
        logger.warning("Skipping %d zero-norm reconstructed subcarrier rows", int(np.sum(~valid)))

    w = np.conj(h_rec) / np.where(valid, norms, 1.0)[..., None]
    gain = np.sum(h_true * w, axis=-1)              # effective scalar channel per subcarrier

    bits, x = _qpsk_symbols(rng, (n_blocks, symbols_per_block, h_true.shape[1]))
    y = gain[:, None, :] * x
    if dl_snr_db != math.inf:
        sigma2 = 10.0 ** (-dl_snr_db / 10.0)
        noise = (rng.standard_normal(y.shape) + 1j * rng.standard_normal(y.shape)) * math.sqrt(sigma2 / 2.0)
        y = y + noise

    # Receiver knows the effective gain and removes its phase
    g = gain[:, None, :]
    equalized = y * np.conj(g) / np.where(np.abs(g) > 0, np.abs(g), 1.0)
    detected_b0 = (equalized.real < 0).astype(int)
    detected_b1 = (equalized.imag < 0).astype(int)
    symbol_error = (detected_b0 != bits[..., 0]) | (detected_b1 != bits[..., 1])
    symbol_error &= valid[:, None, :]

    block_error = symbol_error.reshape(n_blocks, -1).any(axis=1)
    bler = float(block_error.mean())
    if return_ser:
        n_symbols = int(np.sum(np.broadcast_to(valid[:, None, :], symbol_error.shape)))
        ser = float(symbol_error.sum() / max(n_symbols, 1))
        return bler, ser
    return bler


# =============================================================================
# Sweep
# =============================================================================

def cell_streams(seed: int, cell: int, device: str = 'cpu') -> Tuple[np.random.Generator, torch.Generator]:
    """Independent numpy and torch streams for one grid cell"""
    seq = np.random.SeedSequence([seed, cell])
    rng = np.random.default_rng(seq)
    generator = torch.Generator(device=device)
    generator.manual_seed(int(seq.generate_state(1, dtype=np.uint64)[0] % (2 ** 63)))
    return rng, generator


def _effective_steps(pipeline: RdJsccPipeline, n_steps: int) -> Optional[int]:
    """Map a requested step count to what the bundle can run; None skips the cell"""
    if n_steps == 0:
        return 0
    if pipeline.denoiser is None:
        return None
    if pipeline.train_mode is TrainMode.SUPERVISED_UNET:
        return 1
    if n_steps > pipeline.max_steps:
        return None
    return n_steps


def sweep(
    pipelines: Dict[str, RdJsccPipeline],
    test_values: np.ndarray,
    snr_db: Sequence[float],
    k: Sequence[int],
    bits: Sequence[int] = (0,),
    cnr_db: Sequence[float] = (math.inf,),
    n_steps: Sequence[int] = (0,),
    seed: int = 0,
    domain: str = "AD",
    n_subcarriers: int = CSI_CFG.N_SUBCARRIERS,
    nmse_squared: bool = True,
    dl_snr_db: Optional[float] = None,
    symbols_per_block: int = 1,
    n_blocks: Optional[int] = None,
    chunk: int = EVAL_CHUNK
) -> MetricsTable:
    """
    Cartesian evaluation of every model over the grid.

    test_values are clean physical-unit AD samples (n, 2, R, C). Each
    (snr, k, bits, cnr, n_steps) cell has its own RNG streams, shared by all
    models so they see the same noise. Cells a model cannot serve (rate not
    in its set, steps without a denoiser) are skipped. BLER is computed when
    dl_snr_db is given.
    """
    if domain not in ("AD", "SF"):
        raise InvalidArgumentError(f"domain must be AD or SF, got {domain}")
    test_values = np.asarray(test_values)
    table = MetricsTable()
    grid = list(itertools.product(snr_db, k, bits, cnr_db, n_steps))
    H_true_ad = planes_to_complex(test_values)
    H_true_sf = ad_to_sf(H_true_ad, n_subcarriers) if (domain == "SF" or dl_snr_db is not None) else None

    for model_id, pipeline in pipelines.items():
        seen = set()
        for cell, (snr, rate, b, cnr, steps) in enumerate(grid):
            if rate not in pipeline.rates:
                logger.debug("%s: rate %d not served, skipping", model_id, rate)
                continue
            used = _effective_steps(pipeline, steps)
            if used is None:
                logger.debug("%s: n_steps=%d not available, skipping", model_id, steps)
                continue
            key = (snr, rate, b, cnr, used)
            if key in seen:
                continue
            seen.add(key)

            rng, generator = cell_streams(seed, cell)
            observed = inject_estimation_error(test_values, CnrConfig(cnr), rng, pipeline.bundle.p_h)

            recon_parts = []
            for start in range(0, len(test_values), chunk):
                out = pipeline.reconstruct(observed[start:start + chunk], snr, rate, used, b,
                                           generator=generator)
                recon_parts.append(out['h_rec'])
            H_rec_ad = planes_to_complex(np.concatenate(recon_parts, axis=0))

            if domain == "AD":
                nmse = batch_nmse_db(H_true_ad, H_rec_ad, nmse_squared)
            else:
                nmse = batch_nmse_db(H_true_sf, ad_to_sf(H_rec_ad, n_subcarriers), nmse_squared)

            bler = None
            if dl_snr_db is not None:
                bler = bler_uncoded(H_true_sf, ad_to_sf(H_rec_ad, n_subcarriers), dl_snr_db,
                                    symbols_per_block, n_blocks, rng)

            mode = pipeline.train_mode.value if used > 0 else 'STAGE1'
            table.append(MetricsRow(
                model_id=model_id, mode=mode, snr_db=float(snr), k=int(rate), bits=int(b),
                cnr_db=float(cnr), n_steps=int(used), nmse_db=nmse, bler=bler, domain=domain,
                n_samples=len(test_values),
                quant_mode=(pipeline.bundle.quant_mode or 'posthoc') if b > 0 else '',
            ))
            logger.info("%s %s snr=%g k=%d bits=%d cnr=%g steps=%d -> NMSE %.2f dB%s",
                        model_id, mode, snr, rate, b, cnr, used, nmse,
                        f", BLER {bler:.3g}" if bler is not None else "")

    return table


# =============================================================================
# Plot data
# =============================================================================

_SERIES_KEYS = ['model_id', 'mode', 'snr_db', 'k', 'bits', 'cnr_db', 'n_steps', 'domain']


def _series_label(row: pd.Series, keys: List[str]) -> str:
    return "|".join(f"{key}={row[key]}" for key in keys)


def plot_frame(table: MetricsTable, x: str, y: str) -> pd.DataFrame:
    """Wide frame indexed by x with one column per series (all other grid keys)"""
    frame = table.to_frame()
    if y == 'bler':
        frame = frame[frame['bler'].notna()]
    if frame.empty:
        return pd.DataFrame()
    keys = [key for key in _SERIES_KEYS if key != x]
    frame = frame.assign(series=frame.apply(lambda r: _series_label(r, keys), axis=1))
    wide = frame.pivot_table(index=x, columns='series', values=y, aggfunc='mean')
    return wide.sort_index()


def write_plot_data(table: MetricsTable, out_dir, plots: bool = False) -> Dict[str, Path]:
    """nmse_vs_snr / nmse_vs_k / nmse_vs_bits / bler_vs_snr CSVs and optional PNGs"""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    specs = {
        'nmse_vs_snr': ('snr_db', 'nmse_db'),
        'nmse_vs_k': ('k', 'nmse_db'),
        'nmse_vs_bits': ('bits', 'nmse_db'),
        'bler_vs_snr': ('snr_db', 'bler'),
    }
    written = {}
    for name, (x, y) in specs.items():
        wide = plot_frame(table, x, y)
        path = out_dir / f"{name}.csv"
        wide.to_csv(path)
        written[name] = path
        if plots and not wide.empty:
            _render_png(wide, out_dir / f"{name}.png", x, y)
    return written


def _render_png(wide: pd.DataFrame, path: Path, x: str, y: str):
    import matplotlib
    matplotlib.use('Agg')
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 4.5))
    for column in wide.columns:
        ax.plot(wide.index, wide[column], marker='o', label=column)
    ax.set_xlabel(x)
    ax.set_ylabel(y)
    if y == 'bler':
        ax.set_yscale('log')
    ax.grid(True, alpha=0.3)
    if len(wide.columns) <= 8:
        ax.legend(fontsize=6)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
