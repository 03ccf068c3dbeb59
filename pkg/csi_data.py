"""
CSI Data Layer
Angular-delay / spatial-frequency transforms, synthetic channel generation,
and the binary dataset container with its CSV metadata sidecar.

Samples are plane-stacked real arrays (2 x R x C, plane 0 = real, plane 1 = imag).
Datasets are immutable CsiDataset objects holding an (n, 2, R, C) float32 array.

Usage:
    from csi_data import SynthConfig, generate_synthetic, save_dataset, load_cropped_ad

    ds = generate_synthetic(SynthConfig.from_preset('SIMPLE'), n_samples=1000, seed=0)
    save_dataset(ds, 'data/simple.csi')
    ds2 = load_cropped_ad('data/simple.csi')
"""

import logging
import math
import struct
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
import scipy.fft
from joblib import Parallel, delayed

from core_config import CSI_CFG
from errors import (
    InvalidArgumentError,
    MalformedShapeError,
    MissingFileError,
    NonFiniteDataError,
)

logger = logging.getLogger(__name__)

CONTAINER_MAGIC = b"RDJSCC-CSI\x00\x00"
CONTAINER_VERSION = 1
_HEADER = struct.Struct('<12sI4I')
SIDECAR_SUFFIX = '.meta.csv'

# Raised-cosine roll-off of the synthetic delay pulse
PULSE_ROLLOFF = 0.25


class Domain(str, Enum):
    SF = "SF"
    AD = "AD"


_DOMAIN_FLAGS = {Domain.SF: 0, Domain.AD: 1}
_FLAG_DOMAINS = {v: k for k, v in _DOMAIN_FLAGS.items()}


class ComplexityPreset(str, Enum):
    SIMPLE = "SIMPLE"
    COMPLEX = "COMPLEX"


_PRESETS = {
    ComplexityPreset.SIMPLE: dict(n_clusters=1, paths_per_cluster=2, angular_spread=0.02, delay_spread=0.3),
    ComplexityPreset.COMPLEX: dict(n_clusters=10, paths_per_cluster=8, angular_spread=0.6, delay_spread=6.0),
}


# =============================================================================
# Types
# =============================================================================

@dataclass(frozen=True)
class CsiSample:
    """One channel realization"""
    values: np.ndarray          # 2 x R x C
    domain: Domain = Domain.AD

    def __post_init__(self):
        if self.values.ndim != 3 or self.values.shape[0] != 2:
            raise InvalidArgumentError(f"CsiSample values must be 2 x R x C, got {self.values.shape}")

    @property
    def rows(self) -> int:
        return self.values.shape[1]

    @property
    def cols(self) -> int:
        return self.values.shape[2]

    def to_complex(self) -> np.ndarray:
        return self.values[0].astype(np.float64) + 1j * self.values[1].astype(np.float64)


@dataclass
class SynthConfig:
    """Cluster/path channel model; the preset fixes the complexity knobs"""
    n_clusters: int = 10
    paths_per_cluster: int = 8
    angular_spread: float = 0.6
    delay_spread: float = 6.0
    n_delay: int = CSI_CFG.N_DELAY
    n_tx: int = CSI_CFG.N_TX
    n_subcarriers: int = CSI_CFG.N_SUBCARRIERS
    preset: ComplexityPreset = ComplexityPreset.COMPLEX

    @classmethod
    def from_preset(cls, preset, **overrides) -> 'SynthConfig':
        preset = ComplexityPreset(preset)
        values = dict(_PRESETS[preset])
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(preset=preset, **values)

    def validate(self):
        if self.n_clusters < 1 or self.paths_per_cluster < 1:
            raise InvalidArgumentError("n_clusters and paths_per_cluster must be >= 1")
        if not 0.0 < self.angular_spread < math.pi:
            raise InvalidArgumentError(f"angular_spread must be in (0, pi), got {self.angular_spread}")
        if self.delay_spread < 0.0:
            raise InvalidArgumentError("delay_spread must be >= 0")
        if self.n_delay < 1 or self.n_tx < 1:
            raise InvalidArgumentError("n_delay and n_tx must be >= 1")
        if self.n_delay > self.n_subcarriers:
            raise InvalidArgumentError(
                f"n_delay ({self.n_delay}) must not exceed n_subcarriers ({self.n_subcarriers})"
            )

    def to_dict(self) -> Dict[str, Any]:
        d = asdict(self)
        d['preset'] = self.preset.value
        return d


@dataclass(frozen=True)
class CsiDataset:
    """Immutable collection of same-shape samples"""
    values: np.ndarray                      # n x 2 x R x C float32
    domain: Domain = Domain.AD
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.values.ndim != 4 or self.values.shape[1] != 2:
            raise InvalidArgumentError(f"Dataset values must be n x 2 x R x C, got {self.values.shape}")
        self.values.setflags(write=False)

    def __len__(self) -> int:
        return self.values.shape[0]

    def __getitem__(self, index: int) -> CsiSample:
        return CsiSample(self.values[index], self.domain)

    @property
    def sample_shape(self) -> Tuple[int, int, int]:
        return tuple(self.values.shape[1:])

    def to_complex(self) -> np.ndarray:
        """n x R x C complex128"""
        return planes_to_complex(self.values)

    @classmethod
    def from_complex(cls, H: np.ndarray, domain: Domain = Domain.AD, metadata=None) -> 'CsiDataset':
        return cls(complex_to_planes(H), Domain(domain), dict(metadata or {}))

    def subset(self, indices) -> 'CsiDataset':
        return CsiDataset(np.ascontiguousarray(self.values[indices]), self.domain, dict(self.metadata))

    def split(self, test_fraction: float) -> Tuple['CsiDataset', 'CsiDataset']:
        """Deterministic split: leading samples train, trailing samples test"""
        if not 0.0 <= test_fraction < 1.0:
            raise InvalidArgumentError("test_fraction must be in [0, 1)")
        n_test = int(round(len(self) * test_fraction))
        n_train = len(self) - n_test
        return self.subset(slice(0, n_train)), self.subset(slice(n_train, len(self)))


# =============================================================================
# Packing and transforms
# =============================================================================

def complex_to_planes(H: np.ndarray) -> np.ndarray:
    """(..., R, C) complex -> (..., 2, R, C) float32, real plane first"""
    H = np.asarray(H)
    return np.stack([H.real, H.imag], axis=-3).astype(np.float32)


def planes_to_complex(values: np.ndarray) -> np.ndarray:
    """(..., 2, R, C) real -> (..., R, C) complex128"""
    values = np.asarray(values, dtype=np.float64)
    return values[..., 0, :, :] + 1j * values[..., 1, :, :]


def sf_to_ad(H_sf: np.ndarray, n_delay: int) -> np.ndarray:
    """
    Spatial-frequency -> angular-delay: unitary 2-D inverse DFT over
    (subcarriers, antennas), then keep the first n_delay delay rows.
    Accepts a single N_c x N_t matrix or a batch (..., N_c, N_t).
    """
    H_sf = np.asarray(H_sf)
    if H_sf.ndim < 2:
        raise InvalidArgumentError(f"Expected a matrix, got shape {H_sf.shape}")
    n_c = H_sf.shape[-2]
    if not 1 <= n_delay <= n_c:
        raise InvalidArgumentError(f"n_delay ({n_delay}) must be within [1, N_c={n_c}]")
    H_full = scipy.fft.ifft2(H_sf, axes=(-2, -1), norm='ortho')
    return H_full[..., :n_delay, :]


def ad_to_sf(H_ad: np.ndarray, n_c: int) -> np.ndarray:
    """Zero-pad the delay axis to n_c rows, then unitary forward 2-D DFT"""
    H_ad = np.asarray(H_ad)
    if H_ad.ndim < 2:
        raise InvalidArgumentError(f"Expected a matrix, got shape {H_ad.shape}")
    n_delay = H_ad.shape[-2]
    if n_delay > n_c:
        raise InvalidArgumentError(f"n_delay ({n_delay}) must not exceed N_c ({n_c})")
    pad = [(0, 0)] * H_ad.ndim
    pad[-2] = (0, n_c - n_delay)
    H_padded = np.pad(H_ad.astype(np.complex128), pad)
    return scipy.fft.fft2(H_padded, axes=(-2, -1), norm='ortho')


def channel_power(values: np.ndarray) -> float:
    """Mean per-entry complex power of plane-stacked values (P_H)"""
    values = np.asarray(values, dtype=np.float64)
    return float(np.mean(values[..., 0, :, :] ** 2 + values[..., 1, :, :] ** 2))


def top_energy_fraction(values: np.ndarray, fraction: float = 0.05) -> np.ndarray:
    """Per-sample share of energy held by the strongest `fraction` of complex entries"""
    H = planes_to_complex(values)
    if H.ndim == 2:
        H = H[None]
    power = np.abs(H.reshape(H.shape[0], -1)) ** 2
    n_top = max(1, int(math.ceil(fraction * power.shape[1])))
    top = -np.sort(-power, axis=1)[:, :n_top].sum(axis=1)
    total = power.sum(axis=1)
    return np.divide(top, total, out=np.zeros_like(top), where=total > 0)


# =============================================================================
# Synthetic generator
# =============================================================================

def raised_cosine(x: np.ndarray, rolloff: float = PULSE_ROLLOFF) -> np.ndarray:
    """Raised-cosine pulse sampled at (possibly fractional) offsets x"""
    x = np.asarray(x, dtype=np.float64)
    denom = 1.0 - (2.0 * rolloff * x) ** 2
    singular = np.isclose(denom, 0.0)
    safe = np.where(singular, 1.0, denom)
    pulse = np.sinc(x) * np.cos(np.pi * rolloff * x) / safe
    limit = (np.pi / 4.0) * np.sinc(1.0 / (2.0 * rolloff))
    return np.where(singular, limit, pulse)


def steering_vector(theta: float, n_tx: int) -> np.ndarray:
    """Half-wavelength ULA response"""
    return np.exp(-1j * np.pi * np.arange(n_tx) * np.sin(theta))


def _synthesize_one(config: SynthConfig, seed: int, index: int) -> np.ndarray:
    """One AD-domain sample; depends only on (config, seed, index)"""
    rng = np.random.default_rng([seed, index])
    taps = np.arange(config.n_subcarriers)

    delay_low = min(2.0, config.n_delay / 4.0)
    delay_high = max(delay_low, config.n_delay / 2.0)
    delay_cap = max(delay_low, config.n_delay - 4.0)

    H_delay = np.zeros((config.n_subcarriers, config.n_tx), dtype=np.complex128)
    for _ in range(config.n_clusters):
        cluster_delay = rng.uniform(delay_low, delay_high)
        cluster_angle = rng.uniform(-0.9 * np.pi / 2, 0.9 * np.pi / 2)
        # Later clusters arrive weaker
        cluster_power = np.exp(-(cluster_delay - delay_low) / max(config.n_delay / 4.0, 1.0))
        for _ in range(config.paths_per_cluster):
            excess = rng.exponential(config.delay_spread) if config.delay_spread > 0 else 0.0
            tau = min(cluster_delay + excess, delay_cap)
            theta = np.clip(cluster_angle + rng.normal(0.0, config.angular_spread), -np.pi / 2, np.pi / 2)
            gain = np.sqrt(cluster_power / (2.0 * config.paths_per_cluster)) * (
                rng.standard_normal() + 1j * rng.standard_normal()
            )
            H_delay += gain * np.outer(raised_cosine(taps - tau), steering_vector(theta, config.n_tx))

    # Delay profile -> SF along subcarriers; SF -> AD through the common transform
    H_sf = scipy.fft.fft(H_delay, axis=0, norm='ortho')
    H_ad = sf_to_ad(H_sf, config.n_delay)

    energy = np.sum(np.abs(H_ad) ** 2)
    if energy > 0:
        H_ad = H_ad / np.sqrt(energy)
    return H_ad


def _synthesize_chunk(config: SynthConfig, seed: int, indices: List[int]) -> np.ndarray:
    return np.stack([_synthesize_one(config, seed, i) for i in indices])


def generate_synthetic(
    config: SynthConfig,
    n_samples: int,
    seed: int,
    domain: Domain = Domain.AD,
    n_jobs: int = 1
) -> CsiDataset:
    """
    Generate n_samples channels with unit Frobenius energy in the AD crop.

    domain=SF returns ad_to_sf of the crop, so the SF matrix has delay
    support inside the first n_delay taps. Sample i is identical for every
    n_jobs and every n_samples > i.
    """
    config.validate()
    if n_samples < 1:
        raise InvalidArgumentError(f"n_samples must be >= 1, got {n_samples}")

    n_chunks = max(1, min(n_samples, 4 * max(1, n_jobs if n_jobs > 0 else 1)))
    chunks = [c.tolist() for c in np.array_split(np.arange(n_samples), n_chunks) if len(c)]
    parts = Parallel(n_jobs=n_jobs)(
        delayed(_synthesize_chunk)(config, seed, chunk) for chunk in chunks
    )
    H_ad = np.concatenate(parts, axis=0)

    domain = Domain(domain)
    H = H_ad if domain is Domain.AD else ad_to_sf(H_ad, config.n_subcarriers)

    metadata = {'source': 'synthetic', 'seed': seed, **config.to_dict()}
    logger.info(
        "Generated %d %s samples (preset=%s, clusters=%d, paths/cluster=%d)",
        n_samples, domain.value, config.preset.value, config.n_clusters, config.paths_per_cluster
    )
    return CsiDataset.from_complex(H, domain, metadata)


# =============================================================================
# Container IO
# =============================================================================

def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + SIDECAR_SUFFIX)


def save_dataset(dataset: CsiDataset, path, metadata: Optional[Dict[str, Any]] = None) -> Path:
    """Write the binary container and its key,value CSV sidecar"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n, _, rows, cols = dataset.values.shape

    header = _HEADER.pack(CONTAINER_MAGIC, CONTAINER_VERSION, n, rows, cols, _DOMAIN_FLAGS[dataset.domain])
    payload = np.ascontiguousarray(dataset.values, dtype='<f4').tobytes()
    with open(path, 'wb') as f:
        f.write(header)
        f.write(payload)

    sidecar = {**dataset.metadata, **(metadata or {})}
    pd.DataFrame(
        {'key': list(sidecar.keys()), 'value': [str(v) for v in sidecar.values()]}
    ).to_csv(sidecar_path(path), index=False)

    logger.info("Saved %d samples (%s, %dx%d) to %s", n, dataset.domain.value, rows, cols, path)
    return path


def _parse_value(text: str) -> Any:
    for cast in (int, float):
        try:
            return cast(text)
        except (TypeError, ValueError):
            continue
    return text


def read_sidecar(path) -> Dict[str, Any]:
    meta_path = sidecar_path(path)
    if not meta_path.exists():
        return {}
    frame = pd.read_csv(meta_path, dtype=str, keep_default_na=False)
    return {row.key: _parse_value(row.value) for row in frame.itertuples(index=False)}


def load_dataset(path) -> CsiDataset:
    """Read a container in whichever domain it was saved"""
    path = Path(path)
    if not path.exists():
        raise MissingFileError(f"Dataset file not found: {path}")

    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise MalformedShapeError(f"{path}: file shorter than the {_HEADER.size}-byte header")
    magic, version, n, rows, cols, flag = _HEADER.unpack_from(raw, 0)
    if magic != CONTAINER_MAGIC:
        raise MalformedShapeError(f"{path}: not a CSI container (bad magic)")
    if version > CONTAINER_VERSION:
        raise MalformedShapeError(f"{path}: container version {version} is newer than supported")
    if flag not in _FLAG_DOMAINS:
        raise MalformedShapeError(f"{path}: unknown domain flag {flag}")
    if n < 1 or rows < 1 or cols < 1:
        raise MalformedShapeError(f"{path}: empty shape ({n}, {rows}, {cols})")

    expected = n * 2 * rows * cols * 4
    payload = raw[_HEADER.size:]
    if len(payload) != expected:
        raise MalformedShapeError(
            f"{path}: payload is {len(payload)} bytes, header implies {expected}"
        )

    values = np.frombuffer(payload, dtype='<f4').reshape(n, 2, rows, cols).astype(np.float32)
    if not np.all(np.isfinite(values)):
        raise NonFiniteDataError(f"{path}: {int(np.sum(~np.isfinite(values)))} non-finite entries")

    return CsiDataset(values, _FLAG_DOMAINS[flag], read_sidecar(path))


def load_cropped_ad(path, n_delay: int = CSI_CFG.N_DELAY) -> CsiDataset:
    """Load an AD-domain dataset; an SF container is transformed and cropped to n_delay"""
    dataset = load_dataset(path)
    if dataset.domain is Domain.AD:
        return dataset
    logger.info("Converting SF container %s to AD (n_delay=%d)", path, n_delay)
    H_ad = sf_to_ad(dataset.to_complex(), n_delay)
    return CsiDataset.from_complex(H_ad, Domain.AD, dataset.metadata)

