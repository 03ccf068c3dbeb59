"""
Checkpoint Persistence
Versioned binary checkpoints for model bundles, with schema migration of the
metadata block so older checkpoints keep loading.

Layout (little-endian):
    MAGIC (8) | version u32 | config digest (32 raw bytes of SHA-256)
    | metadata length u32 | metadata JSON (utf-8)
    | block count u32 | blocks

    block = name length u16 | name (utf-8) | dtype u8 | ndim u8 | dims u32 x ndim | payload
"""

import hashlib
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import numpy as np
import torch

from autoencoder import AutoencoderConfig, CsiAutoencoder
from core_config import PLATFORM_VERSION, get_version_info
from data_normalization import NormStats
from errors import CheckpointError
from quantizer import LatentScaleTracker
from residual_diffusion import TrainMode
from training import TrainingState
from unet_denoiser import DenoiserConfig, UNetDenoiser

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"RDJSCCKP"
CHECKPOINT_VERSION = 2

_DTYPES = {
    0: np.dtype('<f4'),
    1: np.dtype('<f8'),
    2: np.dtype('<i8'),
    3: np.dtype('u1'),
    4: np.dtype('<i4'),
    5: np.dtype('<f2'),
    6: np.dtype('?'),
}
_DTYPE_CODES = {dt: code for code, dt in _DTYPES.items()}


# =============================================================================
# Raw container
# =============================================================================

def digest_bytes(digest: str) -> bytes:
    """Hex SHA-256 -> 32 raw bytes; any other string is hashed first"""
    try:
        raw = bytes.fromhex(digest)
    except ValueError:
        raw = b''
    if len(raw) != 32:
        raw = hashlib.sha256(digest.encode()).digest()
    return raw


def _to_numpy(value) -> np.ndarray:
    if isinstance(value, torch.Tensor):
        value = value.detach().cpu().numpy()
    arr = np.asarray(value)
    return arr.astype(arr.dtype.newbyteorder('<')) if arr.dtype.byteorder == '>' else arr


def write_checkpoint(path, blocks: Dict[str, Any], metadata: Dict[str, Any], config_digest: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    meta_bytes = json.dumps(metadata, sort_keys=True, default=str).encode('utf-8')
    parts = [
        CHECKPOINT_MAGIC,
        struct.pack('<I', CHECKPOINT_VERSION),
        digest_bytes(config_digest),
        struct.pack('<I', len(meta_bytes)),
        meta_bytes,
        struct.pack('<I', len(blocks)),
    ]
    for name, value in blocks.items():
        arr = np.ascontiguousarray(_to_numpy(value))
        dtype = arr.dtype.newbyteorder('<') if arr.dtype.kind in 'fiu' and arr.dtype.itemsize > 1 else arr.dtype
        if dtype not in _DTYPE_CODES:
            raise CheckpointError(f"Unsupported dtype {arr.dtype} for block {name}")
        name_bytes = name.encode('utf-8')
        parts.append(struct.pack('<H', len(name_bytes)))
        parts.append(name_bytes)
        parts.append(struct.pack('<BB', _DTYPE_CODES[dtype], arr.ndim))
        parts.append(struct.pack(f'<{arr.ndim}I', *arr.shape))
        parts.append(arr.astype(dtype, copy=False).tobytes())

    with open(path, 'wb') as f:
        f.write(b''.join(parts))
    return path


class _Reader:
    def __init__(self, raw: bytes, path: Path):
        self.raw = raw
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise CheckpointError(f"{self.path}: truncated checkpoint")
        chunk = self.raw[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size))


def read_checkpoint(path) -> Tuple[Dict[str, Any], Dict[str, np.ndarray], str, int]:
    """Returns (metadata, blocks, hex digest, file version)"""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"Checkpoint not found: {path}")

    reader = _Reader(path.read_bytes(), path)
    if reader.take(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    (version,) = reader.unpack('<I')
    if version > CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version} is newer than supported {CHECKPOINT_VERSION}")
    digest = reader.take(32).hex()
    (meta_len,) = reader.unpack('<I')
    try:
        metadata = json.loads(reader.take(meta_len).decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: corrupt metadata ({e})")

    (n_blocks,) = reader.unpack('<I')
    blocks = {}
    for _ in range(n_blocks):
        (name_len,) = reader.unpack('<H')
        name = reader.take(name_len).decode('utf-8')
        code, ndim = reader.unpack('<BB')
        if code not in _DTYPES:
            raise CheckpointError(f"{path}: unknown dtype code {code} in block {name}")
        shape = reader.unpack(f'<{ndim}I') if ndim else ()
        dtype = _DTYPES[code]
        count = int(np.prod(shape)) if ndim else 1
        payload = reader.take(count * dtype.itemsize)
        blocks[name] = np.frombuffer(payload, dtype=dtype).reshape(shape).copy()

    if reader.pos != len(reader.raw):
        raise CheckpointError(f"{path}: {len(reader.raw) - reader.pos} trailing bytes")

    return migrate_metadata(metadata, version), blocks, digest, version


def migrate_metadata(metadata: dict, from_version: int) -> dict:
    """
    Bring metadata up to CHECKPOINT_VERSION.

    v1 -> v2: the train mode and schedule horizon became explicit.
    """
    if from_version < 2:
        metadata.setdefault('train_mode', TrainMode.RESIDUAL_DIFFUSION.value)
        diffusion = metadata.get('diffusion')
        if diffusion is not None:
            diffusion.setdefault('horizon', None)
        metadata['_schema_version'] = 2
    return metadata


# =============================================================================
# Model bundle
# =============================================================================

@dataclass
class ModelBundle:
    """Trained networks plus everything needed to rebuild and run them"""
    autoencoder: CsiAutoencoder
    ae_config: AutoencoderConfig
    stats: NormStats
    p_h: float
    denoiser: Optional[UNetDenoiser] = None
    den_config: Optional[DenoiserConfig] = None
    train_mode: TrainMode = TrainMode.RESIDUAL_DIFFUSION
    diffusion: Dict[str, Any] = field(default_factory=dict)       # N, schedule, horizon, w_max
    tracker: Optional[LatentScaleTracker] = None
    quant_mode: Optional[str] = None                                # ste | posthoc | None
    n_subcarriers: int = 64
    ae_state: Optional[TrainingState] = None
    den_state: Optional[TrainingState] = None
    extra: Dict[str, Any] = field(default_factory=dict)

    @property
    def has_denoiser(self) -> bool:
        return self.denoiser is not None


def _state_blocks(prefix: str, state: Optional[TrainingState], blocks: Dict[str, Any]) -> Optional[dict]:
    """Tensors of a TrainingState go to blocks, the rest to JSON"""
    if state is None:
        return None
    meta = {
        'iteration': state.iteration,
        'rng_state': state.rng_state,
        'tracker': state.tracker,
        'log_rows': state.log_rows,
        'param_groups': None,
        'state_keys': {},
    }
    if state.generator_state is not None:
        blocks[f'{prefix}.generator'] = state.generator_state
    if state.optimizer_state is not None:
        meta['param_groups'] = state.optimizer_state['param_groups']
        for idx, entries in state.optimizer_state['state'].items():
            keys = []
            for key, value in entries.items():
                blocks[f'{prefix}.optim.{idx}.{key}'] = value
                keys.append(key)
            meta['state_keys'][str(idx)] = keys
    return meta


def _state_from_blocks(prefix: str, meta: Optional[dict], blocks: Dict[str, np.ndarray]) -> Optional[TrainingState]:
    if meta is None:
        return None
    optimizer_state = None
    if meta.get('param_groups') is not None:
        optimizer_state = {
            'param_groups': meta['param_groups'],
            'state': {
                int(idx): {key: torch.from_numpy(blocks[f'{prefix}.optim.{idx}.{key}']) for key in keys}
                for idx, keys in meta['state_keys'].items()
            },
        }
    gen = blocks.get(f'{prefix}.generator')
    return TrainingState(
        iteration=int(meta['iteration']),
        optimizer_state=optimizer_state,
        rng_state=meta.get('rng_state'),
        generator_state=torch.from_numpy(gen) if gen is not None else None,
        tracker=meta.get('tracker'),
        log_rows=list(meta.get('log_rows') or []),
    )


def save_bundle(bundle: ModelBundle, path, config_digest: str) -> Path:
    blocks: Dict[str, Any] = {}
    for name, tensor in bundle.autoencoder.state_dict().items():
        blocks[f'ae.{name}'] = tensor
    if bundle.denoiser is not None:
        for name, tensor in bundle.denoiser.state_dict().items():
            blocks[f'den.{name}'] = tensor

    metadata = {
        'platform': get_version_info(),
        '_schema_version': CHECKPOINT_VERSION,
        'ae_config': bundle.ae_config.to_dict(),
        'den_config': bundle.den_config.to_dict() if bundle.den_config else None,
        'stats': bundle.stats.to_dict(),
        'p_h': bundle.p_h,
        'train_mode': TrainMode(bundle.train_mode).value,
        'diffusion': bundle.diffusion,
        'tracker': bundle.tracker.to_dict() if bundle.tracker else None,
        'quant_mode': bundle.quant_mode,
        'n_subcarriers': bundle.n_subcarriers,
        'ae_state': _state_blocks('ae_state', bundle.ae_state, blocks),
        'den_state': _state_blocks('den_state', bundle.den_state, blocks),
        'extra': bundle.extra,
    }
    path = write_checkpoint(path, blocks, metadata, config_digest)
    logger.info("Saved bundle (%d blocks, denoiser=%s) to %s", len(blocks), bundle.has_denoiser, path)
    return path


def _load_module(module: torch.nn.Module, prefix: str, blocks: Dict[str, np.ndarray], path):
    expected = module.state_dict()
    state = {}
    for name, ref in expected.items():
        key = f'{prefix}.{name}'
        if key not in blocks:
            raise CheckpointError(f"{path}: missing parameter block {key}")
        arr = blocks[key]
        if tuple(arr.shape) != tuple(ref.shape):
            raise CheckpointError(f"{path}: block {key} has shape {arr.shape}, model expects {tuple(ref.shape)}")
        state[name] = torch.from_numpy(arr).to(ref.dtype)
    module.load_state_dict(state)


def load_bundle(path, device: str = 'cpu') -> ModelBundle:
    metadata, blocks, _, version = read_checkpoint(path)
    try:
        ae_config = AutoencoderConfig.from_dict(metadata['ae_config'])
        stats = NormStats.from_dict(metadata['stats'])
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"{path}: incompatible metadata ({e})")

    autoencoder = CsiAutoencoder(ae_config)
    _load_module(autoencoder, 'ae', blocks, path)
    autoencoder.to(device).eval()

    denoiser = den_config = None
    if metadata.get('den_config'):
        den_config = DenoiserConfig.from_dict(metadata['den_config'])
        denoiser = UNetDenoiser(den_config)
        _load_module(denoiser, 'den', blocks, path)
        denoiser.to(device).eval()

    tracker = LatentScaleTracker.from_dict(metadata['tracker']) if metadata.get('tracker') else None
    if tracker is not None:
        tracker.freeze()

    logger.info("Loaded bundle %s (checkpoint v%d, platform %s)", path, version,
                metadata.get('platform', {}).get('version', PLATFORM_VERSION))
    return ModelBundle(
        autoencoder=autoencoder,
        ae_config=ae_config,
        stats=stats,
        p_h=float(metadata.get('p_h', 1.0)),
        denoiser=denoiser,
        den_config=den_config,
        train_mode=TrainMode(metadata['train_mode']),
        diffusion=metadata.get('diffusion') or {},
        tracker=tracker,
        quant_mode=metadata.get('quant_mode'),
        n_subcarriers=int(metadata.get('n_subcarriers', 64)),
        ae_state=_state_from_blocks('ae_state', metadata.get('ae_state'), blocks),
        den_state=_state_from_blocks('den_state', metadata.get('den_state'), blocks),
        extra=metadata.get('extra') or {},
    )


def checkpoint_digest(path) -> str:
    """Config digest stored in a checkpoint header"""
    return read_checkpoint(path)[2]
