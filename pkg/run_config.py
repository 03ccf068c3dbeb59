"""
Run Configuration Manager
Loads a YAML run config over the core_config defaults, applies CLI overrides, and
writes the fully-resolved config next to every run's outputs

Precedence: built-in defaults < config file < --set key=value overrides

Usage:
    from run_config import RunConfig

    cfg = RunConfig.load('configs/toy.yaml', overrides=['diff.N=20', 'eval.k=[8,16,32]'])
    cfg.channel.snr_db          # 10.0
    cfg.write_resolved(cfg.run_dir)
"""

import hashlib
import json
import math
import typing
from dataclasses import asdict, fields, is_dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional

import yaml

from core_config import (
    AeSection,
    BenchSection,
    ChannelSection,
    CheSection,
    DataSection,
    DiffSection,
    EvalSection,
    QuantSection,
    RunSection,
)
from errors import ConfigError

SECTIONS = {
    'run': RunSection,
    'data': DataSection,
    'channel': ChannelSection,
    'che': CheSection,
    'ae': AeSection,
    'quant': QuantSection,
    'diff': DiffSection,
    'eval': EvalSection,
    'bench': BenchSection,
}

RESOLVED_CONFIG_NAME = 'resolved_config.yaml'


def _coerce(value: Any, hint: Any, key: str) -> Any:
    """Coerce a YAML value to the annotated field type"""
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)

    if origin is typing.Union:
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(value, inner[0], key)

    if hint is bool:
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ('true', 'false'):
            return value.lower() == 'true'
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")

    if hint is int:
        if isinstance(value, bool) or not isinstance(value, (int, float, str)):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        try:
            as_float = float(value)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        if not as_float.is_integer():
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return int(as_float)

    if hint is float:
        if isinstance(value, bool):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: expected a number, got {value!r}")

    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string, got {value!r}")
        return value

    if origin in (list, List):
        if not isinstance(value, (list, tuple)):
            value = [value]
        return [_coerce(v, args[0], key) for v in value]

    if origin is tuple:
        if not isinstance(value, (list, tuple)) or len(value) != len(args):
            raise ConfigError(f"{key}: expected {len(args)} values, got {value!r}")
        return tuple(_coerce(v, a, key) for v, a in zip(value, args))

    if origin in (dict, Dict):
        if not isinstance(value, dict):
            raise ConfigError(f"{key}: expected a mapping, got {value!r}")
        return {str(k): _coerce(v, args[1], key) for k, v in value.items()}

    return value


def _build(cls, data: Optional[dict], prefix: str, base=None):
    """Build a section dataclass from a nested dict, rejecting unknown keys"""
    obj = base if base is not None else cls()
    if data is None:
        return obj
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix}: expected a mapping, got {data!r}")

    hints = typing.get_type_hints(cls)
    known = {f.name for f in fields(cls)}
    for key, value in data.items():
        dotted = f"{prefix}.{key}"
        if key not in known:
            raise ConfigError(f"Unknown config key: {dotted}")
        current = getattr(obj, key)
        if is_dataclass(current):
            setattr(obj, key, _build(type(current), value, dotted, base=current))
        else:
            setattr(obj, key, _coerce(value, hints[key], dotted))
    return obj


def _plain(obj: Any) -> Any:
    """Convert tuples to lists so the resolved config is YAML/JSON friendly"""
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def parse_override(text: str) -> tuple:
    """Split 'a.b.c=value' and parse value as a YAML scalar or list"""
    if '=' not in text:
        raise ConfigError(f"Override must look like key=value, got {text!r}")
    key, raw = text.split('=', 1)
    key = key.strip()
    if not key:
        raise ConfigError(f"Override has an empty key: {text!r}")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as e:
        raise ConfigError(f"Cannot parse override value for {key}: {e}")
    return key, value


def _nest(key: str, value: Any) -> dict:
    parts = key.split('.')
    nested: Any = value
    for part in reversed(parts):
        nested = {part: nested}
    return nested


def _merge(base: dict, extra: dict) -> dict:
    merged = dict(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


class RunConfig:
    """Fully-resolved configuration for one command invocation"""

    def __init__(self, data: Optional[dict] = None):
        data = data or {}
        if not isinstance(data, dict):
            raise ConfigError(f"Config root must be a mapping, got {type(data).__name__}")
        for name in data:
            if name not in SECTIONS:
                raise ConfigError(f"Unknown config section: {name}")

        self.run: RunSection = _build(RunSection, data.get('run'), 'run')
        self.data: DataSection = _build(DataSection, data.get('data'), 'data')
        self.channel: ChannelSection = _build(ChannelSection, data.get('channel'), 'channel')
        self.che: CheSection = _build(CheSection, data.get('che'), 'che')
        self.ae: AeSection = _build(AeSection, data.get('ae'), 'ae')
        self.quant: QuantSection = _build(QuantSection, data.get('quant'), 'quant')
        self.diff: DiffSection = _build(DiffSection, data.get('diff'), 'diff')
        self.eval: EvalSection = _build(EvalSection, data.get('eval'), 'eval')
        self.bench: BenchSection = _build(BenchSection, data.get('bench'), 'bench')
        self.validate()

    @classmethod
    def load(cls, path: Optional[str] = None, overrides: Iterable[str] = ()) -> 'RunConfig':
        """Load defaults, then the YAML file (if any), then CLI overrides"""
        data: dict = {}
        if path is not None:
            path_obj = Path(path)
            if not path_obj.exists():
                raise ConfigError(f"Config file not found: {path}")
            try:
                with open(path_obj, 'r') as f:
                    data = yaml.safe_load(f) or {}
            except yaml.YAMLError as e:
                raise ConfigError(f"Could not parse config file {path}: {e}")

        for text in overrides or ():
            key, value = parse_override(text)
            data = _merge(data, _nest(key, value))

        return cls(data)

    def validate(self):
        """Check cross-field invariants; raise ConfigError on the first violation"""
        if self.channel.mode not in ('AWGN', 'RAYLEIGH_MRC'):
            raise ConfigError(f"channel.mode must be AWGN or RAYLEIGH_MRC, got {self.channel.mode}")
        if self.channel.mrc_branches < 1:
            raise ConfigError("channel.mrc_branches must be >= 1")
        low, high = self.channel.train_snr_range_db
        if low > high:
            raise ConfigError(f"channel.train_snr_range_db low > high: {low} > {high}")
        if math.isnan(self.channel.snr_db):
            raise ConfigError("channel.snr_db must not be NaN")

        if self.data.source not in ('synthetic', 'file'):
            raise ConfigError(f"data.source must be synthetic or file, got {self.data.source}")
        if self.data.preset not in ('SIMPLE', 'COMPLEX'):
            raise ConfigError(f"data.preset must be SIMPLE or COMPLEX, got {self.data.preset}")
        if self.data.report_domain not in ('AD', 'SF'):
            raise ConfigError(f"data.report_domain must be AD or SF, got {self.data.report_domain}")
        if self.data.n_delay > self.data.n_subcarriers:
            raise ConfigError("data.n_delay must not exceed data.n_subcarriers")
        if not 0.0 <= self.data.test_fraction < 1.0:
            raise ConfigError("data.test_fraction must be in [0, 1)")

        if self.ae.depth not in ('FOUR_LAYER', 'TWO_LAYER'):
            raise ConfigError(f"ae.depth must be FOUR_LAYER or TWO_LAYER, got {self.ae.depth}")
        rates = self.ae.mrl.rates
        if list(rates) != sorted(rates) or any(r < 1 or r > self.ae.latent_k_max for r in rates):
            raise ConfigError(f"ae.mrl.rates must be ascending and within [1, latent_k_max]: {rates}")
        if len(self.ae.mrl.weights) != len(rates) or any(w < 0 for w in self.ae.mrl.weights):
            raise ConfigError("ae.mrl.weights must be non-negative with one weight per rate")
        if not 1 <= self.ae.k_active <= self.ae.latent_k_max:
            raise ConfigError("ae.k_active must be within [1, latent_k_max]")
        if self.ae.mrl.enabled and self.ae.k_active not in rates:
            raise ConfigError(f"ae.k_active={self.ae.k_active} is not in ae.mrl.rates {rates}")

        if self.quant.mu <= 0 or self.quant.bits < 1:
            raise ConfigError("quant.mu must be > 0 and quant.bits >= 1")
        if self.quant.mode not in ('ste', 'posthoc'):
            raise ConfigError(f"quant.mode must be ste or posthoc, got {self.quant.mode}")

        if self.diff.N < 1:
            raise ConfigError("diff.N must be >= 1")
        if self.diff.schedule not in ('cosine', 'linear'):
            raise ConfigError(f"diff.schedule must be cosine or linear, got {self.diff.schedule}")
        if self.diff.mode not in ('RESIDUAL_DIFFUSION', 'GENERATIVE_DIFFUSION', 'SUPERVISED_UNET'):
            raise ConfigError(f"Unknown diff.mode: {self.diff.mode}")
        if not 1 <= self.diff.n_steps_infer <= self.diff.N:
            raise ConfigError("diff.n_steps_infer must be within [1, diff.N]")
        if self.diff.horizon is not None and self.diff.horizon < self.diff.N:
            raise ConfigError("diff.horizon must be >= diff.N")

        for steps in self.eval.n_steps:
            if steps < 0 or steps > self.diff.N:
                raise ConfigError(f"eval.n_steps entries must be within [0, diff.N], got {steps}")
        for bits in self.eval.bits:
            if bits < 0:
                raise ConfigError("eval.bits entries must be >= 0 (0 = unquantized)")

    # ------------------------------------------------------------------
    # Resolved views
    # ------------------------------------------------------------------

    def resolved(self) -> Dict[str, Any]:
        """Nested dict of every key, defaults included"""
        return _plain({name: asdict(getattr(self, name)) for name in SECTIONS})

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form"""
        canonical = json.dumps(self.resolved(), sort_keys=True, default=str)
        return hashlib.sha256(canonical.encode()).hexdigest()

    @property
    def run_dir(self) -> Path:
        return Path(self.run.out_dir) / self.run.tag

    def write_resolved(self, directory: Optional[Path] = None) -> Path:
        """Write resolved_config.yaml into the run directory"""
        directory = Path(directory) if directory is not None else self.run_dir
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / RESOLVED_CONFIG_NAME
        with open(path, 'w') as f:
            yaml.safe_dump(self.resolved(), f, sort_keys=True)
        return path
