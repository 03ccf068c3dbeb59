"""
Canonical Result Schemas
Stable, typed schemas for evaluation and benchmark outputs. CSV files always
carry the columns in the fixed order below.
"""

import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional

import pandas as pd

from errors import InvalidArgumentError


# =============================================================================
# EVALUATION SCHEMAS
# =============================================================================

@dataclass
class MetricsRow:
    """One evaluated grid cell"""
    model_id: str = ""
    mode: str = ""                 # RESIDUAL_DIFFUSION | GENERATIVE_DIFFUSION | SUPERVISED_UNET | STAGE1
    snr_db: float = 0.0
    k: int = 0
    bits: int = 0                  # 0 = unquantized
    cnr_db: float = math.inf
    n_steps: int = 0               # 0 = Stage-1 output
    nmse_db: float = 0.0
    bler: Optional[float] = None
    domain: str = "AD"
    n_samples: int = 0
    quant_mode: str = ""           # ste | posthoc | "" when unquantized

    def __post_init__(self):
        if self.bler is not None and not 0.0 <= self.bler <= 1.0:
            raise InvalidArgumentError(f"bler must lie in [0, 1], got {self.bler}")
        if self.domain not in ("AD", "SF"):
            raise InvalidArgumentError(f"domain must be AD or SF, got {self.domain}")

    @classmethod
    def from_dict(cls, d: dict) -> 'MetricsRow':
        bler = d.get('bler')
        if bler is not None and isinstance(bler, float) and math.isnan(bler):
            bler = None
        quant_mode = d.get('quant_mode', '')
        if not isinstance(quant_mode, str):
            quant_mode = ''
        return cls(
            model_id=str(d.get('model_id', '')),
            mode=str(d.get('mode', '')),
            snr_db=float(d.get('snr_db', 0.0)),
            k=int(d.get('k', 0)),
            bits=int(d.get('bits', 0)),
            cnr_db=float(d.get('cnr_db', math.inf)),
            n_steps=int(d.get('n_steps', 0)),
            nmse_db=float(d.get('nmse_db', 0.0)),
            bler=bler,
            domain=str(d.get('domain', 'AD')),
            n_samples=int(d.get('n_samples', 0)),
            quant_mode=quant_mode,
        )

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


METRICS_COLUMNS = [f.name for f in fields(MetricsRow)]


@dataclass
class MetricsTable:
    rows: List[MetricsRow] = field(default_factory=list)

    def append(self, row: MetricsRow):
        self.rows.append(row)

    def __len__(self) -> int:
        return len(self.rows)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([r.to_dict() for r in self.rows], columns=METRICS_COLUMNS)

    def to_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False)
        return path

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> 'MetricsTable':
        records = frame.to_dict(orient='records')
        return cls([MetricsRow.from_dict(r) for r in records])

    @classmethod
    def from_csv(cls, path) -> 'MetricsTable':
        return cls.from_frame(pd.read_csv(path, keep_default_na=True))


# =============================================================================
# BENCHMARK SCHEMAS
# =============================================================================

@dataclass
class StageThroughput:
    stage: str = ""
    samples_per_s: float = 0.0
    batch_size: int = 0
    n_repeats: int = 0
    ratio_to_encoder: float = 0.0

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class ThroughputReport:
    stages: List[StageThroughput] = field(default_factory=list)
    device: str = "cpu"

    def add(self, stage: str, samples_per_s: float, batch_size: int, n_repeats: int):
        self.stages.append(StageThroughput(stage, samples_per_s, batch_size, n_repeats))
        self._refresh_ratios()

    def _refresh_ratios(self):
        enc = self.get('encoder')
        for s in self.stages:
            s.ratio_to_encoder = s.samples_per_s / enc.samples_per_s if enc and enc.samples_per_s > 0 else float('nan')

    def get(self, stage: str) -> Optional[StageThroughput]:
        for s in self.stages:
            if s.stage == stage:
                return s
        return None

    def step_ratio(self, few: str = 'diffusion-20', many: str = 'diffusion-2') -> Optional[float]:
        """Throughput of `few` divided by throughput of `many` (20-step over 2-step by default)"""
        a, b = self.get(few), self.get(many)
        if a is None or b is None or b.samples_per_s <= 0:
            return None
        return a.samples_per_s / b.samples_per_s

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([s.to_dict() for s in self.stages],
                            columns=[f.name for f in fields(StageThroughput)])

    def to_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False)
        return path

    def to_dict(self) -> Dict[str, Any]:
        return {
            'device': self.device,
            'stages': [s.to_dict() for s in self.stages],
            'step_ratio_20_over_2': self.step_ratio(),
        }
