"""
Run Ledger and Diagnostic Logging
Appends one JSON line per CLI command to <run_dir>/runs.jsonl and wires the
standard logging module to <run_dir>/run.log

Usage:
    from run_logger import RunLogger, setup_logging

    setup_logging(run_dir)
    ledger = RunLogger(run_dir)
    ledger.log(
        kind='train-ae',
        inputs={'ae.k_active': 16, 'channel.snr_db': 10.0},
        outputs={'final_loss': 0.0123},
    )
"""

import json
import logging
import math
import uuid
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from core_config import PLATFORM_VERSION

LOG_FORMAT = '%(asctime)s [%(levelname)s] %(name)s: %(message)s'
RUN_LOG_NAME = 'run.log'
LEDGER_NAME = 'runs.jsonl'

RUN_KINDS = ('generate-data', 'train-ae', 'train-diffusion', 'eval', 'bench')


def setup_logging(run_dir: Optional[Path] = None, level: int = logging.INFO) -> logging.Logger:
    """
    Configure the root logger with a console handler and, when run_dir is
    given, a run.log file handler. Safe to call more than once per process.
    """
    root = logging.getLogger()
    root.setLevel(level)
    formatter = logging.Formatter(LOG_FORMAT)

    for handler in list(root.handlers):
        if getattr(handler, '_rdjscc', False):
            root.removeHandler(handler)
            handler.close()

    console = logging.StreamHandler()
    console.setFormatter(formatter)
    console._rdjscc = True
    root.addHandler(console)

    if run_dir is not None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        file_handler = logging.FileHandler(run_dir / RUN_LOG_NAME)
        file_handler.setFormatter(formatter)
        file_handler._rdjscc = True
        root.addHandler(file_handler)

    return root


def _sanitize_for_json(obj: Any) -> Any:
    """Make an object JSON-serializable (numpy scalars, inf, dataclasses)"""
    if obj is None:
        return None
    if isinstance(obj, dict):
        return {str(k): _sanitize_for_json(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize_for_json(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _sanitize_for_json(obj.tolist())
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if isinstance(obj, (datetime, Path)):
        return str(obj)
    if hasattr(obj, 'to_dict'):
        return _sanitize_for_json(obj.to_dict())
    try:
        json.dumps(obj)
        return obj
    except (TypeError, ValueError):
        return str(obj)


class RunLogger:
    """
    JSONL run ledger

    Each record holds timestamp, run_id, kind, status, inputs, outputs,
    warnings, error, duration_seconds and platform_version.
    """

    def __init__(self, run_dir: Path, enabled: bool = True):
        self.run_dir = Path(run_dir)
        self.enabled = enabled
        self.log_file = self.run_dir / LEDGER_NAME
        if self.enabled:
            self.run_dir.mkdir(parents=True, exist_ok=True)

    def log(
        self,
        kind: str,
        inputs: Dict[str, Any],
        outputs: Optional[Dict[str, Any]] = None,
        warnings: Optional[List[str]] = None,
        error: Optional[str] = None,
        duration_seconds: Optional[float] = None,
        status: Optional[str] = None
    ) -> Optional[str]:
        """Append a record; returns its run_id, or None when disabled or unwritable"""
        if not self.enabled:
            return None

        run_id = str(uuid.uuid4())[:8]
        if status is None:
            if error:
                status = 'error'
            elif warnings:
                status = 'warning'
            else:
                status = 'success'

        record = {
            'timestamp': datetime.now().isoformat(),
            'run_id': run_id,
            'kind': kind,
            'status': status,
            'inputs': _sanitize_for_json(inputs),
            'outputs': _sanitize_for_json(outputs or {}),
            'warnings': list(warnings or []),
            'error': error,
            'duration_seconds': duration_seconds,
            'platform_version': PLATFORM_VERSION
        }

        try:
            with open(self.log_file, 'a') as f:
                f.write(json.dumps(record) + '\n')
            return run_id
        except OSError as e:
            logging.getLogger(__name__).warning("Run ledger write failed: %s", e)
            return None

    def get_history(self, limit: int = 100, kind: Optional[str] = None) -> List[Dict[str, Any]]:
        """Records newest first, optionally filtered by kind"""
        if not self.log_file.exists():
            return []

        runs = []
        with open(self.log_file, 'r') as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                try:
                    record = json.loads(line)
                except json.JSONDecodeError:
                    continue
                if kind and record.get('kind') != kind:
                    continue
                runs.append(record)

        return list(reversed(runs))[:limit]

    def summarize(self) -> Dict[str, Any]:
        """Counts by kind and the error rate"""
        runs = self.get_history(limit=10000)
        if not runs:
            return {'total_runs': 0, 'by_kind': {}, 'error_rate': 0.0}

        by_kind: Dict[str, int] = {}
        errors = 0
        for run in runs:
            by_kind[run.get('kind', 'unknown')] = by_kind.get(run.get('kind', 'unknown'), 0) + 1
            if run.get('status') == 'error':
                errors += 1

        return {
            'total_runs': len(runs),
            'by_kind': by_kind,
            'error_rate': errors / len(runs),
            'first_run': runs[-1]['timestamp'],
            'last_run': runs[0]['timestamp']
        }
