"""
CSI Dataset Normalization
Single source of truth for mapping plane-stacked CSI values to the network range
and back. Statistics always come from the training split.
"""

import logging
from dataclasses import asdict, dataclass
from enum import Enum
from typing import Any, Dict, Tuple

import numpy as np

from errors import DegenerateStatsError, InvalidArgumentError

logger = logging.getLogger(__name__)


class NormScheme(str, Enum):
    MINMAX_GLOBAL = "MINMAX_GLOBAL"
    NONE = "NONE"


@dataclass(frozen=True)
class NormStats:
    """Affine normalization parameters shared by the real and imaginary planes"""
    min_val: float = 0.0
    max_val: float = 1.0
    scheme: NormScheme = NormScheme.NONE

    @property
    def scale(self) -> float:
        return self.max_val - self.min_val

    def to_dict(self) -> Dict[str, Any]:
        d = asdict(self)
        d['scheme'] = self.scheme.value
        return d

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> 'NormStats':
        return cls(
            min_val=float(d.get('min_val', 0.0)),
            max_val=float(d.get('max_val', 1.0)),
            scheme=NormScheme(d.get('scheme', NormScheme.NONE.value)),
        )


class CsiNormalizer:
    """
    Every module that feeds CSI to a network goes through here.

    normalize() returns (values', NormStats) like the rest of the platform's
    normalizers return (data, metadata). Test splits are normalized with the
    training stats via apply() and are never clipped.
    """

    @staticmethod
    def fit(values: np.ndarray, scheme: NormScheme = NormScheme.MINMAX_GLOBAL) -> NormStats:
        scheme = NormScheme(scheme)
        if scheme is NormScheme.NONE:
            return NormStats(0.0, 1.0, NormScheme.NONE)

        values = np.asarray(values)
        if values.size == 0:
            raise InvalidArgumentError("Cannot fit normalization on an empty dataset")
        min_val = float(values.min())
        max_val = float(values.max())
        if not max_val > min_val:
            raise DegenerateStatsError(
                f"Constant dataset (min == max == {min_val}) cannot be min-max normalized"
            )
        return NormStats(min_val, max_val, scheme)

    @staticmethod
    def normalize(
        values: np.ndarray,
        scheme: NormScheme = NormScheme.MINMAX_GLOBAL
    ) -> Tuple[np.ndarray, NormStats]:
        """Fit on values (the training split) and map them to [0, 1]"""
        stats = CsiNormalizer.fit(values, scheme)
        normalized = CsiNormalizer.apply(values, stats)
        logger.info(
            "Normalized %d values with %s (min=%.6g, max=%.6g)",
            np.asarray(values).size, stats.scheme.value, stats.min_val, stats.max_val
        )
        return normalized, stats

    @staticmethod
    def apply(values, stats: NormStats):
        """Normalize with existing stats; works on numpy arrays and torch tensors"""
        if stats.scheme is NormScheme.NONE:
            return values
        return (values - stats.min_val) / stats.scale

    @staticmethod
    def denormalize(values, stats: NormStats):
        """Exact inverse of apply()"""
        if stats.scheme is NormScheme.NONE:
            return values
        return values * stats.scale + stats.min_val
