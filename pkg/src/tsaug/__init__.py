"""Time-series data augmentation: transforms, random and learned policies, metrics."""

from __future__ import annotations

from .augmentations import AugOpKind, OpParams, apply_chain, apply_op, params_for_level
from .errors import ConfigError, DataFormatError, NumericError, TsaugError, ValidationError
from .rand_augment import RandAugmentConfig, rand_augment
from .series_core import Dataset, RngStream, TimeSeries, derive_stream

__all__ = [
    "AugOpKind",
    "ConfigError",
    "DataFormatError",
    "Dataset",
    "NumericError",
    "OpParams",
    "RandAugmentConfig",
    "RngStream",
    "TimeSeries",
    "TsaugError",
    "ValidationError",
    "apply_chain",
    "apply_op",
    "derive_stream",
    "main",
    "params_for_level",
    "rand_augment",
]


def main() -> None:
    from .cli import main as run

    run()
