"""Parameter-free random augmentation, ``randaugment(J, M)``."""

from __future__ import annotations

import logging
import threading
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from .augmentations import (
    AugOpKind,
    OpSpec,
    apply_chain,
    augment_dataset,
    fit_params_to_length,
    params_for_level,
    parse_op_kind,
)
from .errors import ValidationError
from .magnitudes import MagnitudeTable
from .series_core import Dataset, RngStream, TimeSeries, derive_stream

logger = logging.getLogger(__name__)

MAX_OPS = 10
MAX_LEVEL = 30

# Child indices of the per-sample stream.
_SELECT_STREAM = 0
_APPLY_STREAM = 1


@dataclass(frozen=True)
class RandAugmentConfig:
    """``J`` ops drawn uniformly from ``pool``, all at shared level ``M``."""

    num_ops: int = 2
    magnitude: int = 12
    pool: Tuple[AugOpKind, ...] = tuple(AugOpKind)

    def __post_init__(self) -> None:
        object.__setattr__(self, "pool", tuple(self.pool))
        if not 0 <= self.num_ops <= MAX_OPS:
            raise ValidationError(f"J must lie in [0, {MAX_OPS}], got {self.num_ops}")
        if not 0 <= self.magnitude <= MAX_LEVEL:
            raise ValidationError(f"M must lie in [0, {MAX_LEVEL}], got {self.magnitude}")
        if not self.pool:
            raise ValidationError("operation pool must not be empty")

    def to_dict(self) -> Dict[str, object]:
        return {
            "num_ops": self.num_ops,
            "magnitude": self.magnitude,
            "pool": [kind.value for kind in self.pool],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, object]) -> "RandAugmentConfig":
        pool = data.get("pool")
        kinds = tuple(parse_op_kind(str(name)) for name in pool) if pool else tuple(AugOpKind)
        return cls(
            num_ops=int(data.get("num_ops", 2)),
            magnitude=int(data.get("magnitude", 12)),
            pool=kinds,
        )


@dataclass
class RandAugmentCounter:
    """Instrumentation: how many ops were applied, overall and per kind."""

    samples: int = 0
    ops_applied: int = 0
    per_kind: Counter = field(default_factory=Counter)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def record(self, kinds: Sequence[AugOpKind]) -> None:
        with self._lock:
            self.samples += 1
            self.ops_applied += len(kinds)
            self.per_kind.update(kinds)


def draw_ops(cfg: RandAugmentConfig, rng: RngStream) -> List[AugOpKind]:
    """Draw ``J`` kinds i.i.d. uniform over the pool, with replacement."""
    gen = rng.generator()
    picks = gen.integers(0, len(cfg.pool), size=cfg.num_ops)
    return [cfg.pool[int(i)] for i in picks]


def level_chain(
    kinds: Sequence[AugOpKind],
    level: float,
    length: int,
    table: Optional[MagnitudeTable] = None,
) -> List[OpSpec]:
    """Chain of ``kinds`` at magnitude ``level``, clamped to fit a length-``length`` series."""
    return [
        (kind, fit_params_to_length(kind, params_for_level(kind, level, table), length))
        for kind in kinds
    ]


def rand_augment(
    x: TimeSeries,
    cfg: RandAugmentConfig,
    rng: RngStream,
    *,
    table: Optional[MagnitudeTable] = None,
    counter: Optional[RandAugmentCounter] = None,
) -> TimeSeries:
    """Apply ``J`` uniformly drawn ops at level ``M``; ``J = 0`` returns ``x``."""
    kinds = draw_ops(cfg, derive_stream(rng, _SELECT_STREAM))
    if counter is not None:
        counter.record(kinds)
    if not kinds:
        return x
    chain = level_chain(kinds, cfg.magnitude, x.length, table)
    return apply_chain(x, chain, derive_stream(rng, _APPLY_STREAM))


def rand_augment_dataset(
    d: Dataset,
    cfg: RandAugmentConfig,
    rng: RngStream,
    *,
    threads: int = 1,
    table: Optional[MagnitudeTable] = None,
    counter: Optional[RandAugmentCounter] = None,
) -> Dataset:
    """Apply :func:`rand_augment` to every sample with per-sample derived streams."""
    return augment_dataset(
        d,
        lambda x, stream: rand_augment(x, cfg, stream, table=table, counter=counter),
        rng,
        threads=threads,
    )
