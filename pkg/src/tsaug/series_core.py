"""Series, datasets and deterministic random streams.

Series are stored time-major: ``values[t, c]`` is channel ``c`` at step ``t``.

Random streams use numpy's Philox-4x64-10 counter-based generator keyed by a
``SeedSequence`` built from ``(seed, stream_id)``. Child streams are derived by
hashing ``(seed, stream_id, child_index)`` through ``SeedSequence`` again, so a
stream tree is fully determined by the top-level seed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ValidationError

logger = logging.getLogger(__name__)

SPLIT_TAGS = ("train", "val", "test")
_U64_MASK = (1 << 64) - 1


def _as_series_array(values: object) -> np.ndarray:
    array = np.array(values, dtype=np.float64, copy=True)
    if array.ndim == 1:
        array = array[:, None]
    if array.ndim != 2:
        raise ValidationError(f"series values must be 1-D or 2-D, got {array.ndim}-D")
    return array


@dataclass(frozen=True, eq=False)
class TimeSeries:
    """One sample: a T x C grid of finite values with an optional class label."""

    values: np.ndarray
    label: Optional[int] = None

    def __post_init__(self) -> None:
        array = _as_series_array(self.values)
        if array.shape[0] < 2:
            raise ValidationError(f"series needs at least 2 time steps, got {array.shape[0]}")
        if array.shape[1] < 1:
            raise ValidationError("series needs at least 1 channel")
        if not np.all(np.isfinite(array)):
            raise ValidationError("series values must be finite")
        if self.label is not None and int(self.label) < 0:
            raise ValidationError(f"label must be non-negative, got {self.label}")
        array.setflags(write=False)
        object.__setattr__(self, "values", array)
        if self.label is not None:
            object.__setattr__(self, "label", int(self.label))

    @property
    def length(self) -> int:
        return int(self.values.shape[0])

    @property
    def channels(self) -> int:
        return int(self.values.shape[1])

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.length, self.channels)

    def with_values(self, values: object) -> "TimeSeries":
        """Return a new series carrying ``values`` and this series' label."""
        return TimeSeries(values=values, label=self.label)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Ordered, shape-homogeneous collection of labelled series."""

    samples: Tuple[TimeSeries, ...]
    num_classes: int
    split_tag: str = "train"

    def __post_init__(self) -> None:
        samples = tuple(self.samples)
        object.__setattr__(self, "samples", samples)
        if self.num_classes < 1:
            raise ValidationError(f"num_classes must be positive, got {self.num_classes}")
        if self.split_tag not in SPLIT_TAGS:
            raise ValidationError(f"split_tag must be one of {SPLIT_TAGS}, got {self.split_tag!r}")
        if not samples:
            return
        shape = samples[0].shape
        for index, sample in enumerate(samples):
            if sample.shape != shape:
                raise ValidationError(
                    f"sample {index} has shape {sample.shape}, expected {shape}"
                )
            if sample.label is None:
                raise ValidationError(f"sample {index} has no label")
            if sample.label >= self.num_classes:
                raise ValidationError(
                    f"sample {index} label {sample.label} >= num_classes {self.num_classes}"
                )

    @classmethod
    def from_arrays(
        cls,
        values: np.ndarray,
        labels: Sequence[int],
        num_classes: int,
        split_tag: str = "train",
    ) -> "Dataset":
        """Build a dataset from an ``(N, T, C)`` array and ``N`` labels."""
        array = np.asarray(values, dtype=np.float64)
        if array.ndim == 2:
            array = array[:, :, None]
        if array.ndim != 3:
            raise ValidationError(f"expected an (N, T, C) array, got shape {array.shape}")
        if len(labels) != array.shape[0]:
            raise ValidationError(
                f"{array.shape[0]} series but {len(labels)} labels"
            )
        samples = tuple(
            TimeSeries(values=array[i], label=int(labels[i])) for i in range(array.shape[0])
        )
        return cls(samples=samples, num_classes=num_classes, split_tag=split_tag)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self) -> Iterator[TimeSeries]:
        return iter(self.samples)

    @property
    def num_samples(self) -> int:
        return len(self.samples)

    @property
    def shape(self) -> Tuple[int, int]:
        """``(T, C)`` shared by every sample."""
        if not self.samples:
            raise ValidationError("empty dataset has no shape")
        return self.samples[0].shape

    @cached_property
    def values(self) -> np.ndarray:
        """Stacked ``(N, T, C)`` read-only view of all samples."""
        if not self.samples:
            return np.zeros((0, 0, 0))
        stacked = np.stack([sample.values for sample in self.samples])
        stacked.setflags(write=False)
        return stacked

    @cached_property
    def labels(self) -> np.ndarray:
        labels = np.array([sample.label for sample in self.samples], dtype=np.int64)
        labels.setflags(write=False)
        return labels

    def with_values(self, values: np.ndarray) -> "Dataset":
        """Same labels and split, new ``(N, T, C)`` values."""
        return Dataset.from_arrays(values, self.labels, self.num_classes, self.split_tag)

    def with_samples(self, samples: Iterable[TimeSeries]) -> "Dataset":
        return Dataset(samples=tuple(samples), num_classes=self.num_classes, split_tag=self.split_tag)

    def subset(self, indices: Sequence[int]) -> "Dataset":
        return self.with_samples(self.samples[int(i)] for i in indices)

    def retag(self, split_tag: str) -> "Dataset":
        return Dataset(samples=self.samples, num_classes=self.num_classes, split_tag=split_tag)


@dataclass(frozen=True)
class RngStream:
    """Value handle for one reproducible random stream.

    Two streams with equal ``(seed, stream_id)`` produce identical draws.
    Concurrent users derive their own children with :func:`derive_stream`.
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "seed", int(self.seed) & _U64_MASK)
        object.__setattr__(self, "stream_id", int(self.stream_id) & _U64_MASK)

    def generator(self) -> np.random.Generator:
        """Fresh Philox generator positioned at the start of this stream."""
        sequence = np.random.SeedSequence(entropy=[self.seed, self.stream_id])
        return np.random.Generator(np.random.Philox(sequence))

    def child(self, child_index: int) -> "RngStream":
        return derive_stream(self, child_index)


def derive_stream(parent: RngStream, child_index: int) -> RngStream:
    """Deterministically derive the ``child_index``-th child of ``parent``."""
    if child_index < 0:
        raise ValidationError(f"child_index must be non-negative, got {child_index}")
    sequence = np.random.SeedSequence(
        entropy=[parent.seed, parent.stream_id, int(child_index)]
    )
    (state,) = sequence.generate_state(1, dtype=np.uint64)
    return RngStream(seed=parent.seed, stream_id=int(state))


def replicate_stream(replicate: int, root: Optional[RngStream] = None) -> RngStream:
    """Stream of one seed replicate: child ``replicate`` of ``root``, or ``RngStream(replicate)`` without a root."""
    if root is None:
        return RngStream(replicate)
    return derive_stream(root, replicate)


def spawn_streams(parent: RngStream, count: int) -> List[RngStream]:
    return [derive_stream(parent, index) for index in range(count)]


def fresh_seed() -> int:
    """Top-level seed from OS entropy, used only when the caller gives none."""
    seed = int(np.random.SeedSequence().entropy) & _U64_MASK
    logger.info("no seed given; drew seed %d from OS entropy", seed)
    return seed


@dataclass(frozen=True)
class ZScoreStats:
    """Per-channel moments fitted by :func:`fit_zscore`."""

    mean: np.ndarray
    std: np.ndarray
    constant: np.ndarray

    def apply(self, values: np.ndarray) -> np.ndarray:
        scale = np.where(self.constant, 1.0, self.std)
        out = (np.asarray(values, dtype=np.float64) - self.mean) / scale
        return np.where(self.constant, 0.0, out)


def fit_zscore(d: Dataset) -> ZScoreStats:
    """Fit per-channel mean and population std over all samples and steps."""
    if not d.samples:
        raise ValidationError("cannot normalise an empty dataset")
    flat = d.values.reshape(-1, d.shape[1])
    mean = flat.mean(axis=0)
    std = flat.std(axis=0)
    constant = flat.max(axis=0) == flat.min(axis=0)
    return ZScoreStats(mean=mean, std=std, constant=constant)


def apply_zscore(d: Dataset, stats: ZScoreStats) -> Dataset:
    if not d.samples:
        return d
    return d.with_values(stats.apply(d.values))


def normalize_zscore(d: Dataset) -> Dataset:
    """Standardise each channel to mean 0, std 1; constant channels become 0."""
    return apply_zscore(d, fit_zscore(d))


def stack_values(d: Dataset) -> np.ndarray:
    """``(N, T, C)`` copy of the dataset values."""
    return np.array(d.values, copy=True)


def labels(d: Dataset) -> np.ndarray:
    return np.array(d.labels, copy=True)
