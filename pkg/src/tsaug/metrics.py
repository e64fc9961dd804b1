"""Affinity and diversity of an augmentation, and the sweep behind the scatter plots.

* Affinity: accuracy of a clean-trained model on the augmented validation set
  divided by its accuracy on the clean one.
* Diversity: final training loss of a model trained with the augmentation
  divided by that of a model trained without it, both from the same seed.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .augmentations import (
    AugOpKind,
    OpSpec,
    SampleFn,
    apply_chain,
    augment_dataset,
    batch_augmenter,
    fit_params_to_length,
    params_for_level,
)
from .errors import NumericError, ValidationError
from .magnitudes import MagnitudeTable, default_magnitude_table
from .model_zoo import Model, ModelSpec, TrainConfig, TrainReport, build_model, evaluate, train
from .rand_augment import RandAugmentConfig, rand_augment
from .series_core import Dataset, RngStream, TimeSeries, derive_stream, replicate_stream

logger = logging.getLogger(__name__)

MIN_CLEAN_LOSS = 1e-12
SWEEP_LEVELS = tuple(30.0 * i / 8 for i in range(1, 9))

# Child indices of a per-seed stream.
_INIT_STREAM = 0
_TRAIN_STREAM = 1
_AFFINITY_STREAM = 2


@dataclass(frozen=True)
class AugmentationRef:
    """One augmentation: a fixed op chain, a randaugment setting, or the identity."""

    name: str
    ops: Tuple[OpSpec, ...] = ()
    rand: Optional[RandAugmentConfig] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "ops", tuple(self.ops))
        if self.ops and self.rand is not None:
            raise ValidationError("an augmentation is either an op chain or a randaugment setting")

    @classmethod
    def identity(cls) -> "AugmentationRef":
        return cls(name="identity")

    @classmethod
    def at_level(cls, kind: AugOpKind, level: float, table: Optional[MagnitudeTable] = None) -> "AugmentationRef":
        return cls(name=f"{kind.value}@{level:g}", ops=((kind, params_for_level(kind, level, table)),))

    @property
    def is_identity(self) -> bool:
        return not self.ops and self.rand is None

    def describe(self) -> str:
        """Parameter summary used in CSV output."""
        if self.rand is not None:
            return f"J={self.rand.num_ops};M={self.rand.magnitude}"
        if not self.ops:
            return ""
        return "+".join(f"{kind.value}({params.describe(kind)})" for kind, params in self.ops)

    def sample_fn(self, table: Optional[MagnitudeTable] = None) -> SampleFn:
        if self.rand is not None:
            cfg = self.rand
            return lambda x, rng: rand_augment(x, cfg, rng, table=table)
        if not self.ops:
            return lambda x, rng: x
        ops = self.ops

        def _apply(x: TimeSeries, rng: RngStream) -> TimeSeries:
            fitted = [(kind, fit_params_to_length(kind, params, x.length)) for kind, params in ops]
            return apply_chain(x, fitted, rng)

        return _apply


@dataclass(frozen=True)
class MetricReport:
    augmentation: AugmentationRef
    affinity: float
    diversity: float
    test_acc_delta: float
    seeds: Tuple[int, ...]

    def to_row(self) -> Dict[str, object]:
        return {
            "aug_name": self.augmentation.name,
            "params": self.augmentation.describe(),
            "affinity": self.affinity,
            "diversity": self.diversity,
            "acc_delta": self.test_acc_delta,
            "seed": ";".join(str(seed) for seed in self.seeds),
        }


def affinity(
    model_clean: Model,
    val: Dataset,
    tau: AugmentationRef,
    rng: RngStream,
    *,
    table: Optional[MagnitudeTable] = None,
    threads: int = 1,
) -> float:
    """``Acc(model, tau(val)) / Acc(model, val)``; tau is applied once per sample.

    Raises:
        NumericError: If the clean accuracy is 0.
    """
    clean = evaluate(model_clean, val).accuracy
    if clean == 0.0:
        raise NumericError("clean validation accuracy is 0; affinity is undefined")
    if tau.is_identity:
        return 1.0
    augmented = augment_dataset(val, tau.sample_fn(table), rng, threads=threads)
    return evaluate(model_clean, augmented).accuracy / clean


def train_run(
    spec: ModelSpec,
    train_set: Dataset,
    val_set: Optional[Dataset],
    cfg: TrainConfig,
    rng: RngStream,
    tau: Optional[AugmentationRef] = None,
    table: Optional[MagnitudeTable] = None,
) -> Tuple[Model, TrainReport]:
    """Build and train one model; runs sharing ``rng`` share init, shuffling and dropout."""
    model = build_model(spec, derive_stream(rng, _INIT_STREAM))
    augmenter = None
    if tau is not None and not tau.is_identity:
        augmenter = batch_augmenter(tau.sample_fn(table))
    report = train(model, train_set, val_set, cfg, augmenter, derive_stream(rng, _TRAIN_STREAM))
    return model, report


def _loss_ratio(augmented: TrainReport, clean: TrainReport) -> float:
    if clean.final_train_loss < MIN_CLEAN_LOSS:
        raise NumericError(f"clean final training loss {clean.final_train_loss:.3g} is too small for a stable ratio")
    return augmented.final_train_loss / clean.final_train_loss


def diversity(
    model_template: ModelSpec,
    train_set: Dataset,
    cfg: TrainConfig,
    tau: AugmentationRef,
    rng: RngStream,
    *,
    table: Optional[MagnitudeTable] = None,
) -> float:
    """Final-loss ratio of a tau-augmented run over a clean run from the same seed.

    Raises:
        NumericError: If the clean final loss is below ``1e-12``.
    """
    _, clean = train_run(model_template, train_set, None, cfg, rng)
    _, augmented = train_run(model_template, train_set, None, cfg, rng, tau, table)
    return _loss_ratio(augmented, clean)


@dataclass(frozen=True)
class _SeedBaseline:
    model: Model
    report: TrainReport
    test_accuracy: float


@dataclass(frozen=True)
class _Cell:
    affinity: float
    diversity: float
    acc_delta: float


def _baseline(spec, train_set, val_set, test_set, cfg, stream) -> _SeedBaseline:
    model, report = train_run(spec, train_set, val_set, cfg, stream)
    return _SeedBaseline(model, report, evaluate(model, test_set).accuracy)


def _cell(spec, train_set, val_set, test_set, cfg, stream, tau, base: _SeedBaseline, table) -> _Cell:
    aff = affinity(base.model, val_set, tau, derive_stream(stream, _AFFINITY_STREAM), table=table)
    if tau.is_identity:
        return _Cell(aff, 1.0, 0.0)
    model, report = train_run(spec, train_set, val_set, cfg, stream, tau, table)
    delta = evaluate(model, test_set).accuracy - base.test_accuracy
    return _Cell(aff, _loss_ratio(report, base.report), delta)


def scatter_sweep(
    train_set: Dataset,
    val_set: Dataset,
    test_set: Dataset,
    spec: ModelSpec,
    aug_list: Sequence[AugmentationRef],
    cfg: TrainConfig,
    seeds: Sequence[int],
    *,
    table: Optional[MagnitudeTable] = None,
    threads: int = 1,
    root: Optional[RngStream] = None,
) -> List[MetricReport]:
    """Affinity, diversity and test-accuracy delta for every augmentation, averaged over seeds.

    One clean model per seed is shared by every augmentation. Seed ``s`` runs
    on ``replicate_stream(s, root)``. Output order follows ``aug_list`` and
    does not depend on ``threads``.
    """
    if not aug_list:
        raise ValidationError("aug_list must not be empty")
    if not seeds:
        raise ValidationError("need at least one seed")
    table = table or default_magnitude_table()
    seeds = tuple(int(seed) for seed in seeds)
    streams = [replicate_stream(seed, root) for seed in seeds]
    workers = max(1, threads)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        baselines = list(
            pool.map(lambda stream: _baseline(spec, train_set, val_set, test_set, cfg, stream), streams)
        )
        jobs = [(tau, stream, base) for tau in aug_list for stream, base in zip(streams, baselines)]
        cells = list(
            pool.map(
                lambda job: _cell(spec, train_set, val_set, test_set, cfg, job[1], job[0], job[2], table),
                jobs,
            )
        )
    reports: List[MetricReport] = []
    per_tau = len(seeds)
    for index, tau in enumerate(aug_list):
        chunk = cells[index * per_tau:(index + 1) * per_tau]
        report = MetricReport(
            augmentation=tau,
            affinity=float(np.mean([c.affinity for c in chunk])),
            diversity=float(np.mean([c.diversity for c in chunk])),
            test_acc_delta=float(np.mean([c.acc_delta for c in chunk])),
            seeds=seeds,
        )
        logger.info(
            "%s: affinity=%.4f diversity=%.4f delta=%+.4f",
            tau.name, report.affinity, report.diversity, report.test_acc_delta,
        )
        reports.append(report)
    return reports


def default_sweep(table: Optional[MagnitudeTable] = None) -> List[AugmentationRef]:
    """Identity plus every operation at eight evenly spaced levels: 65 augmentations."""
    sweep = [AugmentationRef.identity()]
    for kind in AugOpKind:
        sweep.extend(AugmentationRef.at_level(kind, level, table) for level in SWEEP_LEVELS)
    return sweep
