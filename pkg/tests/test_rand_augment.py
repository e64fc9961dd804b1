from __future__ import annotations

from collections import Counter

import numpy as np
import pytest
from scipy.stats import chisquare

from tsaug.augmentations import AugOpKind
from tsaug.errors import ValidationError
from tsaug.rand_augment import (
    RandAugmentConfig,
    RandAugmentCounter,
    draw_ops,
    level_chain,
    rand_augment,
    rand_augment_dataset,
)
from tsaug.series_core import Dataset, RngStream, TimeSeries, derive_stream


def test_zero_ops_returns_the_input(make_series):
    x = make_series()
    assert rand_augment(x, RandAugmentConfig(num_ops=0), RngStream(1)) is x


def test_exactly_j_ops_are_applied_per_sample():
    counter = RandAugmentCounter()
    cfg = RandAugmentConfig(num_ops=3, magnitude=12)
    x = TimeSeries(values=np.sin(np.linspace(0.0, 6.0, 16)))
    root = RngStream(99)
    for index in range(10_000):
        rand_augment(x, cfg, derive_stream(root, index), counter=counter)
    assert counter.samples == 10_000
    assert counter.ops_applied == 30_000
    assert sum(counter.per_kind.values()) == 30_000


def test_op_selection_is_uniform_over_the_pool():
    cfg = RandAugmentConfig(num_ops=2, magnitude=12)
    root = RngStream(5)
    counts = Counter()
    for index in range(10_000):
        counts.update(draw_ops(cfg, derive_stream(root, index)))
    observed = [counts[kind] for kind in AugOpKind]
    assert chisquare(observed).pvalue > 0.001


def test_custom_pool_restricts_the_draws():
    cfg = RandAugmentConfig(num_ops=4, pool=(AugOpKind.ROTATE,))
    assert draw_ops(cfg, RngStream(0)) == [AugOpKind.ROTATE] * 4
    x = TimeSeries(values=[1.0, 2.0, 3.0])
    np.testing.assert_array_equal(rand_augment(x, cfg, RngStream(0)).values, x.values)


def test_same_stream_same_output(make_series):
    x = make_series(24, 2)
    cfg = RandAugmentConfig(num_ops=2, magnitude=20)
    a = rand_augment(x, cfg, RngStream(3))
    b = rand_augment(x, cfg, RngStream(3))
    np.testing.assert_array_equal(a.values, b.values)


def test_level_chain_clamps_permute_to_short_series():
    chain = level_chain([AugOpKind.PERMUTE], 30, length=3)
    assert chain[0][1].num_segments == 3


@pytest.mark.parametrize("kwargs", [{"num_ops": 11}, {"num_ops": -1}, {"magnitude": 31}, {"pool": ()}])
def test_invalid_settings_are_rejected(kwargs):
    with pytest.raises(ValidationError):
        RandAugmentConfig(**kwargs)


def test_config_dict_roundtrip():
    cfg = RandAugmentConfig(num_ops=3, magnitude=7, pool=(AugOpKind.JITTER, AugOpKind.SCALE))
    assert RandAugmentConfig.from_dict(cfg.to_dict()) == cfg


def test_dataset_application_is_thread_independent_and_keeps_labels():
    values = np.random.default_rng(2).normal(size=(10, 20, 3))
    d = Dataset.from_arrays(values, [0, 1] * 5, num_classes=2)
    cfg = RandAugmentConfig(num_ops=2, magnitude=12)
    serial = rand_augment_dataset(d, cfg, RngStream(8), threads=1)
    pooled = rand_augment_dataset(d, cfg, RngStream(8), threads=3)
    np.testing.assert_array_equal(serial.values, pooled.values)
    np.testing.assert_array_equal(serial.labels, d.labels)
