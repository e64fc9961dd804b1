from __future__ import annotations

import numpy as np
import pytest

from tsaug.errors import ValidationError
from tsaug.series_core import (
    Dataset,
    RngStream,
    TimeSeries,
    apply_zscore,
    derive_stream,
    fit_zscore,
    labels,
    normalize_zscore,
    replicate_stream,
    spawn_streams,
    stack_values,
)


def test_one_dimensional_values_become_single_channel():
    x = TimeSeries(values=[1.0, 2.0, 3.0], label=1)
    assert x.shape == (3, 1)
    assert x.label == 1


def test_series_values_are_read_only():
    x = TimeSeries(values=np.zeros((4, 2)))
    with pytest.raises(ValueError):
        x.values[0, 0] = 1.0


@pytest.mark.parametrize(
    "values",
    [[1.0], [[1.0, 2.0]], [1.0, np.nan, 2.0], [1.0, np.inf], np.zeros((2, 2, 2))],
)
def test_invalid_series_are_rejected(values):
    with pytest.raises(ValidationError):
        TimeSeries(values=values)


def test_dataset_rejects_mixed_shapes():
    a = TimeSeries(values=np.zeros((4, 1)), label=0)
    b = TimeSeries(values=np.zeros((5, 1)), label=0)
    with pytest.raises(ValidationError, match="shape"):
        Dataset(samples=(a, b), num_classes=1)


def test_dataset_rejects_out_of_range_label():
    with pytest.raises(ValidationError, match="num_classes"):
        Dataset.from_arrays(np.zeros((2, 4, 1)), [0, 2], num_classes=2)


def test_dataset_stacks_values_and_labels():
    values = np.arange(24, dtype=float).reshape(3, 4, 2)
    d = Dataset.from_arrays(values, [0, 1, 1], num_classes=2, split_tag="val")
    assert d.shape == (4, 2)
    assert len(d) == 3
    np.testing.assert_array_equal(stack_values(d), values)
    np.testing.assert_array_equal(labels(d), [0, 1, 1])
    assert d.subset([2]).labels.tolist() == [1]
    assert d.retag("test").split_tag == "test"


def test_equal_streams_draw_identically():
    a = RngStream(5, 9).generator().standard_normal(8)
    b = RngStream(5, 9).generator().standard_normal(8)
    np.testing.assert_array_equal(a, b)


def test_child_streams_are_deterministic_and_distinct():
    parent = RngStream(42)
    assert derive_stream(parent, 3) == derive_stream(parent, 3)
    children = spawn_streams(parent, 4)
    assert len({child.stream_id for child in children}) == 4
    first = children[0].generator().random(4)
    second = children[1].generator().random(4)
    assert not np.array_equal(first, second)


def test_negative_child_index_is_rejected():
    with pytest.raises(ValidationError):
        derive_stream(RngStream(1), -1)


def test_replicate_stream_derives_from_the_root_when_given():
    assert replicate_stream(2) == RngStream(2)
    assert replicate_stream(2, RngStream(7)) == derive_stream(RngStream(7), 2)
    assert replicate_stream(2, RngStream(7)) != replicate_stream(2, RngStream(8))


def test_zscore_standardises_each_channel():
    gen = np.random.default_rng(0)
    values = gen.normal(loc=[3.0, -2.0], scale=[2.0, 0.5], size=(10, 20, 2))
    d = normalize_zscore(Dataset.from_arrays(values, [0] * 10, num_classes=1))
    flat = d.values.reshape(-1, 2)
    np.testing.assert_allclose(flat.mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(flat.std(axis=0), 1.0, atol=1e-12)


def test_constant_channel_normalises_to_zero():
    values = np.ones((3, 5, 1)) * 4.0
    d = normalize_zscore(Dataset.from_arrays(values, [0, 0, 0], num_classes=1))
    np.testing.assert_array_equal(d.values, 0.0)


def test_zscore_fitted_on_train_leaves_shifted_split_off_centre():
    train = Dataset.from_arrays(np.random.default_rng(1).normal(size=(8, 10, 1)), [0] * 8, num_classes=1)
    val = Dataset.from_arrays(np.random.default_rng(2).normal(loc=5.0, size=(4, 10, 1)), [0] * 4, 1, "val")
    stats = fit_zscore(train)
    shifted = apply_zscore(val, stats)
    assert shifted.values.mean() > 2.0
