from __future__ import annotations

import json

import numpy as np
import pytest

from tsaug.augmentations import rotate_flip
from tsaug.data_io import (
    DatasetManifest,
    SyntheticKind,
    SyntheticSpec,
    generate_synthetic,
    load_dataset,
    load_manifest,
    read_dataset_csv,
    save_dataset,
    save_dataset_csv,
    split_sizes,
)
from tsaug.errors import ConfigError, DataFormatError, ValidationError
from tsaug.series_core import Dataset


def _write(path, text: str):
    path.write_text(text, encoding="utf-8")
    return path


def test_csv_roundtrip_is_exact(tmp_path):
    gen = np.random.default_rng(0)
    d = Dataset.from_arrays(gen.normal(size=(4, 7, 3)) * 1e3, [0, 2, 1, 2], num_classes=3)
    path = tmp_path / "data.csv"
    save_dataset_csv(d, path, comments=["generated for a test"])
    assert path.read_text().startswith("# generated for a test\nseries_id,label,t,ch0,ch1,ch2\n")
    loaded = read_dataset_csv(path, num_classes=3, length=7, channels=3)
    np.testing.assert_array_equal(loaded.values, d.values)
    np.testing.assert_array_equal(loaded.labels, d.labels)


def test_rows_may_arrive_out_of_order(tmp_path):
    path = _write(
        tmp_path / "shuffled.csv",
        "series_id,label,t,ch0\nb,1,1,4\na,0,1,2\nb,1,0,3\na,0,0,1\n",
    )
    d = read_dataset_csv(path)
    assert d.num_classes == 2
    np.testing.assert_array_equal(d.values[:, :, 0], [[3, 4], [1, 2]])


def test_length_mismatch_names_the_series(tmp_path):
    path = _write(
        tmp_path / "short.csv",
        "series_id,label,t,ch0\na,0,0,1\na,0,1,2\na,0,2,3\nb,1,0,1\nb,1,1,2\n",
    )
    with pytest.raises(DataFormatError) as info:
        read_dataset_csv(path, length=3)
    assert info.value.series_id == "b"
    assert "'b'" in str(info.value)


def test_gap_in_time_steps_is_rejected(tmp_path):
    path = _write(tmp_path / "gap.csv", "series_id,label,t,ch0\na,0,0,1\na,0,2,2\n")
    with pytest.raises(DataFormatError, match="without gaps"):
        read_dataset_csv(path)


def test_non_numeric_cell_reports_row(tmp_path):
    path = _write(tmp_path / "text.csv", "series_id,label,t,ch0\na,0,0,1\na,0,1,oops\n")
    with pytest.raises(DataFormatError) as info:
        read_dataset_csv(path)
    assert info.value.row == 2
    assert info.value.series_id == "a"


def test_unknown_label_is_rejected(tmp_path):
    path = _write(tmp_path / "labels.csv", "series_id,label,t,ch0\na,5,0,1\na,5,1,2\n")
    with pytest.raises(DataFormatError, match="unknown label"):
        read_dataset_csv(path, num_classes=2)


def test_inconsistent_label_is_rejected(tmp_path):
    path = _write(tmp_path / "labels.csv", "series_id,label,t,ch0\na,0,0,1\na,1,1,2\n")
    with pytest.raises(DataFormatError, match="label"):
        read_dataset_csv(path)


def test_channel_columns_must_be_contiguous(tmp_path):
    path = _write(tmp_path / "channels.csv", "series_id,label,t,ch1\na,0,0,1\na,0,1,2\n")
    with pytest.raises(DataFormatError):
        read_dataset_csv(path)


def test_split_sizes():
    assert split_sizes(200) == (120, 40, 40)
    assert sum(split_sizes(7)) == 7


def test_synthetic_generation_is_seeded():
    spec = SyntheticSpec(kind=SyntheticKind.SINE, length=32, samples_per_class=100, seed=4)
    first = generate_synthetic(spec)
    second = generate_synthetic(spec)
    assert [len(d) for d in first] == [120, 40, 40]
    for a, b in zip(first, second):
        np.testing.assert_array_equal(a.values, b.values)
        np.testing.assert_array_equal(a.labels, b.labels)
    assert [d.split_tag for d in first] == ["train", "val", "test"]


def test_noise_free_sign_data_flips_under_rotation():
    splits = generate_synthetic(SyntheticSpec(kind=SyntheticKind.SIGN, length=16, noise=0.0, samples_per_class=10))
    for d in splits:
        for sample in d:
            assert (rotate_flip(sample).values.mean() > 0) == (sample.label == 0)


def test_generator_names_accept_short_aliases():
    assert SyntheticKind.parse("trend") is SyntheticKind.TREND
    assert SyntheticKind.parse("sign_of_mean") is SyntheticKind.SIGN
    with pytest.raises(ValidationError):
        SyntheticKind.parse("square")


def test_save_and_load_dataset_normalizes_with_train_statistics(tmp_path):
    raw = generate_synthetic(SyntheticSpec(kind=SyntheticKind.TREND, length=20, channels=2, samples_per_class=20))
    manifest_path = save_dataset(tmp_path, "trend", raw, normalize=True)
    manifest = load_manifest(manifest_path)
    assert manifest.length == 20 and manifest.channels == 2 and manifest.num_classes == 2
    train, val, test = load_dataset(manifest)

    flat = train.values.reshape(-1, 2)
    np.testing.assert_allclose(flat.mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(flat.std(axis=0), 1.0, atol=1e-12)

    raw_flat = raw[0].values.reshape(-1, 2)
    expected_val = (raw[1].values - raw_flat.mean(axis=0)) / raw_flat.std(axis=0)
    np.testing.assert_allclose(val.values, expected_val, atol=1e-12)
    assert len(test) == len(raw[2])


def test_manifest_paths_resolve_against_its_directory(tmp_path):
    raw = generate_synthetic(SyntheticSpec(kind=SyntheticKind.SIGN, length=8, samples_per_class=5))
    manifest_path = save_dataset(tmp_path / "nested", "sign", raw)
    manifest = load_manifest(manifest_path)
    assert manifest.path("val") == tmp_path / "nested" / "sign_val.csv"
    assert manifest.normalize is False


def test_manifest_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_manifest(tmp_path / "missing.json")
    broken = _write(tmp_path / "broken.json", "{not json")
    with pytest.raises(ConfigError):
        load_manifest(broken)
    partial = _write(tmp_path / "partial.json", json.dumps({"version": 1, "length": 8, "channels": 1}))
    with pytest.raises(ConfigError, match="num_classes"):
        load_manifest(partial)
    with pytest.raises(ConfigError, match="version"):
        DatasetManifest.from_dict({"version": 2})
