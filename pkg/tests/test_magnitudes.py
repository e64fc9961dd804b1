from __future__ import annotations

import json

import pytest

from tsaug.errors import ConfigError, ValidationError
from tsaug.magnitudes import default_magnitude_table, load_magnitude_table


def test_levels_map_linearly_onto_ranges():
    table = default_magnitude_table()
    assert table.value_at_level("jitter", 0) == 0.0
    assert table.value_at_level("jitter", 30) == pytest.approx(0.2)
    assert table.value_at_level("scale", 15) == pytest.approx(0.25)
    assert table.value_at_level("window_slice", 0) == pytest.approx(0.5)
    assert table.value_at_level("rotate", 10) is None


def test_every_operation_has_an_entry():
    assert sorted(default_magnitude_table().ops()) == sorted(
        ["jitter", "scale", "rotate", "permute", "magnitude_warp", "time_warp", "window_slice", "window_warp"]
    )


def test_levels_outside_range_are_rejected():
    table = default_magnitude_table()
    with pytest.raises(ValidationError):
        table.value_at_level("jitter", -1)
    with pytest.raises(ValidationError):
        table.value_at_level("jitter", 30.5)
    with pytest.raises(ValidationError):
        table.get("shear")


def test_table_file_is_validated(tmp_path):
    (tmp_path / "magnitudes.json").write_text(
        json.dumps({"version": 1, "ops": {"jitter": {"param": "sigma", "range_lo": 0.3, "range_hi": 0.1, "default": 0.2}}}),
        encoding="utf-8",
    )
    with pytest.raises(ConfigError):
        load_magnitude_table(tmp_path)
    (tmp_path / "magnitudes.json").write_text(json.dumps({"version": 9, "ops": {}}), encoding="utf-8")
    with pytest.raises(ConfigError):
        load_magnitude_table(tmp_path)
