from __future__ import annotations

import json
from dataclasses import replace
from pathlib import Path

import pytest

from tsaug.augmentations import AugOpKind
from tsaug.config import RunConfig, load_run_config
from tsaug.errors import ConfigError
from tsaug.model_zoo import ModelKind


def _write(tmp_path, payload) -> Path:
    path = tmp_path / "run.json"
    path.write_text(json.dumps(payload), encoding="utf-8")
    return path


def test_packaged_defaults():
    cfg = load_run_config()
    assert cfg.backbones == (ModelKind.MLP, ModelKind.CONV1D)
    assert cfg.seeds == (0, 1, 2)
    assert cfg.train.epochs == 50 and cfg.train.batch_size == 100
    assert cfg.search.num_subpolicies == 14
    assert cfg.rand.num_ops == 2 and cfg.rand.magnitude == 12
    assert len(cfg.metrics.resolve()) == 65


def test_partial_file_is_filled_from_defaults(tmp_path):
    cfg = load_run_config(_write(tmp_path, {"train": {"epochs": 3}, "backbones": ["conv1d"]}))
    assert cfg.train.epochs == 3
    assert cfg.train.batch_size == 100
    assert cfg.backbones == (ModelKind.CONV1D,)
    assert cfg.grid.ops == tuple(AugOpKind)


def test_dataset_path_is_relative_to_the_config(tmp_path):
    cfg = load_run_config(_write(tmp_path, {"dataset": "data/toy.json"}))
    assert cfg.dataset == tmp_path / "data" / "toy.json"


def test_hash_ignores_threads_and_output_location():
    cfg = load_run_config()
    assert cfg.hash() == replace(cfg, threads=8, out_dir=Path("elsewhere")).hash()
    assert cfg.hash() != replace(cfg, seeds=(5,)).hash()


@pytest.mark.parametrize(
    "payload",
    [
        {"schema_version": 2},
        {"backbones": []},
        {"backbones": ["lstm"]},
        {"threads": 0},
        {"sweep": {"m_values": [40]}},
        {"train": {"epochs": 0}},
        {"grid": {"ops": ["shear"]}},
        {"metrics": {"augmentations": []}},
    ],
)
def test_invalid_files_raise_config_error(tmp_path, payload):
    with pytest.raises(ConfigError):
        cfg = load_run_config(_write(tmp_path, payload))
        cfg.metrics.resolve()


def test_seed_falls_back_to_environment(monkeypatch):
    monkeypatch.setenv("TSAUG_SEED", "42")
    assert RunConfig().top_seed() == 42
    assert RunConfig(seed=3).top_seed() == 3
    monkeypatch.setenv("TSAUG_SEED", "abc")
    with pytest.raises(ConfigError):
        RunConfig().top_seed()
    monkeypatch.delenv("TSAUG_SEED")
    assert RunConfig().top_seed() is None


def test_metrics_entries(tmp_path):
    cfg = load_run_config(
        _write(
            tmp_path,
            {
                "metrics": {
                    "augmentations": [
                        "identity",
                        {"op": "scale", "level": 30},
                        {"op": "permute", "params": {"num_segments": 4}, "name": "perm4"},
                        {"rand": {"num_ops": 3, "magnitude": 9}},
                    ]
                }
            },
        )
    )
    names = [tau.name for tau in cfg.metrics.resolve()]
    assert names == ["identity", "scale@30", "perm4", "rand J=3 M=9"]
