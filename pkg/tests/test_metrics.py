from __future__ import annotations

import numpy as np
import pytest

from tsaug.augmentations import AugOpKind, OpParams
from tsaug.errors import NumericError, ValidationError
from tsaug.metrics import (
    AugmentationRef,
    affinity,
    default_sweep,
    diversity,
    scatter_sweep,
    train_run,
)
from tsaug.model_zoo import Model, ModelKind, ModelSpec, TrainConfig
from tsaug.rand_augment import RandAugmentConfig
from tsaug.series_core import RngStream

TINY = TrainConfig(batch_size=20, epochs=2)


def _sign_classifier(d, direction: float = 1.0) -> Model:
    """Linear model predicting ``mean > 0``; ``direction=-1`` predicts the opposite."""
    spec = ModelSpec.for_dataset(ModelKind.MLP, d, hidden=())
    model = Model(spec)
    length, channels = d.shape
    weight = model.named_parameters()["1.dense.weight"]
    weight[:, 0] = -direction / (length * channels)
    weight[:, 1] = direction / (length * channels)
    return model


def _op(kind: AugOpKind, **params) -> AugmentationRef:
    return AugmentationRef(name=kind.value, ops=((kind, OpParams(**params)),))


def test_identity_has_unit_affinity_and_diversity(sign_splits):
    train_set, val_set, _ = sign_splits
    tau = AugmentationRef.identity()
    assert affinity(_sign_classifier(val_set), val_set, tau, RngStream(0)) == 1.0
    spec = ModelSpec.for_dataset(ModelKind.MLP, train_set, hidden=(8,))
    assert diversity(spec, train_set, TINY, tau, RngStream(0)) == 1.0


def test_label_flipping_augmentation_has_zero_affinity(sign_splits):
    val_set = sign_splits[1]
    model = _sign_classifier(val_set)
    assert affinity(model, val_set, _op(AugOpKind.ROTATE), RngStream(0)) == 0.0


def test_noise_free_jitter_has_unit_affinity(sign_splits):
    val_set = sign_splits[1]
    assert affinity(_sign_classifier(val_set), val_set, _op(AugOpKind.JITTER, sigma=0.0), RngStream(0)) == 1.0


def test_heavy_noise_lowers_affinity(sign_splits):
    val_set = sign_splits[1]
    model = _sign_classifier(val_set)
    light = affinity(model, val_set, _op(AugOpKind.JITTER, sigma=0.03), RngStream(1))
    heavy = affinity(model, val_set, _op(AugOpKind.JITTER, sigma=2.0), RngStream(1))
    assert heavy < light
    assert light == pytest.approx(1.0, abs=0.05)


def test_affinity_is_undefined_for_useless_model(sign_splits):
    val_set = sign_splits[1]
    with pytest.raises(NumericError):
        affinity(_sign_classifier(val_set, direction=-1.0), val_set, _op(AugOpKind.ROTATE), RngStream(0))


def test_affinity_does_not_depend_on_threads(sign_splits):
    val_set = sign_splits[1]
    model = _sign_classifier(val_set)
    tau = AugmentationRef(name="rand", rand=RandAugmentConfig(num_ops=2, magnitude=20))
    single = affinity(model, val_set, tau, RngStream(5), threads=1)
    pooled = affinity(model, val_set, tau, RngStream(5), threads=4)
    assert single == pooled


def test_heavy_noise_is_more_diverse(sign_splits):
    train_set = sign_splits[0]
    spec = ModelSpec.for_dataset(ModelKind.MLP, train_set, hidden=(16,))
    cfg = TrainConfig(batch_size=20, epochs=10)
    light = diversity(spec, train_set, cfg, _op(AugOpKind.JITTER, sigma=0.03), RngStream(3))
    heavy = diversity(spec, train_set, cfg, _op(AugOpKind.JITTER, sigma=2.0), RngStream(3))
    assert heavy > light


def test_runs_sharing_a_stream_share_their_initial_model(sign_splits):
    train_set = sign_splits[0]
    spec = ModelSpec.for_dataset(ModelKind.MLP, train_set, hidden=(8,))
    clean, clean_report = train_run(spec, train_set, None, TINY, RngStream(4))
    same, same_report = train_run(spec, train_set, None, TINY, RngStream(4), AugmentationRef.identity())
    np.testing.assert_array_equal(clean.theta, same.theta)
    assert clean_report == same_report


def test_default_sweep_covers_every_op_at_eight_levels():
    sweep = default_sweep()
    assert len(sweep) == 65
    assert sweep[0].is_identity
    names = [tau.name for tau in sweep[1:]]
    assert len(set(names)) == 64
    assert "jitter@30" in names
    assert "window_warp@3.75" in names


def test_augmentation_ref_rejects_mixed_definitions():
    with pytest.raises(ValidationError):
        AugmentationRef(name="mixed", ops=((AugOpKind.ROTATE, OpParams()),), rand=RandAugmentConfig())


def test_scatter_sweep_reports_every_augmentation_in_order(sign_splits):
    train_set, val_set, test_set = sign_splits
    spec = ModelSpec.for_dataset(ModelKind.MLP, train_set, hidden=(8,))
    aug_list = [
        AugmentationRef.identity(),
        AugmentationRef.at_level(AugOpKind.JITTER, 15),
        _op(AugOpKind.ROTATE),
    ]
    reports = scatter_sweep(train_set, val_set, test_set, spec, aug_list, TINY, seeds=(0, 1))
    assert [r.augmentation for r in reports] == aug_list
    identity = reports[0]
    assert (identity.affinity, identity.diversity, identity.test_acc_delta) == (1.0, 1.0, 0.0)
    assert all(r.seeds == (0, 1) for r in reports)
    row = reports[1].to_row()
    assert set(row) == {"aug_name", "params", "affinity", "diversity", "acc_delta", "seed"}
    assert row["seed"] == "0;1"

    pooled = scatter_sweep(train_set, val_set, test_set, spec, aug_list, TINY, seeds=(0, 1), threads=4)
    assert pooled == reports


def test_scatter_sweep_needs_augmentations_and_seeds(sign_splits):
    train_set, val_set, test_set = sign_splits
    spec = ModelSpec.for_dataset(ModelKind.MLP, train_set, hidden=(8,))
    with pytest.raises(ValidationError):
        scatter_sweep(train_set, val_set, test_set, spec, [], TINY, seeds=(0,))
    with pytest.raises(ValidationError):
        scatter_sweep(train_set, val_set, test_set, spec, [AugmentationRef.identity()], TINY, seeds=())
