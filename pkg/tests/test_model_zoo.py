from __future__ import annotations

import numpy as np
import pytest

from tsaug.augmentations import batch_augmenter, chain_sample_fn
from tsaug.data_io import SyntheticKind, SyntheticSpec, generate_synthetic
from tsaug.errors import NumericError, ValidationError
from tsaug.model_zoo import (
    AdamState,
    Conv1d,
    Model,
    ModelKind,
    ModelSpec,
    TrainConfig,
    backward,
    build_model,
    cross_entropy,
    evaluate,
    expected_param_count,
    forward,
    load_checkpoint,
    lr_at_epoch,
    save_checkpoint,
    train,
    train_step,
)
from tsaug.series_core import RngStream, normalize_zscore


def _relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-3)
    return float(np.max(np.abs(analytic - numeric) / scale))


def _gradient_check(model: Model, batch: np.ndarray, labels: np.ndarray, stream: RngStream) -> float:
    def loss_at() -> float:
        logits, _ = forward(model, batch, "train", stream)
        return cross_entropy(logits, labels)[0]

    logits, cache = forward(model, batch, "train", stream)
    _, grad_logits = cross_entropy(logits, labels)
    analytic = backward(model, cache, grad_logits)
    numeric = np.zeros_like(analytic)
    h = 1e-5
    for i in range(model.param_count):
        saved = model.theta[i]
        model.theta[i] = saved + h
        plus = loss_at()
        model.theta[i] = saved - h
        minus = loss_at()
        model.theta[i] = saved
        numeric[i] = (plus - minus) / (2 * h)
    return _relative_error(analytic, numeric)


@pytest.mark.parametrize(
    "spec",
    [
        ModelSpec(ModelKind.MLP, length=30, channels=2, num_classes=5),
        ModelSpec(ModelKind.MLP, length=8, channels=1, num_classes=3, width=0.1, batch_norm=False),
        ModelSpec(ModelKind.CONV1D, length=40, channels=3, num_classes=4, width=0.25),
        ModelSpec(ModelKind.CONV1D, length=9, channels=1, num_classes=2, conv_channels=(2, 3)),
    ],
)
def test_parameter_count_matches_architecture_formula(spec):
    model = build_model(spec, RngStream(0))
    assert model.param_count == expected_param_count(spec)
    assert np.all(np.isfinite(model.theta))


def test_default_backbone_sizes():
    spec = ModelSpec(ModelKind.MLP, length=10, channels=1, num_classes=2)
    assert spec.hidden_sizes() == (500, 256)
    assert ModelSpec(ModelKind.CONV1D, length=10, channels=1, num_classes=2).conv_sizes() == (32, 64, 128, 256)


def test_zero_weight_mlp_gives_uniform_softmax():
    model = Model(ModelSpec(ModelKind.MLP, length=6, channels=2, num_classes=3, hidden=(4,)))
    logits, _ = forward(model, np.random.default_rng(0).normal(size=(5, 6, 2)), "eval")
    np.testing.assert_array_equal(logits, 0.0)


def test_eval_mode_is_deterministic():
    spec = ModelSpec(ModelKind.CONV1D, length=12, channels=2, num_classes=3, conv_channels=(4, 4))
    model = build_model(spec, RngStream(1))
    batch = np.random.default_rng(1).normal(size=(4, 12, 2))
    first, _ = forward(model, batch, "eval")
    second, _ = forward(model, batch, "eval")
    np.testing.assert_array_equal(first, second)


def test_linear_model_matches_matrix_product():
    spec = ModelSpec(ModelKind.MLP, length=3, channels=2, num_classes=2, hidden=())
    model = Model(spec)
    params = model.named_parameters()
    weight = np.arange(12, dtype=float).reshape(6, 2) / 10.0
    bias = np.array([0.5, -0.25])
    params["1.dense.weight"][...] = weight
    params["1.dense.bias"][...] = bias
    batch = np.random.default_rng(2).normal(size=(4, 3, 2))
    logits, _ = forward(model, batch, "eval")
    np.testing.assert_allclose(logits, batch.reshape(4, 6) @ weight + bias, atol=1e-12)


def test_shape_mismatch_is_rejected():
    model = build_model(ModelSpec(ModelKind.MLP, length=5, channels=1, num_classes=2, hidden=(3,)), RngStream(0))
    with pytest.raises(ValidationError):
        forward(model, np.zeros((2, 6, 1)))
    with pytest.raises(ValidationError):
        forward(model, np.zeros((2, 5, 1)), mode="predict")


@pytest.mark.parametrize("seed", range(10))
def test_mlp_gradient_matches_finite_differences(seed):
    spec = ModelSpec(ModelKind.MLP, length=4, channels=1, num_classes=2, hidden=(3,), dropout=0.2)
    model = build_model(spec, RngStream(seed))
    gen = np.random.default_rng(seed)
    model.theta[...] += 0.1 * gen.normal(size=model.param_count)
    batch = gen.normal(size=(6, 4, 1))
    labels = gen.integers(0, 2, size=6)
    assert _gradient_check(model, batch, labels, RngStream(seed, 1)) < 1e-4


@pytest.mark.parametrize("seed", range(10))
def test_conv_gradient_matches_finite_differences(seed):
    spec = ModelSpec(ModelKind.CONV1D, length=9, channels=2, num_classes=2, conv_channels=(2, 3))
    model = build_model(spec, RngStream(seed))
    gen = np.random.default_rng(100 + seed)
    model.theta[...] += 0.1 * gen.normal(size=model.param_count)
    batch = gen.normal(size=(4, 9, 2))
    labels = gen.integers(0, 2, size=4)
    assert _gradient_check(model, batch, labels, RngStream(seed, 1)) < 1e-4


def test_eval_mode_gradient_matches_finite_differences():
    spec = ModelSpec(ModelKind.MLP, length=5, channels=1, num_classes=3, hidden=(4,))
    model = build_model(spec, RngStream(3))
    gen = np.random.default_rng(3)
    for layer in model.layers:
        for buffer in layer.buffers():
            buffer[...] = gen.uniform(0.5, 1.5, size=buffer.shape)
    batch = gen.normal(size=(3, 5, 1))
    labels = np.array([0, 2, 1])
    logits, cache = forward(model, batch, "eval")
    analytic = backward(model, cache, cross_entropy(logits, labels)[1])
    numeric = np.zeros_like(analytic)
    h = 1e-5
    for i in range(model.param_count):
        saved = model.theta[i]
        model.theta[i] = saved + h
        plus = cross_entropy(forward(model, batch, "eval")[0], labels)[0]
        model.theta[i] = saved - h
        minus = cross_entropy(forward(model, batch, "eval")[0], labels)[0]
        model.theta[i] = saved
        numeric[i] = (plus - minus) / (2 * h)
    assert _relative_error(analytic, numeric) < 1e-4


def _toeplitz(weight: np.ndarray, length: int) -> np.ndarray:
    kernel = weight.size
    pad = kernel // 2
    matrix = np.zeros((length, length))
    for row in range(length):
        for j in range(kernel):
            col = row + j - pad
            if 0 <= col < length:
                matrix[row, col] = weight[j]
    return matrix


def test_conv_layer_matches_matrix_oracle():
    layer = Conv1d(1, 1, 5)
    gen = np.random.default_rng(4)
    weight = gen.normal(size=(1, 1, 5))
    layer.params = {"weight": weight, "bias": np.array([0.3])}
    x = gen.normal(size=(1, 1, 8))
    out, cache = layer.forward(x, train=True, gen=None)
    matrix = _toeplitz(weight[0, 0], 8)
    np.testing.assert_allclose(out[0, 0], matrix @ x[0, 0] + 0.3, atol=1e-12)

    upstream = gen.normal(size=(1, 1, 8))
    grads = {"weight": np.zeros((1, 1, 5)), "bias": np.zeros(1)}
    d_input = layer.backward(upstream, cache, grads)
    np.testing.assert_allclose(d_input[0, 0], matrix.T @ upstream[0, 0], atol=1e-12)
    padded = np.pad(x[0, 0], 2)
    columns = np.stack([padded[j:j + 8] for j in range(5)], axis=1)
    np.testing.assert_allclose(grads["weight"][0, 0], columns.T @ upstream[0, 0], atol=1e-12)
    np.testing.assert_allclose(grads["bias"], upstream.sum(), atol=1e-12)


def test_constant_loss_has_zero_gradient():
    model = build_model(ModelSpec(ModelKind.MLP, length=4, channels=1, num_classes=2, hidden=(3,)), RngStream(0))
    _, cache = forward(model, np.ones((2, 4, 1)), "train", RngStream(1))
    np.testing.assert_array_equal(backward(model, cache, np.zeros((2, 2))), 0.0)


def test_learning_rate_schedule():
    cfg = TrainConfig()
    assert lr_at_epoch(cfg, 0) == pytest.approx(1e-3)
    assert lr_at_epoch(cfg, 4) == pytest.approx(1e-3)
    assert lr_at_epoch(cfg, 10) == pytest.approx(8.1e-4)


def test_train_config_rejects_nonpositive_values():
    with pytest.raises(ValidationError):
        TrainConfig(epochs=0)
    with pytest.raises(ValidationError):
        TrainConfig(lr0=-1.0)


def test_loss_decreases_over_first_full_batch_steps(sign_splits):
    train_set = sign_splits[0]
    spec = ModelSpec.for_dataset(ModelKind.MLP, train_set, hidden=(16,), dropout=0.0)
    model = build_model(spec, RngStream(2))
    optimizer = AdamState.for_model(model)
    cfg = TrainConfig()
    losses = [
        train_step(model, optimizer, train_set.values, train_set.labels, cfg.lr0, cfg, RngStream(0))[0]
        for _ in range(6)
    ]
    assert all(later < earlier for earlier, later in zip(losses, losses[1:]))


def test_non_finite_loss_leaves_model_untouched(sign_splits):
    train_set = sign_splits[0]
    model = build_model(ModelSpec.for_dataset(ModelKind.MLP, train_set, hidden=(4,)), RngStream(0))
    model.theta[0] = np.inf
    before = model.theta.copy()
    optimizer = AdamState.for_model(model)
    with pytest.raises(NumericError):
        train_step(model, optimizer, train_set.values[:10], train_set.labels[:10], 1e-3, TrainConfig(), RngStream(0))
    np.testing.assert_array_equal(model.theta, before)
    assert optimizer.t == 0


def test_separable_data_is_fit(sign_splits):
    train_set, val_set, _ = sign_splits
    spec = ModelSpec.for_dataset(ModelKind.MLP, train_set, hidden=(32, 16))
    model = build_model(spec, RngStream(0))
    report = train(model, train_set, val_set, TrainConfig(batch_size=20, epochs=50), rng=RngStream(1))
    assert len(report.epochs) == 50
    assert evaluate(model, train_set).accuracy >= 0.99
    assert all(0.0 <= e.train_accuracy <= 1.0 and np.isfinite(e.train_loss) for e in report.epochs)


def test_training_is_deterministic_and_identity_augmenter_changes_nothing(sign_splits):
    train_set, val_set, _ = sign_splits
    spec = ModelSpec.for_dataset(ModelKind.CONV1D, train_set, conv_channels=(4, 8))
    cfg = TrainConfig(batch_size=25, epochs=3)

    def run(augmenter):
        model = build_model(spec, RngStream(5))
        report = train(model, train_set, val_set, cfg, augmenter, RngStream(6))
        return model, report

    plain_model, plain = run(None)
    again_model, again = run(None)
    identity_model, identity = run(batch_augmenter(chain_sample_fn([])))
    assert plain == again
    assert plain == identity
    np.testing.assert_array_equal(plain_model.theta, again_model.theta)
    np.testing.assert_array_equal(plain_model.theta, identity_model.theta)


def test_checkpoint_roundtrip(tmp_path, sign_splits):
    train_set = sign_splits[0]
    spec = ModelSpec.for_dataset(ModelKind.CONV1D, train_set, conv_channels=(3, 5))
    model = build_model(spec, RngStream(0))
    forward(model, train_set.values[:8], "train", RngStream(1))
    path = tmp_path / "model.ckpt"
    save_checkpoint(model, path)
    assert path.read_bytes()[:8] == b"TSAUGCK1"
    loaded = load_checkpoint(path)
    assert loaded.spec == spec
    np.testing.assert_array_equal(loaded.theta, model.theta)
    np.testing.assert_array_equal(loaded.buffer_vector(), model.buffer_vector())
    np.testing.assert_array_equal(
        forward(loaded, train_set.values, "eval")[0], forward(model, train_set.values, "eval")[0]
    )


def test_checkpoint_with_bad_magic_is_rejected(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"NOTACKPT" + b"\x00" * 16)
    with pytest.raises(ValidationError):
        load_checkpoint(path)


@pytest.mark.slow
def test_default_recipe_learns_sine_frequencies():
    splits = generate_synthetic(
        SyntheticSpec(kind=SyntheticKind.SINE, length=64, channels=1, samples_per_class=200, noise=0.1, seed=0)
    )
    train_set, val_set, test_set = (normalize_zscore(d) for d in splits)
    model = build_model(ModelSpec.for_dataset(ModelKind.MLP, train_set), RngStream(0))
    train(model, train_set, val_set, TrainConfig(), rng=RngStream(1))
    assert evaluate(model, test_set).accuracy >= 0.95
