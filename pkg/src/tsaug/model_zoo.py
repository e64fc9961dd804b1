"""Small classifiers with hand-derived backpropagation and the training recipe.

Two backbones are provided:

* MLP: flatten ``(T, C)``, then ``Linear -> BatchNorm -> ReLU -> Dropout`` per
  hidden layer (500 and 256 units by default) and a final linear layer.
* Conv-1D: four ``Conv(k=5) -> BatchNorm -> ReLU`` blocks with 32/64/128/256
  channels, max pooling by 3 after the first three, global average pooling
  and a linear head.

All parameters live in one flat float64 vector ``theta``; each layer holds
views into it, so an optimizer step on ``theta`` updates every layer.
Batch-norm running statistics are buffers, not parameters.
"""

from __future__ import annotations

import json
import logging
import struct
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import NumericError, ValidationError
from .series_core import Dataset, RngStream, derive_stream, fresh_seed

logger = logging.getLogger(__name__)

DEFAULT_MLP_HIDDEN = (500, 256)
DEFAULT_CONV_CHANNELS = (32, 64, 128, 256)
BN_EPS = 1e-5
BN_MOMENTUM = 0.1

CHECKPOINT_MAGIC = b"TSAUGCK1"
CHECKPOINT_VERSION = 1


class ModelKind(Enum):
    MLP = "mlp"
    CONV1D = "conv1d"


@dataclass(frozen=True)
class ModelSpec:
    """Architecture descriptor.

    ``hidden`` / ``conv_channels`` left as ``None`` use the default sizes
    scaled by ``width`` (rounded, at least 1). An empty ``hidden`` tuple gives
    a bare linear classifier.
    """

    kind: ModelKind
    length: int
    channels: int
    num_classes: int
    hidden: Optional[Tuple[int, ...]] = None
    conv_channels: Optional[Tuple[int, ...]] = None
    width: float = 1.0
    kernel_size: int = 5
    pool_size: int = 3
    dropout: float = 0.2
    batch_norm: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", ModelKind(self.kind))
        if self.hidden is not None:
            object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.conv_channels is not None:
            object.__setattr__(self, "conv_channels", tuple(int(c) for c in self.conv_channels))
        if self.length < 1 or self.channels < 1 or self.num_classes < 1:
            raise ValidationError("length, channels and num_classes must be positive")
        if self.width <= 0:
            raise ValidationError(f"width must be positive, got {self.width}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValidationError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValidationError(f"kernel_size must be a positive odd number, got {self.kernel_size}")
        if self.pool_size < 1:
            raise ValidationError(f"pool_size must be positive, got {self.pool_size}")

    def hidden_sizes(self) -> Tuple[int, ...]:
        if self.hidden is not None:
            return self.hidden
        return tuple(max(1, int(round(h * self.width))) for h in DEFAULT_MLP_HIDDEN)

    def conv_sizes(self) -> Tuple[int, ...]:
        if self.conv_channels is not None:
            return self.conv_channels
        return tuple(max(1, int(round(c * self.width))) for c in DEFAULT_CONV_CHANNELS)

    def to_dict(self) -> Dict[str, object]:
        return {
            "kind": self.kind.value,
            "length": self.length,
            "channels": self.channels,
            "num_classes": self.num_classes,
            "hidden": None if self.hidden is None else list(self.hidden),
            "conv_channels": None if self.conv_channels is None else list(self.conv_channels),
            "width": self.width,
            "kernel_size": self.kernel_size,
            "pool_size": self.pool_size,
            "dropout": self.dropout,
            "batch_norm": self.batch_norm,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, object]) -> "ModelSpec":
        hidden = data.get("hidden")
        conv = data.get("conv_channels")
        return cls(
            kind=ModelKind(str(data.get("kind", "mlp"))),
            length=int(data["length"]),
            channels=int(data["channels"]),
            num_classes=int(data["num_classes"]),
            hidden=None if hidden is None else tuple(hidden),
            conv_channels=None if conv is None else tuple(conv),
            width=float(data.get("width", 1.0)),
            kernel_size=int(data.get("kernel_size", 5)),
            pool_size=int(data.get("pool_size", 3)),
            dropout=float(data.get("dropout", 0.2)),
            batch_norm=bool(data.get("batch_norm", True)),
        )

    @classmethod
    def for_dataset(cls, kind: ModelKind, d: Dataset, **overrides: object) -> "ModelSpec":
        length, channels = d.shape
        return cls(kind=kind, length=length, channels=channels, num_classes=d.num_classes, **overrides)


# --------------------------------------------------------------------------
# Layers
# --------------------------------------------------------------------------


class Layer:
    """Base layer: no parameters, no buffers."""

    name = "layer"

    def __init__(self) -> None:
        self.params: Dict[str, np.ndarray] = {}

    def param_shapes(self) -> Dict[str, Tuple[int, ...]]:
        return {}

    def init_params(self, gen: np.random.Generator) -> None:
        """Fill bound parameter views in place."""

    def buffers(self) -> List[np.ndarray]:
        return []

    def forward(self, x: np.ndarray, train: bool, gen: Optional[np.random.Generator]) -> Tuple[np.ndarray, object]:
        raise NotImplementedError

    def backward(self, grad: np.ndarray, cache: object, grads: Dict[str, np.ndarray]) -> np.ndarray:
        raise NotImplementedError


class Flatten(Layer):
    name = "flatten"

    def forward(self, x, train, gen):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, grad, cache, grads):
        return grad.reshape(cache)


class ChannelsFirst(Layer):
    """``(B, T, C) -> (B, C, T)``."""

    name = "channels_first"

    def forward(self, x, train, gen):
        return np.ascontiguousarray(x.transpose(0, 2, 1)), None

    def backward(self, grad, cache, grads):
        return grad.transpose(0, 2, 1)


class Dense(Layer):
    name = "dense"

    def __init__(self, fan_in: int, fan_out: int) -> None:
        super().__init__()
        self.fan_in = fan_in
        self.fan_out = fan_out

    def param_shapes(self):
        return {"weight": (self.fan_in, self.fan_out), "bias": (self.fan_out,)}

    def init_params(self, gen):
        self.params["weight"][...] = gen.normal(0.0, np.sqrt(2.0 / self.fan_in), (self.fan_in, self.fan_out))
        self.params["bias"][...] = 0.0

    def forward(self, x, train, gen):
        return x @ self.params["weight"] + self.params["bias"], x

    def backward(self, grad, cache, grads):
        grads["weight"][...] = cache.T @ grad
        grads["bias"][...] = grad.sum(axis=0)
        return grad @ self.params["weight"].T


class BatchNorm(Layer):
    """Batch normalisation over the feature axis 1 of ``(B, F)`` or ``(B, F, L)`` input."""

    name = "batchnorm"

    def __init__(self, features: int, eps: float = BN_EPS, momentum: float = BN_MOMENTUM) -> None:
        super().__init__()
        self.features = features
        self.eps = eps
        self.momentum = momentum
        self.running_mean = np.zeros(features)
        self.running_var = np.ones(features)

    def param_shapes(self):
        return {"gamma": (self.features,), "beta": (self.features,)}

    def init_params(self, gen):
        self.params["gamma"][...] = 1.0
        self.params["beta"][...] = 0.0

    def buffers(self):
        return [self.running_mean, self.running_var]

    def _broadcast(self, v: np.ndarray, ndim: int) -> np.ndarray:
        return v.reshape((1, -1) + (1,) * (ndim - 2))

    def forward(self, x, train, gen):
        axes = (0,) if x.ndim == 2 else (0, 2)
        gamma = self._broadcast(self.params["gamma"], x.ndim)
        beta = self._broadcast(self.params["beta"], x.ndim)
        if train:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            self.running_mean *= 1.0 - self.momentum
            self.running_mean += self.momentum * mean
            self.running_var *= 1.0 - self.momentum
            self.running_var += self.momentum * var
        else:
            mean, var = self.running_mean, self.running_var
        inv_std = self._broadcast(1.0 / np.sqrt(var + self.eps), x.ndim)
        x_hat = (x - self._broadcast(mean, x.ndim)) * inv_std
        return gamma * x_hat + beta, (x_hat, inv_std, axes, train)

    def backward(self, grad, cache, grads):
        x_hat, inv_std, axes, train = cache
        grads["gamma"][...] = (grad * x_hat).sum(axis=axes)
        grads["beta"][...] = grad.sum(axis=axes)
        d_hat = grad * self._broadcast(self.params["gamma"], grad.ndim)
        if not train:
            return d_hat * inv_std
        count = grad.size / self.features
        sum_d = d_hat.sum(axis=axes, keepdims=True)
        sum_dx = (d_hat * x_hat).sum(axis=axes, keepdims=True)
        return inv_std * (d_hat - sum_d / count - x_hat * sum_dx / count)


class ReLU(Layer):
    name = "relu"

    def forward(self, x, train, gen):
        mask = x > 0
        return x * mask, mask

    def backward(self, grad, cache, grads):
        return grad * cache


class Dropout(Layer):
    """Inverted dropout; a no-op in eval mode or at rate 0."""

    name = "dropout"

    def __init__(self, rate: float) -> None:
        super().__init__()
        self.rate = rate

    def forward(self, x, train, gen):
        if not train or self.rate == 0.0:
            return x, None
        if gen is None:
            raise ValidationError("train-mode dropout needs a random stream")
        mask = (gen.random(x.shape) >= self.rate) / (1.0 - self.rate)
        return x * mask, mask

    def backward(self, grad, cache, grads):
        return grad if cache is None else grad * cache


class Conv1d(Layer):
    """Same-padded 1-D convolution over ``(B, C_in, L)``."""

    name = "conv1d"

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int) -> None:
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.pad = kernel_size // 2

    def param_shapes(self):
        return {
            "weight": (self.out_channels, self.in_channels, self.kernel_size),
            "bias": (self.out_channels,),
        }

    def init_params(self, gen):
        fan_in = self.in_channels * self.kernel_size
        self.params["weight"][...] = gen.normal(0.0, np.sqrt(2.0 / fan_in), self.param_shapes()["weight"])
        self.params["bias"][...] = 0.0

    def forward(self, x, train, gen):
        padded = np.pad(x, ((0, 0), (0, 0), (self.pad, self.pad)))
        windows = sliding_window_view(padded, self.kernel_size, axis=2)
        out = np.tensordot(windows, self.params["weight"], axes=([1, 3], [1, 2]))
        out = out.transpose(0, 2, 1) + self.params["bias"][None, :, None]
        return out, (windows, x.shape)

    def backward(self, grad, cache, grads):
        windows, in_shape = cache
        length = in_shape[2]
        grads["weight"][...] = np.tensordot(grad, windows, axes=([0, 2], [0, 2]))
        grads["bias"][...] = grad.sum(axis=(0, 2))
        weight = self.params["weight"]
        d_padded = np.zeros((in_shape[0], in_shape[1], length + 2 * self.pad))
        for offset in range(self.kernel_size):
            d_padded[:, :, offset:offset + length] += np.einsum("oi,bol->bil", weight[:, :, offset], grad)
        return d_padded[:, :, self.pad:self.pad + length]


class MaxPool1d(Layer):
    """Non-overlapping max pooling; trailing steps that do not fill a window are dropped.

    Inputs shorter than one window pass through unchanged.
    """

    name = "maxpool"

    def __init__(self, size: int) -> None:
        super().__init__()
        self.size = size

    def forward(self, x, train, gen):
        batch, channels, length = x.shape
        out_length = length // self.size
        if out_length == 0 or self.size == 1:
            return x, None
        blocks = x[:, :, :out_length * self.size].reshape(batch, channels, out_length, self.size)
        index = blocks.argmax(axis=3)[..., None]
        return np.take_along_axis(blocks, index, axis=3)[..., 0], (index, x.shape)

    def backward(self, grad, cache, grads):
        if cache is None:
            return grad
        index, shape = cache
        batch, channels, length = shape
        out_length = grad.shape[2]
        blocks = np.zeros((batch, channels, out_length, self.size))
        np.put_along_axis(blocks, index, grad[..., None], axis=3)
        d_in = np.zeros(shape)
        d_in[:, :, :out_length * self.size] = blocks.reshape(batch, channels, -1)
        return d_in


class GlobalAvgPool(Layer):
    name = "avgpool"

    def forward(self, x, train, gen):
        return x.mean(axis=2), x.shape[2]

    def backward(self, grad, cache, grads):
        return np.repeat(grad[:, :, None] / cache, cache, axis=2)


def _mlp_layers(spec: ModelSpec) -> List[Layer]:
    layers: List[Layer] = [Flatten()]
    width = spec.length * spec.channels
    for size in spec.hidden_sizes():
        layers.append(Dense(width, size))
        if spec.batch_norm:
            layers.append(BatchNorm(size))
        layers.append(ReLU())
        layers.append(Dropout(spec.dropout))
        width = size
    layers.append(Dense(width, spec.num_classes))
    return layers


def _conv_layers(spec: ModelSpec) -> List[Layer]:
    layers: List[Layer] = [ChannelsFirst()]
    channels = spec.channels
    sizes = spec.conv_sizes()
    for block, size in enumerate(sizes):
        layers.append(Conv1d(channels, size, spec.kernel_size))
        if spec.batch_norm:
            layers.append(BatchNorm(size))
        layers.append(ReLU())
        if block < len(sizes) - 1:
            layers.append(MaxPool1d(spec.pool_size))
        channels = size
    layers.append(GlobalAvgPool())
    layers.append(Dense(channels, spec.num_classes))
    return layers


# --------------------------------------------------------------------------
# Model
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class _Slot:
    layer: int
    name: str
    shape: Tuple[int, ...]
    start: int
    stop: int


class Model:
    """A backbone with its flat parameter vector ``theta``."""

    def __init__(self, spec: ModelSpec, theta: Optional[np.ndarray] = None) -> None:
        self.spec = spec
        self.layers = _mlp_layers(spec) if spec.kind is ModelKind.MLP else _conv_layers(spec)
        self._slots: List[_Slot] = []
        offset = 0
        for index, layer in enumerate(self.layers):
            for name, shape in layer.param_shapes().items():
                size = int(np.prod(shape))
                self._slots.append(_Slot(index, name, shape, offset, offset + size))
                offset += size
        self.theta = np.zeros(offset)
        if theta is not None:
            if np.shape(theta) != (offset,):
                raise ValidationError(f"theta has shape {np.shape(theta)}, expected ({offset},)")
            self.theta[...] = theta
        for slot in self._slots:
            self.layers[slot.layer].params[slot.name] = self.theta[slot.start:slot.stop].reshape(slot.shape)

    @property
    def param_count(self) -> int:
        return int(self.theta.size)

    def grad_views(self, flat: np.ndarray) -> List[Dict[str, np.ndarray]]:
        """Per-layer dicts of views into ``flat`` laid out like ``theta``."""
        views: List[Dict[str, np.ndarray]] = [{} for _ in self.layers]
        for slot in self._slots:
            views[slot.layer][slot.name] = flat[slot.start:slot.stop].reshape(slot.shape)
        return views

    def named_parameters(self) -> Dict[str, np.ndarray]:
        """Views into ``theta`` keyed ``"<layer-index>.<layer-name>.<param>"``."""
        return {
            f"{slot.layer}.{self.layers[slot.layer].name}.{slot.name}": self.layers[slot.layer].params[slot.name]
            for slot in self._slots
        }

    def buffers(self) -> List[np.ndarray]:
        return [buffer for layer in self.layers for buffer in layer.buffers()]

    def buffer_vector(self) -> np.ndarray:
        buffers = self.buffers()
        return np.concatenate(buffers) if buffers else np.zeros(0)

    def load_buffer_vector(self, flat: np.ndarray) -> None:
        offset = 0
        for buffer in self.buffers():
            buffer[...] = flat[offset:offset + buffer.size]
            offset += buffer.size
        if offset != flat.size:
            raise ValidationError(f"buffer vector has {flat.size} values, expected {offset}")

    def snapshot(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.theta.copy(), self.buffer_vector()

    def restore(self, snapshot: Tuple[np.ndarray, np.ndarray]) -> None:
        theta, buffers = snapshot
        self.theta[...] = theta
        self.load_buffer_vector(buffers)

    def copy(self) -> "Model":
        clone = Model(self.spec, self.theta)
        clone.load_buffer_vector(self.buffer_vector())
        return clone


def expected_param_count(spec: ModelSpec) -> int:
    """Parameter count from the architecture formula."""
    bn = 2 if spec.batch_norm else 0
    if spec.kind is ModelKind.MLP:
        total, width = 0, spec.length * spec.channels
        for size in spec.hidden_sizes():
            total += width * size + size + bn * size
            width = size
        return total + width * spec.num_classes + spec.num_classes
    total, channels = 0, spec.channels
    for size in spec.conv_sizes():
        total += size * channels * spec.kernel_size + size + bn * size
        channels = size
    return total + channels * spec.num_classes + spec.num_classes


def build_model(spec: ModelSpec, rng: RngStream) -> Model:
    """Fresh model with He-normal weights, zero biases, unit batch-norm scales."""
    model = Model(spec)
    gen = rng.generator()
    for layer in model.layers:
        layer.init_params(gen)
    return model


@dataclass
class ForwardCache:
    train: bool
    layer_caches: List[object] = field(default_factory=list)


def forward(
    model: Model,
    batch: np.ndarray,
    mode: str = "eval",
    rng: Optional[RngStream] = None,
) -> Tuple[np.ndarray, ForwardCache]:
    """Run ``batch`` of shape ``(B, T, C)`` through the model.

    Args:
        model: Model to evaluate.
        batch: Input values.
        mode: ``"train"`` (batch statistics, dropout from ``rng``, running
            statistics updated) or ``"eval"`` (deterministic).
        rng: Stream for dropout masks; required in train mode when dropout > 0.

    Returns:
        ``(logits, cache)`` where the cache feeds :func:`backward`.
    """
    if mode not in ("train", "eval"):
        raise ValidationError(f"mode must be 'train' or 'eval', got {mode!r}")
    x = np.asarray(batch, dtype=np.float64)
    expected = (model.spec.length, model.spec.channels)
    if x.ndim != 3 or x.shape[1:] != expected:
        raise ValidationError(f"batch shape {x.shape} does not match model input (B, {expected[0]}, {expected[1]})")
    train = mode == "train"
    gen = rng.generator() if (train and rng is not None) else None
    cache = ForwardCache(train=train)
    for layer in model.layers:
        x, layer_cache = layer.forward(x, train, gen)
        cache.layer_caches.append(layer_cache)
    return x, cache


def backward(model: Model, cache: ForwardCache, grad_logits: np.ndarray) -> np.ndarray:
    """Gradient of the loss with respect to ``theta`` given ``d loss / d logits``."""
    gradient = np.zeros_like(model.theta)
    views = model.grad_views(gradient)
    grad = np.asarray(grad_logits, dtype=np.float64)
    for index in range(len(model.layers) - 1, -1, -1):
        grad = model.layers[index].backward(grad, cache.layer_caches[index], views[index])
    return gradient


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean softmax cross-entropy and its gradient with respect to ``logits``."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    batch = logits.shape[0]
    rows = np.arange(batch)
    loss = float(-log_probs[rows, labels].mean())
    grad = np.exp(log_probs)
    grad[rows, labels] -= 1.0
    return loss, grad / batch


# --------------------------------------------------------------------------
# Training
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    """Optimiser and schedule; defaults are the standard recipe (Adam, step decay)."""

    lr0: float = 1e-3
    lr_decay: float = 0.9
    decay_every: int = 5
    batch_size: int = 100
    epochs: int = 50
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: Optional[int] = None

    def __post_init__(self) -> None:
        if self.lr0 <= 0 or self.lr_decay <= 0 or self.adam_eps <= 0:
            raise ValidationError("lr0, lr_decay and adam_eps must be positive")
        if self.decay_every < 1 or self.batch_size < 1 or self.epochs < 1:
            raise ValidationError("decay_every, batch_size and epochs must be >= 1")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValidationError("Adam betas must lie in [0, 1)")

    def to_dict(self) -> Dict[str, object]:
        return {
            "lr0": self.lr0,
            "lr_decay": self.lr_decay,
            "decay_every": self.decay_every,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "adam_eps": self.adam_eps,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, object]) -> "TrainConfig":
        base = cls()
        seed = data.get("seed")
        return cls(
            lr0=float(data.get("lr0", base.lr0)),
            lr_decay=float(data.get("lr_decay", base.lr_decay)),
            decay_every=int(data.get("decay_every", base.decay_every)),
            batch_size=int(data.get("batch_size", base.batch_size)),
            epochs=int(data.get("epochs", base.epochs)),
            beta1=float(data.get("beta1", base.beta1)),
            beta2=float(data.get("beta2", base.beta2)),
            adam_eps=float(data.get("adam_eps", base.adam_eps)),
            seed=None if seed is None else int(seed),
        )


def lr_at_epoch(cfg: TrainConfig, epoch: int) -> float:
    """Learning rate for 0-based ``epoch``: ``lr0 * decay ** (epoch // decay_every)``."""
    return cfg.lr0 * cfg.lr_decay ** (epoch // cfg.decay_every)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def for_model(cls, model: Model) -> "AdamState":
        return cls(m=np.zeros_like(model.theta), v=np.zeros_like(model.theta))

    def copy(self) -> "AdamState":
        return AdamState(m=self.m.copy(), v=self.v.copy(), t=self.t)

    def step(self, theta: np.ndarray, grad: np.ndarray, lr: float, cfg: TrainConfig) -> None:
        """One bias-corrected Adam update of ``theta`` in place."""
        self.t += 1
        self.m *= cfg.beta1
        self.m += (1.0 - cfg.beta1) * grad
        self.v *= cfg.beta2
        self.v += (1.0 - cfg.beta2) * grad * grad
        m_hat = self.m / (1.0 - cfg.beta1**self.t)
        v_hat = self.v / (1.0 - cfg.beta2**self.t)
        theta -= lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)


BatchAugmenter = Callable[[np.ndarray, RngStream], np.ndarray]


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    train_accuracy: float
    val_loss: Optional[float]
    val_accuracy: Optional[float]


@dataclass
class TrainReport:
    """Per-epoch history; ``final_train_loss`` is the last epoch's mean batch loss."""

    epochs: List[EpochRecord] = field(default_factory=list)
    wall_time: float = field(default=0.0, compare=False)

    @property
    def final_train_loss(self) -> float:
        if not self.epochs:
            raise NumericError("training report has no epochs")
        return self.epochs[-1].train_loss

    @property
    def final_val_accuracy(self) -> Optional[float]:
        return self.epochs[-1].val_accuracy if self.epochs else None


@dataclass(frozen=True)
class EvalResult:
    accuracy: float
    loss: float


def evaluate(model: Model, d: Dataset, batch_size: int = 500) -> EvalResult:
    """Eval-mode accuracy and mean cross-entropy over ``d``."""
    if not len(d):
        raise ValidationError("cannot evaluate on an empty dataset")
    correct, loss_sum = 0, 0.0
    values, labels = d.values, d.labels
    for start in range(0, len(d), batch_size):
        logits, _ = forward(model, values[start:start + batch_size], "eval")
        batch_labels = labels[start:start + batch_size]
        loss, _ = cross_entropy(logits, batch_labels)
        loss_sum += loss * len(batch_labels)
        correct += int((logits.argmax(axis=1) == batch_labels).sum())
    return EvalResult(accuracy=correct / len(d), loss=loss_sum / len(d))


def predict(model: Model, values: np.ndarray) -> np.ndarray:
    logits, _ = forward(model, values, "eval")
    return logits.argmax(axis=1)


# Child indices of a training run's stream.
_SHUFFLE_STREAM = 0
_DROPOUT_STREAM = 1
_AUGMENT_STREAM = 2


def train_step(
    model: Model,
    optimizer: AdamState,
    values: np.ndarray,
    labels: np.ndarray,
    lr: float,
    cfg: TrainConfig,
    dropout_rng: Optional[RngStream],
) -> Tuple[float, int]:
    """One forward/backward/Adam step; returns ``(loss, correct)``.

    Raises:
        NumericError: If the loss or gradient is non-finite. The model and
            optimizer are left exactly as they were.
    """
    snapshot = model.snapshot()
    logits, cache = forward(model, values, "train", dropout_rng)
    loss, grad_logits = cross_entropy(logits, labels)
    gradient = backward(model, cache, grad_logits) if np.isfinite(loss) else None
    if gradient is None or not np.all(np.isfinite(gradient)):
        model.restore(snapshot)
        raise NumericError(f"non-finite training loss ({loss})")
    optimizer.step(model.theta, gradient, lr, cfg)
    correct = int((logits.argmax(axis=1) == labels).sum())
    return loss, correct


def train(
    model: Model,
    train_set: Dataset,
    val_set: Optional[Dataset],
    cfg: TrainConfig,
    augmenter: Optional[BatchAugmenter] = None,
    rng: Optional[RngStream] = None,
) -> TrainReport:
    """Train ``model`` in place with Adam, the step-decay schedule and cross-entropy.

    Each epoch reshuffles the training set; ``augmenter`` (if any) receives
    every training batch before the forward pass, together with its own
    derived stream, so augmenting never perturbs the shuffling or dropout
    streams.
    """
    if not len(train_set):
        raise ValidationError("training set is empty")
    if train_set.shape != (model.spec.length, model.spec.channels):
        raise ValidationError(f"training data shape {train_set.shape} does not match the model")
    rng = rng or RngStream(cfg.seed if cfg.seed is not None else fresh_seed())
    shuffle_root = derive_stream(rng, _SHUFFLE_STREAM)
    dropout_root = derive_stream(rng, _DROPOUT_STREAM)
    augment_root = derive_stream(rng, _AUGMENT_STREAM)
    optimizer = AdamState.for_model(model)
    report = TrainReport()
    started = time.perf_counter()
    values, labels = train_set.values, train_set.labels
    for epoch in range(cfg.epochs):
        lr = lr_at_epoch(cfg, epoch)
        order = derive_stream(shuffle_root, epoch).generator().permutation(len(train_set))
        batch_losses: List[float] = []
        correct = 0
        for batch_index, start in enumerate(range(0, len(order), cfg.batch_size)):
            index = order[start:start + cfg.batch_size]
            batch = values[index]
            if augmenter is not None:
                batch = augmenter(batch, derive_stream(derive_stream(augment_root, epoch), batch_index))
            dropout_rng = derive_stream(derive_stream(dropout_root, epoch), batch_index)
            try:
                loss, hits = train_step(model, optimizer, batch, labels[index], lr, cfg, dropout_rng)
            except NumericError as exc:
                raise NumericError(f"{exc} at epoch {epoch}, batch {batch_index}") from exc
            batch_losses.append(loss)
            correct += hits
        val_loss = val_accuracy = None
        if val_set is not None and len(val_set):
            result = evaluate(model, val_set)
            val_loss, val_accuracy = result.loss, result.accuracy
        record = EpochRecord(
            epoch=epoch,
            lr=lr,
            train_loss=float(np.mean(batch_losses)),
            train_accuracy=correct / len(order),
            val_loss=val_loss,
            val_accuracy=val_accuracy,
        )
        report.epochs.append(record)
        logger.debug(
            "epoch %d lr=%.3g loss=%.4f acc=%.3f val_acc=%s",
            epoch, lr, record.train_loss, record.train_accuracy, val_accuracy,
        )
    report.wall_time = time.perf_counter() - started
    return report


# --------------------------------------------------------------------------
# Checkpoints
# --------------------------------------------------------------------------


def save_checkpoint(model: Model, path: Path) -> None:
    """Write ``model`` in the flat binary layout.

    Layout: 8 magic bytes ``TSAUGCK1``; little-endian uint32 version; uint32
    byte length of a UTF-8 JSON architecture descriptor; the descriptor;
    ``param_count`` little-endian float64 parameters; the batch-norm running
    statistics as little-endian float64.
    """
    buffers = model.buffer_vector()
    descriptor = json.dumps(
        {"spec": model.spec.to_dict(), "param_count": model.param_count, "buffer_count": int(buffers.size)},
        sort_keys=True,
    ).encode("utf-8")
    with Path(path).open("wb") as handle:
        handle.write(CHECKPOINT_MAGIC)
        handle.write(struct.pack("<II", CHECKPOINT_VERSION, len(descriptor)))
        handle.write(descriptor)
        handle.write(model.theta.astype("<f8").tobytes())
        handle.write(buffers.astype("<f8").tobytes())


def load_checkpoint(path: Path) -> Model:
    raw = Path(path).read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise ValidationError(f"{path} is not a tsaug checkpoint")
    version, length = struct.unpack("<II", raw[8:16])
    if version != CHECKPOINT_VERSION:
        raise ValidationError(f"unsupported checkpoint version {version}")
    descriptor = json.loads(raw[16:16 + length].decode("utf-8"))
    offset = 16 + length
    count = int(descriptor["param_count"])
    buffer_count = int(descriptor["buffer_count"])
    payload = np.frombuffer(raw, dtype="<f8", count=count + buffer_count, offset=offset)
    model = Model(ModelSpec.from_dict(descriptor["spec"]), payload[:count].astype(np.float64))
    model.load_buffer_vector(payload[count:].astype(np.float64))
    return model
