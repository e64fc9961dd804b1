"""Learned augmentation policies searched jointly with the model.

A policy holds ``K`` sub-policies of ``J`` operations each. Every operation
carries two logits: ``p_logit`` (probability of firing, ``sigmoid(p_logit)``)
and ``m_logit`` (mean magnitude level, ``30 * sigmoid(m_logit)``). Sub-policy
selection follows ``softmax(weights)``.

Per sample, one sub-policy is drawn, each of its operations fires
independently, and each fired operation draws its level from
``Normal(mean level, 3^2)`` (clipped to ``[0, 30]`` only when applied). The
draw is recorded as a :class:`PolicyTrace`; the policy is trained with the
score-function estimator ``grad log p(trace) * advantage``, where the
advantage is the negated validation loss minus an exponential moving average
of it.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit, log_softmax, softmax

from .augmentations import (
    AugOpKind,
    SampleFn,
    apply_op,
    fit_params_to_length,
    params_for_level,
    parse_op_kind,
)
from .errors import NumericError, ValidationError
from .magnitudes import MagnitudeTable, default_magnitude_table
from .model_zoo import (
    AdamState,
    Model,
    ModelSpec,
    TrainConfig,
    build_model,
    cross_entropy,
    evaluate,
    forward,
    lr_at_epoch,
    train_step,
)
from .series_core import Dataset, RngStream, TimeSeries, derive_stream

logger = logging.getLogger(__name__)

POLICY_VERSION = 1
MAX_LEVEL = 30.0
INITIAL_PROBABILITY = 0.5
INITIAL_LEVEL = 15.0
MAX_ENUMERATED_TRACES = 4096


@dataclass(frozen=True)
class PolicyOp:
    kind: AugOpKind
    p_logit: float
    m_logit: float

    @property
    def probability(self) -> float:
        return float(expit(self.p_logit))

    @property
    def level(self) -> float:
        return float(MAX_LEVEL * expit(self.m_logit))


@dataclass(frozen=True)
class SubPolicy:
    ops: Tuple[PolicyOp, ...]


class Policy:
    """``K`` sub-policies of ``J`` ops; logits stored as ``(K,)`` and ``(K, J)`` arrays."""

    def __init__(
        self,
        kinds: Sequence[Sequence[AugOpKind]],
        weights: Optional[np.ndarray] = None,
        p_logits: Optional[np.ndarray] = None,
        m_logits: Optional[np.ndarray] = None,
    ) -> None:
        self.kinds: Tuple[Tuple[AugOpKind, ...], ...] = tuple(tuple(row) for row in kinds)
        if not self.kinds:
            raise ValidationError("policy needs at least one sub-policy")
        widths = {len(row) for row in self.kinds}
        if len(widths) != 1 or 0 in widths:
            raise ValidationError("every sub-policy needs the same number J >= 1 of ops")
        shape = (self.num_subpolicies, self.ops_per_subpolicy)
        self.weights = np.zeros(shape[0]) if weights is None else np.array(weights, dtype=np.float64)
        self.p_logits = np.zeros(shape) if p_logits is None else np.array(p_logits, dtype=np.float64)
        self.m_logits = np.zeros(shape) if m_logits is None else np.array(m_logits, dtype=np.float64)
        if self.weights.shape != (shape[0],) or self.p_logits.shape != shape or self.m_logits.shape != shape:
            raise ValidationError(f"policy logits must have shapes ({shape[0]},) and {shape}")
        if np.any(np.isnan(self.weights)) or np.any(np.isnan(self.p_logits)) or np.any(np.isnan(self.m_logits)):
            raise ValidationError("policy logits must not be NaN")

    @property
    def num_subpolicies(self) -> int:
        return len(self.kinds)

    @property
    def ops_per_subpolicy(self) -> int:
        return len(self.kinds[0])

    def selection_probs(self) -> np.ndarray:
        return softmax(self.weights)

    def op_probs(self) -> np.ndarray:
        return expit(self.p_logits)

    def op_levels(self) -> np.ndarray:
        return MAX_LEVEL * expit(self.m_logits)

    @property
    def subpolicies(self) -> List[SubPolicy]:
        return [
            SubPolicy(
                ops=tuple(
                    PolicyOp(kind, float(self.p_logits[k, j]), float(self.m_logits[k, j]))
                    for j, kind in enumerate(row)
                )
            )
            for k, row in enumerate(self.kinds)
        ]

    def copy(self) -> "Policy":
        return Policy(self.kinds, self.weights, self.p_logits, self.m_logits)


def init_policy(
    num_ops: int,
    num_subpolicies: int,
    pool: Sequence[AugOpKind],
    rng: RngStream,
) -> Policy:
    """Random sub-policies over ``pool`` with uniform selection, p = 0.5 and level 15.

    Args:
        num_ops: Ops per sub-policy, ``J``.
        num_subpolicies: Sub-policy count, ``K``.
        pool: Operation kinds to draw from, uniformly with replacement.
        rng: Stream for the kind draws.
    """
    if num_ops < 1 or num_subpolicies < 1:
        raise ValidationError(f"need J >= 1 and K >= 1, got J={num_ops}, K={num_subpolicies}")
    pool = tuple(pool)
    if not pool:
        raise ValidationError("operation pool must not be empty")
    picks = rng.generator().integers(0, len(pool), size=(num_subpolicies, num_ops))
    kinds = [[pool[int(i)] for i in row] for row in picks]
    return Policy(kinds)


@dataclass(frozen=True)
class PolicyTrace:
    """One draw: the sub-policy, which ops fired and their unclipped levels."""

    subpolicy: int
    applied: Tuple[bool, ...]
    levels: Tuple[float, ...]


def _trace_from_uniforms(
    policy: Policy, pick: float, fire: np.ndarray, noise: np.ndarray, magnitude_std: float
) -> PolicyTrace:
    cumulative = np.cumsum(policy.selection_probs())
    k = int(min(np.searchsorted(cumulative, pick * cumulative[-1], side="right"), policy.num_subpolicies - 1))
    applied = fire < policy.op_probs()[k]
    levels = policy.op_levels()[k] + magnitude_std * noise
    return PolicyTrace(k, tuple(bool(a) for a in applied), tuple(float(v) for v in levels))


def draw_trace(policy: Policy, rng: RngStream, magnitude_std: float = 3.0) -> PolicyTrace:
    gen = rng.generator()
    pick = gen.random()
    fire = gen.random(policy.ops_per_subpolicy)
    noise = gen.standard_normal(policy.ops_per_subpolicy)
    return _trace_from_uniforms(policy, pick, fire, noise, magnitude_std)


def draw_traces(policy: Policy, rng: RngStream, count: int, magnitude_std: float = 3.0) -> List[PolicyTrace]:
    """``count`` traces from a single generator, for statistics over many draws."""
    gen = rng.generator()
    j = policy.ops_per_subpolicy
    picks = gen.random(count)
    fires = gen.random((count, j))
    noise = gen.standard_normal((count, j))
    return [_trace_from_uniforms(policy, picks[i], fires[i], noise[i], magnitude_std) for i in range(count)]


def apply_trace(
    policy: Policy,
    x: TimeSeries,
    trace: PolicyTrace,
    rng: RngStream,
    table: Optional[MagnitudeTable] = None,
) -> TimeSeries:
    """Apply the fired ops of ``trace`` in order; op ``j`` draws from child stream ``j``."""
    out = x
    for j, kind in enumerate(policy.kinds[trace.subpolicy]):
        if not trace.applied[j]:
            continue
        level = float(np.clip(trace.levels[j], 0.0, MAX_LEVEL))
        params = fit_params_to_length(kind, params_for_level(kind, level, table), x.length)
        out = apply_op(kind, out, params, derive_stream(rng, j))
    return out


def sample_and_apply(
    policy: Policy,
    x: TimeSeries,
    rng: RngStream,
    *,
    table: Optional[MagnitudeTable] = None,
    magnitude_std: float = 3.0,
) -> Tuple[TimeSeries, PolicyTrace]:
    """Draw a trace from child stream 0 and apply it with child stream 1."""
    trace = draw_trace(policy, derive_stream(rng, 0), magnitude_std)
    return apply_trace(policy, x, trace, derive_stream(rng, 1), table), trace


def policy_sample_fn(policy: Policy, table: Optional[MagnitudeTable] = None, magnitude_std: float = 3.0) -> SampleFn:
    """Frozen-policy augmentation usable wherever a per-sample function is expected."""
    frozen = policy.copy()
    return lambda x, rng: sample_and_apply(frozen, x, rng, table=table, magnitude_std=magnitude_std)[0]


@dataclass
class PolicyGradient:
    weights: np.ndarray
    p_logits: np.ndarray
    m_logits: np.ndarray

    @classmethod
    def zeros(cls, policy: Policy) -> "PolicyGradient":
        return cls(
            np.zeros_like(policy.weights),
            np.zeros_like(policy.p_logits),
            np.zeros_like(policy.m_logits),
        )

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.weights, self.p_logits.ravel(), self.m_logits.ravel()])


def log_prob(policy: Policy, trace: PolicyTrace, magnitude_std: float = 3.0) -> float:
    """Log-probability (density for the levels) of ``trace`` under ``policy``."""
    k = trace.subpolicy
    total = float(log_softmax(policy.weights)[k])
    for j, fired in enumerate(trace.applied):
        logit = policy.p_logits[k, j]
        # log sigmoid(z) = -log(1 + exp(-z))
        total += float(-np.logaddexp(0.0, -logit) if fired else -np.logaddexp(0.0, logit))
        if fired:
            mean = MAX_LEVEL * expit(policy.m_logits[k, j])
            z = (trace.levels[j] - mean) / magnitude_std
            total += float(-0.5 * z * z - np.log(magnitude_std * np.sqrt(2.0 * np.pi)))
    return total


def log_prob_gradient(policy: Policy, trace: PolicyTrace, magnitude_std: float = 3.0) -> PolicyGradient:
    """Analytic gradient of :func:`log_prob` with respect to every logit."""
    grad = PolicyGradient.zeros(policy)
    k = trace.subpolicy
    grad.weights[:] = -policy.selection_probs()
    grad.weights[k] += 1.0
    probs = policy.op_probs()[k]
    applied = np.array(trace.applied, dtype=np.float64)
    grad.p_logits[k] = applied - probs
    squashed = expit(policy.m_logits[k])
    mean = MAX_LEVEL * squashed
    slope = MAX_LEVEL * squashed * (1.0 - squashed)
    grad.m_logits[k] = applied * (np.array(trace.levels) - mean) / magnitude_std**2 * slope
    return grad


def score_function_gradient(
    policy: Policy,
    traces: Sequence[PolicyTrace],
    advantages: float | Sequence[float],
    magnitude_std: float = 3.0,
    *,
    reduction: str = "mean",
) -> PolicyGradient:
    """Mean (or sum) of ``grad log p(trace) * advantage`` over ``traces``.

    ``advantages`` is either one value shared by every trace or one per trace.
    """
    if reduction not in ("mean", "sum"):
        raise ValidationError(f"reduction must be 'mean' or 'sum', got {reduction!r}")
    if not traces:
        raise ValidationError("need at least one trace")
    scale = np.broadcast_to(np.asarray(advantages, dtype=np.float64), (len(traces),))
    total = PolicyGradient.zeros(policy)
    for trace, advantage in zip(traces, scale):
        if advantage == 0.0:
            continue
        grad = log_prob_gradient(policy, trace, magnitude_std)
        total.weights += advantage * grad.weights
        total.p_logits += advantage * grad.p_logits
        total.m_logits += advantage * grad.m_logits
    if reduction == "sum":
        return total
    count = float(len(traces))
    return PolicyGradient(total.weights / count, total.p_logits / count, total.m_logits / count)


def exact_selection_gradient(
    policy: Policy,
    reward: Callable[[int, Tuple[bool, ...]], float],
) -> PolicyGradient:
    """Exact gradient of ``E[reward(k, applied)]`` by enumerating every trace.

    Only the selection and firing terms are covered; ``m_logits`` entries are
    zero. Enumeration is limited to ``K * 2**J <= 4096`` traces.
    """
    k_count, j_count = policy.num_subpolicies, policy.ops_per_subpolicy
    if k_count * 2**j_count > MAX_ENUMERATED_TRACES:
        raise ValidationError(f"too many traces to enumerate for K={k_count}, J={j_count}")
    selection = policy.selection_probs()
    fire = policy.op_probs()
    grad = PolicyGradient.zeros(policy)
    for k in range(k_count):
        for applied in itertools.product((False, True), repeat=j_count):
            mask = np.array(applied, dtype=np.float64)
            p_fire = float(np.prod(np.where(mask > 0, fire[k], 1.0 - fire[k])))
            weight = selection[k] * p_fire * reward(k, tuple(applied))
            onehot = -selection.copy()
            onehot[k] += 1.0
            grad.weights += weight * onehot
            grad.p_logits[k] += weight * (mask - fire[k])
    return grad


# --------------------------------------------------------------------------
# Joint search
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SearchConfig:
    num_subpolicies: int = 14
    ops_per_subpolicy: int = 2
    policy_lr: float = 0.05
    baseline_decay: float = 0.9
    magnitude_std: float = 3.0
    val_batch_size: int = 100
    pool: Tuple[AugOpKind, ...] = tuple(AugOpKind)
    normalize_advantage: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "pool", tuple(self.pool))
        if self.num_subpolicies < 1 or self.ops_per_subpolicy < 1:
            raise ValidationError("num_subpolicies and ops_per_subpolicy must be >= 1")
        if self.policy_lr <= 0 or self.magnitude_std <= 0 or self.val_batch_size < 1:
            raise ValidationError("policy_lr, magnitude_std and val_batch_size must be positive")
        if not 0.0 <= self.baseline_decay < 1.0:
            raise ValidationError(f"baseline_decay must lie in [0, 1), got {self.baseline_decay}")
        if not self.pool:
            raise ValidationError("operation pool must not be empty")

    def to_dict(self) -> Dict[str, object]:
        return {
            "num_subpolicies": self.num_subpolicies,
            "ops_per_subpolicy": self.ops_per_subpolicy,
            "policy_lr": self.policy_lr,
            "baseline_decay": self.baseline_decay,
            "magnitude_std": self.magnitude_std,
            "val_batch_size": self.val_batch_size,
            "pool": [kind.value for kind in self.pool],
            "normalize_advantage": self.normalize_advantage,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, object]) -> "SearchConfig":
        base = cls()
        pool = data.get("pool")
        return cls(
            num_subpolicies=int(data.get("num_subpolicies", base.num_subpolicies)),
            ops_per_subpolicy=int(data.get("ops_per_subpolicy", base.ops_per_subpolicy)),
            policy_lr=float(data.get("policy_lr", base.policy_lr)),
            baseline_decay=float(data.get("baseline_decay", base.baseline_decay)),
            magnitude_std=float(data.get("magnitude_std", base.magnitude_std)),
            val_batch_size=int(data.get("val_batch_size", base.val_batch_size)),
            pool=tuple(parse_op_kind(str(name)) for name in pool) if pool else base.pool,
            normalize_advantage=bool(data.get("normalize_advantage", base.normalize_advantage)),
        )


@dataclass
class SearchState:
    """Mutable state carried between policy steps."""

    optimizer: AdamState
    baseline: Optional[float] = None
    advantage_sq: Optional[float] = None
    steps: int = 0


@dataclass(frozen=True)
class StepStats:
    train_loss: float
    val_loss: float
    advantage: float
    baseline: float
    scaled_advantage: float = 0.0


def scale_advantage(advantage: float, state: SearchState, decay: float) -> float:
    """Divide by a running RMS of past advantages; updates ``state.advantage_sq``.

    The running mean square includes the current advantage, so the result lies
    within ``+-1 / sqrt(1 - decay)``.
    """
    if advantage == 0.0:
        return 0.0
    square = advantage * advantage
    if state.advantage_sq is None:
        state.advantage_sq = square
    else:
        state.advantage_sq = decay * state.advantage_sq + (1.0 - decay) * square
    return advantage / float(np.sqrt(state.advantage_sq))


def policy_step(
    policy: Policy,
    model: Model,
    train_batch: Tuple[np.ndarray, np.ndarray],
    val_batch: Tuple[np.ndarray, np.ndarray],
    state: SearchState,
    rng: RngStream,
    *,
    lr: float,
    train_cfg: TrainConfig,
    search_cfg: SearchConfig,
    table: Optional[MagnitudeTable] = None,
) -> StepStats:
    """One joint update of the model and the policy.

    The train batch is augmented sample by sample (sample ``i`` uses child
    ``i`` of child stream 0), the model takes one Adam step on it, and the
    policy moves along the score-function gradient summed over the batch's
    traces and scaled by ``-(val_loss - baseline)``. With
    ``normalize_advantage`` the advantage is first divided by its running
    RMS, so ``policy_lr`` is a step size in logits per unit score regardless
    of the loss scale. The first step only seeds the baseline.

    Raises:
        NumericError: If the train or validation loss is non-finite. Model,
            optimizer, policy and baseline are left untouched.
    """
    values, labels = train_batch
    augment_root = derive_stream(rng, 0)
    traces: List[PolicyTrace] = []
    rows = []
    for index, row in enumerate(values):
        augmented, trace = sample_and_apply(
            policy, TimeSeries(values=row), derive_stream(augment_root, index),
            table=table, magnitude_std=search_cfg.magnitude_std,
        )
        rows.append(augmented.values)
        traces.append(trace)
    optimizer_before = state.optimizer.copy()
    snapshot = model.snapshot()
    train_loss, _ = train_step(model, state.optimizer, np.stack(rows), labels, lr, train_cfg, derive_stream(rng, 1))
    val_logits, _ = forward(model, val_batch[0], "eval")
    val_loss, _ = cross_entropy(val_logits, val_batch[1])
    if not np.isfinite(val_loss):
        model.restore(snapshot)
        state.optimizer = optimizer_before
        raise NumericError(f"non-finite validation loss ({val_loss})")

    baseline = val_loss if state.baseline is None else state.baseline
    advantage = -(val_loss - baseline)
    scaled = advantage
    if search_cfg.normalize_advantage:
        scaled = scale_advantage(advantage, state, search_cfg.baseline_decay)
    grad = score_function_gradient(policy, traces, scaled, search_cfg.magnitude_std, reduction="sum")
    policy.weights += search_cfg.policy_lr * grad.weights
    policy.p_logits += search_cfg.policy_lr * grad.p_logits
    policy.m_logits += search_cfg.policy_lr * grad.m_logits
    state.baseline = search_cfg.baseline_decay * baseline + (1.0 - search_cfg.baseline_decay) * val_loss
    state.steps += 1
    return StepStats(
        train_loss=train_loss, val_loss=val_loss, advantage=advantage, baseline=state.baseline, scaled_advantage=scaled
    )


@dataclass(frozen=True)
class TrajectorySnapshot:
    epoch: int
    selection: np.ndarray
    op_probs: np.ndarray
    op_levels: np.ndarray


@dataclass
class PolicyTrajectory:
    """Policy snapshots: epoch 0 is the initial policy, epoch ``e`` follows ``e`` completed epochs."""

    snapshots: List[TrajectorySnapshot] = field(default_factory=list)

    def record(self, epoch: int, policy: Policy) -> None:
        self.snapshots.append(
            TrajectorySnapshot(
                epoch=epoch,
                selection=policy.selection_probs(),
                op_probs=policy.op_probs(),
                op_levels=policy.op_levels(),
            )
        )


def export_trajectory(trajectory: PolicyTrajectory) -> np.ndarray:
    """``(snapshots, K)`` matrix of selection probabilities; each row sums to 1."""
    if not trajectory.snapshots:
        return np.zeros((0, 0))
    return np.stack([snapshot.selection for snapshot in trajectory.snapshots])


@dataclass
class SearchResult:
    policy: Policy
    model: Model
    trajectory: PolicyTrajectory
    steps: List[StepStats]
    test_accuracy: Optional[float] = None


StepCallback = Callable[[int, int, Policy], None]


def search_policy(
    train_set: Dataset,
    val_set: Dataset,
    spec: ModelSpec,
    train_cfg: TrainConfig,
    search_cfg: SearchConfig,
    rng: RngStream,
    *,
    policy: Optional[Policy] = None,
    table: Optional[MagnitudeTable] = None,
    on_step: Optional[StepCallback] = None,
) -> SearchResult:
    """Train a fresh model and the policy jointly for ``train_cfg.epochs`` epochs.

    Validation batches of ``search_cfg.val_batch_size`` are cycled through
    ``val_set`` in order, one per training batch.
    """
    if not len(train_set) or not len(val_set):
        raise ValidationError("policy search needs non-empty train and validation sets")
    table = table or default_magnitude_table()
    model = build_model(spec, derive_stream(rng, 0))
    if policy is None:
        policy = init_policy(
            search_cfg.ops_per_subpolicy, search_cfg.num_subpolicies, search_cfg.pool, derive_stream(rng, 1)
        )
    shuffle_root = derive_stream(rng, 2)
    step_root = derive_stream(rng, 3)
    state = SearchState(optimizer=AdamState.for_model(model))
    trajectory = PolicyTrajectory()
    trajectory.record(0, policy)
    steps: List[StepStats] = []
    values, labels = train_set.values, train_set.labels
    val_values, val_labels = val_set.values, val_set.labels
    val_size = min(search_cfg.val_batch_size, len(val_set))
    val_cursor = 0
    for epoch in range(train_cfg.epochs):
        lr = lr_at_epoch(train_cfg, epoch)
        order = derive_stream(shuffle_root, epoch).generator().permutation(len(train_set))
        epoch_root = derive_stream(step_root, epoch)
        for batch_index, start in enumerate(range(0, len(order), train_cfg.batch_size)):
            index = order[start:start + train_cfg.batch_size]
            val_index = (val_cursor + np.arange(val_size)) % len(val_set)
            val_cursor = int((val_cursor + val_size) % len(val_set))
            try:
                stats = policy_step(
                    policy, model, (values[index], labels[index]), (val_values[val_index], val_labels[val_index]),
                    state, derive_stream(epoch_root, batch_index),
                    lr=lr, train_cfg=train_cfg, search_cfg=search_cfg, table=table,
                )
            except NumericError as exc:
                logger.warning("policy step rejected at epoch %d, batch %d: %s", epoch, batch_index, exc)
                raise
            steps.append(stats)
            if on_step is not None:
                on_step(epoch, batch_index, policy)
        trajectory.record(epoch + 1, policy)
        logger.debug("search epoch %d selection=%s", epoch, np.round(policy.selection_probs(), 4).tolist())
    return SearchResult(policy=policy, model=model, trajectory=trajectory, steps=steps)


def evaluate_search(result: SearchResult, test_set: Dataset) -> SearchResult:
    result.test_accuracy = evaluate(result.model, test_set).accuracy
    return result


def policy_to_dict(policy: Policy) -> Dict[str, object]:
    return {
        "version": POLICY_VERSION,
        "weights": [float(w) for w in policy.weights],
        "subpolicies": [
            {"ops": [{"kind": op.kind.value, "p_logit": op.p_logit, "m_logit": op.m_logit} for op in sub.ops]}
            for sub in policy.subpolicies
        ],
    }


def policy_from_dict(data: Dict[str, object]) -> Policy:
    version = int(data.get("version", POLICY_VERSION))
    if version != POLICY_VERSION:
        raise ValidationError(f"unsupported policy version {version}")
    subpolicies = data.get("subpolicies") or []
    try:
        kinds = [[parse_op_kind(str(op["kind"])) for op in sub["ops"]] for sub in subpolicies]
        p_logits = [[float(op["p_logit"]) for op in sub["ops"]] for sub in subpolicies]
        m_logits = [[float(op["m_logit"]) for op in sub["ops"]] for sub in subpolicies]
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed policy document: {exc}") from exc
    return Policy(kinds, np.array(data.get("weights", []), dtype=np.float64), np.array(p_logits), np.array(m_logits))
