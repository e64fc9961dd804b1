"""The eight basic time-series transforms and their composition.

Every transform is a pure function ``(TimeSeries, OpParams, RngStream) ->
TimeSeries``: shape and label are preserved, and the output depends only on
its arguments.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ValidationError
from .magnitudes import MagnitudeTable, default_magnitude_table
from .series_core import Dataset, RngStream, TimeSeries, derive_stream
from .spline import eval_spline, fit_natural_cubic, interp_rows, resample_values

logger = logging.getLogger(__name__)

MIN_WARP_SPEED = 0.01
DEFAULT_KNOTS = 4


class AugOpKind(Enum):
    """The eight augmentation operations."""

    JITTER = "jitter"
    SCALE = "scale"
    ROTATE = "rotate"
    PERMUTE = "permute"
    MAGNITUDE_WARP = "magnitude_warp"
    TIME_WARP = "time_warp"
    WINDOW_SLICE = "window_slice"
    WINDOW_WARP = "window_warp"

    def to_display_name(self) -> str:
        return self.value.replace("_", " ").title()


_KIND_ALIASES: Dict[str, AugOpKind] = {
    "jitter": AugOpKind.JITTER,
    "jittering": AugOpKind.JITTER,
    "noise": AugOpKind.JITTER,
    "scale": AugOpKind.SCALE,
    "scaling": AugOpKind.SCALE,
    "rotate": AugOpKind.ROTATE,
    "rotation": AugOpKind.ROTATE,
    "flip": AugOpKind.ROTATE,
    "permute": AugOpKind.PERMUTE,
    "permutation": AugOpKind.PERMUTE,
    "magnitude_warp": AugOpKind.MAGNITUDE_WARP,
    "magwarp": AugOpKind.MAGNITUDE_WARP,
    "mag_warp": AugOpKind.MAGNITUDE_WARP,
    "time_warp": AugOpKind.TIME_WARP,
    "timewarp": AugOpKind.TIME_WARP,
    "window_slice": AugOpKind.WINDOW_SLICE,
    "windowslice": AugOpKind.WINDOW_SLICE,
    "slice": AugOpKind.WINDOW_SLICE,
    "window_warp": AugOpKind.WINDOW_WARP,
    "windowwarp": AugOpKind.WINDOW_WARP,
}


def parse_op_kind(name: str) -> AugOpKind:
    """Map a user-facing name (``"magwarp"``, ``"Time-Warp"``, ...) to an :class:`AugOpKind`."""
    normalized = (name or "").strip().lower().replace("-", "_").replace(" ", "_")
    kind = _KIND_ALIASES.get(normalized)
    if kind is None:
        known = ", ".join(sorted({k.value for k in AugOpKind}))
        raise ValidationError(f"unknown augmentation {name!r}; expected one of {known}")
    return kind


@dataclass(frozen=True)
class OpParams:
    """Magnitude parameters; each operation reads only the fields it needs.

    Attributes:
        sigma: Noise std for jitter, factor/knot std for scale and the warps.
        num_segments: Segment count N for permute.
        equal_sized: Permute with near-equal segments instead of random cuts.
        num_knots: Spline knot count I for the warps.
        window_frac: Window length as a fraction of T for the window ops.
        stretch: Window-warp factor K.
    """

    sigma: float = 0.0
    num_segments: int = 1
    equal_sized: bool = True
    num_knots: int = DEFAULT_KNOTS
    window_frac: float = 1.0
    stretch: float = 2.0

    def to_dict(self) -> Dict[str, object]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, object]) -> "OpParams":
        base = cls()
        return cls(
            sigma=float(data.get("sigma", base.sigma)),
            num_segments=int(data.get("num_segments", base.num_segments)),
            equal_sized=bool(data.get("equal_sized", base.equal_sized)),
            num_knots=int(data.get("num_knots", base.num_knots)),
            window_frac=float(data.get("window_frac", base.window_frac)),
            stretch=float(data.get("stretch", base.stretch)),
        )

    def describe(self, kind: AugOpKind) -> str:
        """Compact ``name=value`` rendering of the fields ``kind`` uses."""
        fields = _PARAM_FIELDS[kind]
        return ";".join(f"{name}={getattr(self, name)!r}" for name in fields)


_PARAM_FIELDS: Dict[AugOpKind, Tuple[str, ...]] = {
    AugOpKind.JITTER: ("sigma",),
    AugOpKind.SCALE: ("sigma",),
    AugOpKind.ROTATE: (),
    AugOpKind.PERMUTE: ("num_segments", "equal_sized"),
    AugOpKind.MAGNITUDE_WARP: ("sigma", "num_knots"),
    AugOpKind.TIME_WARP: ("sigma", "num_knots"),
    AugOpKind.WINDOW_SLICE: ("window_frac",),
    AugOpKind.WINDOW_WARP: ("window_frac", "stretch"),
}


def _round_half_up(value: float) -> int:
    return int(np.floor(value + 0.5))


def _check_sigma(params: OpParams) -> None:
    if not np.isfinite(params.sigma) or params.sigma < 0:
        raise ValidationError(f"sigma must be >= 0, got {params.sigma}")


def _check_knots(params: OpParams) -> None:
    if params.num_knots < 2:
        raise ValidationError(f"num_knots must be >= 2, got {params.num_knots}")


def _window_length(frac: float, length: int, *, allow_zero: bool = False) -> int:
    lowest_ok = frac >= 0.0 if allow_zero else frac > 0.0
    if not (lowest_ok and frac <= 1.0):
        bounds = "[0, 1]" if allow_zero else "(0, 1]"
        raise ValidationError(f"window_frac must lie in {bounds}, got {frac}")
    return min(length, max(2, _round_half_up(frac * length)))


def jitter(x: TimeSeries, params: OpParams, rng: RngStream) -> TimeSeries:
    """Add i.i.d. ``Normal(0, sigma^2)`` noise to every element."""
    _check_sigma(params)
    noise = rng.generator().standard_normal(x.values.shape)
    return x.with_values(x.values + params.sigma * noise)


def scale(x: TimeSeries, params: OpParams, rng: RngStream) -> TimeSeries:
    """Multiply each channel by its own factor drawn from ``Normal(1, sigma^2)``."""
    _check_sigma(params)
    factors = 1.0 + params.sigma * rng.generator().standard_normal(x.channels)
    return x.with_values(x.values * factors[None, :])


def rotate_flip(x: TimeSeries) -> TimeSeries:
    return x.with_values(-x.values)


def _segment_bounds(length: int, params: OpParams, gen: np.random.Generator) -> List[Tuple[int, int]]:
    n = params.num_segments
    if params.equal_sized:
        base, extra = divmod(length, n)
        sizes = [base + 1 if i < extra else base for i in range(n)]
        cuts = np.cumsum([0] + sizes)
    else:
        inner = np.sort(gen.choice(np.arange(1, length), size=n - 1, replace=False))
        cuts = np.concatenate([[0], inner, [length]])
    return [(int(cuts[i]), int(cuts[i + 1])) for i in range(n)]


def permute(x: TimeSeries, params: OpParams, rng: RngStream) -> TimeSeries:
    """Cut the series into N contiguous segments and shuffle them.

    With ``equal_sized`` the segment lengths differ by at most one, the
    remainder going to the earliest segments; otherwise N-1 distinct cut
    points are drawn uniformly, so every segment has at least one step.
    """
    n = params.num_segments
    if n < 1 or n > x.length:
        raise ValidationError(f"num_segments must lie in [1, {x.length}], got {n}")
    gen = rng.generator()
    bounds = _segment_bounds(x.length, params, gen)
    order = gen.permutation(n)
    pieces = [x.values[bounds[i][0]:bounds[i][1]] for i in order]
    return x.with_values(np.concatenate(pieces, axis=0))


def _warp_curves(length: int, params: OpParams, count: int, gen: np.random.Generator) -> np.ndarray:
    """``count`` smooth curves of ``length`` steps through ``Normal(1, sigma^2)`` knots."""
    positions = np.linspace(0.0, length - 1.0, params.num_knots)
    steps = np.arange(length, dtype=np.float64)
    knots = 1.0 + params.sigma * gen.standard_normal((count, params.num_knots))
    return np.stack([eval_spline(fit_natural_cubic(positions, row), steps) for row in knots])


def magnitude_warp(x: TimeSeries, params: OpParams, rng: RngStream) -> TimeSeries:
    """Multiply each channel by its own smooth random curve."""
    _check_sigma(params)
    _check_knots(params)
    curves = _warp_curves(x.length, params, x.channels, rng.generator())
    return x.with_values(x.values * curves.T)


def warp_positions(speed: np.ndarray) -> np.ndarray:
    """Cumulative time warp from a speed curve, rescaled to span ``[0, T-1]``.

    Speeds are clamped at ``MIN_WARP_SPEED`` first, so the result is strictly
    increasing and maps both endpoints onto themselves.
    """
    clamped = np.maximum(speed, MIN_WARP_SPEED)
    cumulative = np.cumsum(clamped)
    last = speed.size - 1
    positions = (cumulative - cumulative[0]) * (last / (cumulative[-1] - cumulative[0]))
    positions[0] = 0.0
    positions[-1] = float(last)
    return positions


def time_warp(x: TimeSeries, params: OpParams, rng: RngStream) -> TimeSeries:
    """Resample along one smooth monotone warp of the time axis shared by all channels."""
    _check_sigma(params)
    _check_knots(params)
    (speed,) = _warp_curves(x.length, params, 1, rng.generator())
    return x.with_values(interp_rows(x.values, warp_positions(speed)))


def window_slice(x: TimeSeries, params: OpParams, rng: RngStream) -> TimeSeries:
    """Crop a random window of ``W = round(frac * T)`` steps and stretch it back to T."""
    width = _window_length(params.window_frac, x.length)
    start = int(rng.generator().integers(0, x.length - width + 1))
    window = x.values[start:start + width]
    return x.with_values(resample_values(window, x.length))


def window_warp(x: TimeSeries, params: OpParams, rng: RngStream) -> TimeSeries:
    """Stretch (by K) or contract (by 1/K) a random window, then restore length T.

    Stretch and contract are equally likely. ``window_frac`` 0 is accepted
    and gives the minimum window of 2 steps; level 0 of the magnitude table
    maps to it.
    """
    if not np.isfinite(params.stretch) or params.stretch <= 0:
        raise ValidationError(f"stretch must be > 0, got {params.stretch}")
    width = _window_length(params.window_frac, x.length, allow_zero=True)
    gen = rng.generator()
    start = int(gen.integers(0, x.length - width + 1))
    if gen.random() < 0.5:
        warped_width = max(2, _round_half_up(params.stretch * width))
    else:
        warped_width = max(2, _round_half_up(width / params.stretch))
    window = resample_values(x.values[start:start + width], warped_width)
    joined = np.concatenate(
        [x.values[:start], window, x.values[start + width:]], axis=0
    )
    return x.with_values(resample_values(joined, x.length))


_DISPATCH: Dict[AugOpKind, Callable[[TimeSeries, OpParams, RngStream], TimeSeries]] = {
    AugOpKind.JITTER: jitter,
    AugOpKind.SCALE: scale,
    AugOpKind.ROTATE: lambda x, params, rng: rotate_flip(x),
    AugOpKind.PERMUTE: permute,
    AugOpKind.MAGNITUDE_WARP: magnitude_warp,
    AugOpKind.TIME_WARP: time_warp,
    AugOpKind.WINDOW_SLICE: window_slice,
    AugOpKind.WINDOW_WARP: window_warp,
}

OpSpec = Tuple[AugOpKind, OpParams]


def apply_op(kind: AugOpKind, x: TimeSeries, params: OpParams, rng: RngStream) -> TimeSeries:
    return _DISPATCH[kind](x, params, rng)


def apply_chain(x: TimeSeries, ops: Sequence[OpSpec], rng: RngStream) -> TimeSeries:
    """Apply ``ops`` left to right; op ``i`` draws from child stream ``i`` of ``rng``."""
    if not ops:
        raise ValidationError("augmentation chain must not be empty")
    out = x
    for index, (kind, params) in enumerate(ops):
        out = apply_op(kind, out, params, derive_stream(rng, index))
    return out


def params_for_level(
    kind: AugOpKind,
    level: float,
    table: Optional[MagnitudeTable] = None,
    *,
    base: Optional[OpParams] = None,
) -> OpParams:
    """Parameters for ``kind`` at magnitude ``level`` via the table's linear map.

    Permute's segment count is rounded to the nearest integer, floored at 1.
    """
    table = table or default_magnitude_table()
    base = base or default_params(kind, table)
    value = table.value_at_level(kind.value, level)
    if value is None:
        return base
    param = table.get(kind.value).param
    if param == "num_segments":
        return replace(base, num_segments=max(1, _round_half_up(value)))
    return replace(base, **{param: value})


def default_params(kind: AugOpKind, table: Optional[MagnitudeTable] = None) -> OpParams:
    """Parameters at the table's default magnitude (K = 2, I = 4, equal segments)."""
    table = table or default_magnitude_table()
    entry = table.get(kind.value)
    params = OpParams()
    if not entry.has_magnitude:
        return params
    if entry.param == "num_segments":
        return replace(params, num_segments=max(1, _round_half_up(float(entry.default))))
    return replace(params, **{entry.param: float(entry.default)})


def fit_params_to_length(kind: AugOpKind, params: OpParams, length: int) -> OpParams:
    """Clamp length-dependent parameters so they are valid for a length-``length`` series."""
    if kind is AugOpKind.PERMUTE and params.num_segments > length:
        return replace(params, num_segments=length)
    return params


SampleFn = Callable[[TimeSeries, RngStream], TimeSeries]


def augment_dataset(d: Dataset, fn: SampleFn, rng: RngStream, threads: int = 1) -> Dataset:
    """Apply ``fn`` to every sample; sample ``i`` uses child stream ``i`` of ``rng``.

    The result does not depend on ``threads``.
    """
    streams = [derive_stream(rng, index) for index in range(len(d))]
    if threads > 1 and len(d) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            samples = list(pool.map(fn, d.samples, streams))
    else:
        samples = [fn(sample, stream) for sample, stream in zip(d.samples, streams)]
    return d.with_samples(samples)


def chain_sample_fn(ops: Sequence[OpSpec]) -> SampleFn:
    """Per-sample function applying a fixed chain; an empty chain is the identity."""
    ops = tuple(ops)

    def _apply(x: TimeSeries, rng: RngStream) -> TimeSeries:
        if not ops:
            return x
        return apply_chain(x, ops, rng)

    return _apply


def batch_augmenter(fn: SampleFn) -> Callable[[np.ndarray, RngStream], np.ndarray]:
    """Lift a per-sample function to ``(B, T, C)`` batches for :func:`tsaug.model_zoo.train`.

    Row ``i`` of the batch draws from child stream ``i``.
    """

    def _augment(batch: np.ndarray, rng: RngStream) -> np.ndarray:
        return np.stack(
            [fn(TimeSeries(values=row), derive_stream(rng, index)).values for index, row in enumerate(batch)]
        )

    return _augment
