"""Natural cubic splines and linear resampling.

The spline stores, for each interval ``[x_i, x_{i+1}]``, the coefficients of
``a + b*s + c*s**2 + d*s**3`` in the local coordinate ``s = t - x_i``. Second
derivatives at the knots come from the usual tridiagonal system with the
natural boundary ``S''(x_0) = S''(x_{n-1}) = 0``, solved with
``scipy.linalg.solve_banded``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from scipy.linalg import solve_banded

from .errors import ValidationError
from .series_core import TimeSeries

ArrayLike = Union[float, Sequence[float], np.ndarray]


@dataclass(frozen=True, eq=False)
class CubicSpline:
    """Piecewise cubic interpolant.

    Attributes:
        knot_positions: Strictly increasing knot abscissae, length ``I >= 2``.
        coefficients: Array of shape ``(I - 1, 4)`` holding ``(a, b, c, d)``
            per interval.
    """

    knot_positions: np.ndarray
    coefficients: np.ndarray

    def __call__(self, t: ArrayLike) -> Union[float, np.ndarray]:
        return eval_spline(self, t)

    def derivative(self, t: ArrayLike, order: int = 1) -> Union[float, np.ndarray]:
        """Analytic derivative of ``order`` 1, 2 or 3 at ``t``."""
        if order not in (1, 2, 3):
            raise ValidationError(f"derivative order must be 1, 2 or 3, got {order}")
        points = np.asarray(t, dtype=np.float64)
        index, local = _locate(self.knot_positions, points)
        _, b, c, d = (self.coefficients[index, k] for k in range(4))
        if order == 1:
            out = b + 2.0 * c * local + 3.0 * d * local**2
        elif order == 2:
            out = 2.0 * c + 6.0 * d * local
        else:
            out = 6.0 * d + 0.0 * local
        return float(out) if out.ndim == 0 else out


def fit_natural_cubic(xs: Sequence[float], ys: Sequence[float]) -> CubicSpline:
    """Fit the natural cubic spline through ``(xs[i], ys[i])``.

    Args:
        xs: Strictly increasing knot positions.
        ys: Knot values, same length as ``xs``.

    Returns:
        The fitted spline.

    Raises:
        ValidationError: If lengths differ, fewer than two knots are given,
            values are not finite, or ``xs`` is not strictly increasing.
    """
    x = np.asarray(xs, dtype=np.float64).ravel()
    y = np.asarray(ys, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ValidationError(f"length mismatch: {x.size} positions, {y.size} values")
    if x.size < 2:
        raise ValidationError(f"need at least 2 knots, got {x.size}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValidationError("knots must be finite")
    h = np.diff(x)
    if np.any(h <= 0):
        raise ValidationError("knot positions must be strictly increasing")

    n = x.size
    second = np.zeros(n)
    if n > 2:
        slope = np.diff(y) / h
        rhs = 6.0 * np.diff(slope)
        bands = np.zeros((3, n - 2))
        bands[0, 1:] = h[1:-1]
        bands[1, :] = 2.0 * (h[:-1] + h[1:])
        bands[2, :-1] = h[1:-1]
        second[1:-1] = solve_banded((1, 1), bands, rhs)

    coefficients = np.empty((n - 1, 4))
    coefficients[:, 0] = y[:-1]
    coefficients[:, 1] = (y[1:] - y[:-1]) / h - h * (2.0 * second[:-1] + second[1:]) / 6.0
    coefficients[:, 2] = second[:-1] / 2.0
    coefficients[:, 3] = (second[1:] - second[:-1]) / (6.0 * h)
    x.setflags(write=False)
    coefficients.setflags(write=False)
    return CubicSpline(knot_positions=x, coefficients=coefficients)


def _locate(knots: np.ndarray, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # Points left of the first knot or right of the last use the boundary segment.
    index = np.searchsorted(knots, points, side="right") - 1
    index = np.clip(index, 0, knots.size - 2)
    return index, points - knots[index]


def eval_spline(s: CubicSpline, t: ArrayLike) -> Union[float, np.ndarray]:
    """Evaluate ``s`` at ``t`` (scalar or array).

    Outside the knot range the boundary cubic segment is extended.
    """
    points = np.asarray(t, dtype=np.float64)
    index, local = _locate(s.knot_positions, points)
    a, b, c, d = (s.coefficients[index, k] for k in range(4))
    out = a + local * (b + local * (c + local * d))
    return float(out) if out.ndim == 0 else out


def interp_rows(values: np.ndarray, positions: np.ndarray) -> np.ndarray:
    """Linearly interpolate a ``(T, C)`` array at fractional row ``positions``."""
    grid = np.arange(values.shape[0], dtype=np.float64)
    return np.column_stack(
        [np.interp(positions, grid, values[:, c]) for c in range(values.shape[1])]
    )


def resample_values(values: np.ndarray, new_length: int) -> np.ndarray:
    """Resample a ``(T, C)`` array to ``new_length`` uniformly spaced rows."""
    if new_length < 2:
        raise ValidationError(f"new_length must be >= 2, got {new_length}")
    if new_length == values.shape[0]:
        return np.array(values, dtype=np.float64, copy=True)
    positions = np.linspace(0.0, values.shape[0] - 1.0, new_length)
    return interp_rows(values, positions)


def resample_linear(x: TimeSeries, new_length: int) -> TimeSeries:
    """Linear resampling of ``x`` onto ``new_length`` uniformly spaced steps.

    Endpoints are kept; the label is preserved.
    """
    return x.with_values(resample_values(x.values, new_length))
