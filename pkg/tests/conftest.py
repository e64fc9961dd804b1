"""Shared fixtures."""

from __future__ import annotations

import numpy as np
import pytest

from tsaug.data_io import SyntheticKind, SyntheticSpec, generate_synthetic
from tsaug.series_core import RngStream, TimeSeries


@pytest.fixture
def rng() -> RngStream:
    return RngStream(seed=1234)


@pytest.fixture
def make_series():
    """Factory for random series of a given shape."""

    def _make(length: int = 32, channels: int = 2, seed: int = 0, label: int = 0) -> TimeSeries:
        gen = np.random.default_rng(seed)
        return TimeSeries(values=gen.normal(size=(length, channels)), label=label)

    return _make


@pytest.fixture(scope="session")
def sign_splits():
    return generate_synthetic(
        SyntheticSpec(kind=SyntheticKind.SIGN, length=16, channels=1, samples_per_class=50, noise=0.1, seed=7)
    )


@pytest.fixture(scope="session")
def sine_splits():
    return generate_synthetic(
        SyntheticSpec(kind=SyntheticKind.SINE, length=32, channels=1, samples_per_class=50, noise=0.1, seed=3)
    )
