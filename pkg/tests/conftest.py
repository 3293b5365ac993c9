"""Shared test helpers: compact constructors and reference arithmetic."""

from __future__ import annotations

import numpy as np
import pytest

from sparsam.layered import ActiveSet, LayeredVector
from sparsam.objectives import Batch


def lv(*blocks) -> LayeredVector:
    return LayeredVector([np.asarray(b, dtype=np.float64) for b in blocks])


def scalar_batch(step: int = 0) -> Batch:
    # Placeholder minibatch for objectives that only key noise off batch.id.
    return Batch(np.zeros((1, 1)), np.zeros(1, dtype=np.int64), id=step)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def assert_bit_identical(a: LayeredVector, b: LayeredVector) -> None:
    assert a.dims == b.dims
    for la, lb in zip(a, b):
        assert np.array_equal(la, lb)


def full_set(n: int) -> ActiveSet:
    return ActiveSet.full(n)
