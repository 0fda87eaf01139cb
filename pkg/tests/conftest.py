"""Shared fixtures and helpers for the test suite."""

import numpy as np
import pytest

from plantsne import PlantSpec, generate


def canonical_partition(labels) -> np.ndarray:
    """Relabel cluster ids in order of first occurrence.

    Two labelings that induce the same partition canonicalize to the same
    array, so partition equality becomes plain array equality.
    """
    labels = np.asarray(labels)
    seen: dict = {}
    out = np.empty(len(labels), dtype=np.int64)
    for i, v in enumerate(labels.tolist()):
        if v not in seen:
            seen[v] = len(seen)
        out[i] = seen[v]
    return out


def assert_same_partition(a, b):
    np.testing.assert_array_equal(canonical_partition(a), canonical_partition(b))


@pytest.fixture(scope="session")
def tiny_plant():
    """Small fast plant with exact labels (about 450 points)."""
    return generate(PlantSpec(n_leaves=3, point_spacing=1.5, seed=1))
