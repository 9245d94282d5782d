from __future__ import annotations

import numpy as np
import pytest

from vimem import make_store


def random_store(rng: np.random.Generator, n: int, d: int, n_classes: int = 3, **kw):
    """Labeled store with distinct random ids and Gaussian vectors."""
    ids = rng.choice(10 * n, size=n, replace=False)
    vectors = rng.standard_normal((n, d))
    labels = rng.integers(0, n_classes, n)
    return make_store(ids, vectors, labels, **kw)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240817)
