"""Shared fixtures for tests."""

import numpy as np
import pytest


@pytest.fixture
def make_qkv():
    """Factory for seeded Gaussian Q, K, V."""

    def _make(seed: int, n: int, d: int, d_v: int | None = None, dtype=np.float64, n_k: int | None = None):
        rng = np.random.default_rng(seed)
        n_k = n if n_k is None else n_k
        d_v = d if d_v is None else d_v
        q = rng.standard_normal((n, d)).astype(dtype)
        k = rng.standard_normal((n_k, d)).astype(dtype)
        v = rng.standard_normal((n_k, d_v)).astype(dtype)
        return q, k, v

    return _make


@pytest.fixture
def random_mask_bits():
    """Factory for random boolean block masks with at least one True per row."""

    def _make(seed: int, t_q: int, t_k: int, density: float = 0.4) -> np.ndarray:
        rng = np.random.default_rng(seed)
        bits = rng.random((t_q, t_k)) < density
        bits[np.arange(t_q), rng.integers(0, t_k, size=t_q)] = True
        return bits

    return _make
