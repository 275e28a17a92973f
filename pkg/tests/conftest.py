"""Shared seeded instances for the grsir test suite."""
import numpy as np
import pytest

from design import Dataset, slice_design


def _make_instance(seed, n=300, p=5, num_slices=6, noise=0.1, mixing=0.4):
    """Correlated Gaussian predictors, cubic single-index response."""
    rng = np.random.default_rng(seed)
    mix = np.eye(p) + mixing * rng.standard_normal((p, p))
    X = rng.standard_normal((n, p)) @ mix + rng.standard_normal(p)
    beta = rng.standard_normal(p)
    beta /= np.linalg.norm(beta)
    t = X @ beta
    t = (t - t.mean()) / t.std()
    y = t + 0.3 * t ** 3 + noise * rng.standard_normal(n)
    data = Dataset(X=X, y=y)
    assignment, moments = slice_design(data, num_slices)
    return data, assignment, moments, beta


@pytest.fixture
def make_instance():
    return _make_instance


@pytest.fixture
def instance():
    return _make_instance(2024)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(autouse=True)
def _isolated_env(monkeypatch):
    monkeypatch.delenv("GRSIR_CONFIG", raising=False)
    monkeypatch.delenv("GRSIR_THREADS", raising=False)
