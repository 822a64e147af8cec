"""Shared fixtures: seeded block-Gaussian samples and small Gaussian C-vines."""

import os
import sys

import numpy as np
import pytest

# Add the repository root to the path for `tools` imports
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from tools.datagen_tool import block_gaussian_spec, reference_block_spec, simulate  # noqa: E402
from tools.numerics_tool import RngStream  # noqa: E402


@pytest.fixture(scope="session")
def reference_spec():
    return reference_block_spec()


@pytest.fixture(scope="session")
def reference_train(reference_spec):
    return simulate(reference_spec, 1000, RngStream(2024).derive(1))


@pytest.fixture(scope="session")
def reference_test(reference_spec):
    return simulate(reference_spec, 250, RngStream(2024).derive(2))


@pytest.fixture(scope="session")
def small_data():
    """Four covariates in two correlated pairs, class 1 shifted by one sd."""
    return simulate(block_gaussian_spec([2, 2], rho=0.6, shift=1.0), 400, RngStream(7))


def random_correlation(dim: int, seed: int) -> np.ndarray:
    gen = np.random.default_rng(seed)
    a = gen.normal(size=(dim, 2 * dim))
    cov = a @ a.T
    sd = np.sqrt(np.diag(cov))
    rho = cov / np.outer(sd, sd)
    rho = (rho + rho.T) / 2.0
    np.fill_diagonal(rho, 1.0)
    return rho


@pytest.fixture
def correlation_factory():
    return random_correlation
