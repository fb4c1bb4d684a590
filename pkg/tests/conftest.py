"""Shared helpers and markers for the test suite."""

from __future__ import annotations

import numpy as np
import pytest


def random_density(dim: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    """Random full-rank (or rank-limited) density matrix via a Ginibre draw."""
    r = rank or dim
    g = rng.normal(size=(dim, r)) + 1j * rng.normal(size=(dim, r))
    rho = g @ g.conj().T
    return rho / np.trace(rho).real


def random_operator(dim: int, rng: np.random.Generator) -> np.ndarray:
    return rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "acceptance: end-to-end acceptance criteria (long-running)")
    config.addinivalue_line(
        "markers", "slow: long-running checks excluded from quick iterations")


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20260822)
