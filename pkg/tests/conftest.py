import numpy as np
import pytest


def random_physical_state(rng: np.random.Generator, dim: int = 4,
                          rank: int | None = None) -> np.ndarray:
    """Random density matrix, Haar-ish via a Ginibre factor."""
    r = rank or dim
    g = rng.standard_normal((dim, r)) + 1j * rng.standard_normal((dim, r))
    rho = g @ g.conj().T
    return rho / np.trace(rho).real


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def make_state():
    return random_physical_state
