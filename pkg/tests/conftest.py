import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


def random_pure(n, rng):
    v = rng.normal(size=2 ** n) + 1j * rng.normal(size=2 ** n)
    return v / np.linalg.norm(v)


def random_density(n, rng, rank=None):
    dim = 2 ** n
    rank = rank or dim
    a = rng.normal(size=(dim, rank)) + 1j * rng.normal(size=(dim, rank))
    m = a @ a.conj().T
    return m / np.trace(m).real


def basis_state(n, excited_sites):
    """Product basis ket with the given sites excited (site 1 = msb)."""
    idx = 0
    for s in range(1, n + 1):
        idx = (idx << 1) | (0 if s in excited_sites else 1)
    v = np.zeros(2 ** n, dtype=complex)
    v[idx] = 1.0
    return v
