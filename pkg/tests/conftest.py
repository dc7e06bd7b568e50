import numpy as np
import pytest

from squeezing_ime.dynamics import FrequencyGrid, QuadraticSystem, transfer_function
from squeezing_ime.errors import UnstableSystemError

FOUR_MODE_A = 0.55
FOUR_MODE_B = 0.3


def single_mode_system():
    """Detuning 2, pump coupling 1, damping 1."""
    return QuadraticSystem([[2.0]], [[1j]], [1.0])


def two_mode_system():
    """g11 = 0.8, g12 = 0.1, g22 = 1, f12 = i, equal dampings."""
    return QuadraticSystem([[0.8, 0.1], [0.1, 1.0]], [[0, 1j], [1j, 0]], [1.0, 1.0])


def four_mode_system(a=FOUR_MODE_A, b=FOUR_MODE_B):
    G = np.array([[2 * a, 0, a, 0], [0, 2 * a, 0, a], [a, 0, 2 * a, 0], [0, a, 0, 2 * a]], dtype=complex)
    F = np.array([[0, b, 0, 2 * b], [b, 0, 2 * b, 0], [0, 2 * b, 0, b], [2 * b, 0, b, 0]], dtype=complex)
    return QuadraticSystem(G, F, [1.0, 1.5, 1.0, 1.5])


def random_hermitian(rng, n, scale=1.0):
    a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return scale * (a + a.conj().T) / 2


def random_stable_system(rng, n=None, max_modes=4):
    """Random below-threshold system; the pump matrix is shrunk until the system is stable."""
    n = int(rng.integers(1, max_modes + 1)) if n is None else n
    G = random_hermitian(rng, n)
    F = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    F = (F + F.T) / 2
    gamma = rng.uniform(0.5, 2.0, n)
    probe = FrequencyGrid.uniform(5.0, 11)
    for s in (1.0, 0.5, 0.25, 0.1, 0.05, 0.0):
        try:
            system = QuadraticSystem(G, s * F, gamma)
            transfer_function(system, probe)
            return system
        except UnstableSystemError:
            continue
    raise AssertionError("unreachable: passive systems are stable")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def default_grid():
    return FrequencyGrid.uniform()


@pytest.fixture(scope="session")
def small_grid():
    return FrequencyGrid.uniform(5.0, 401)
