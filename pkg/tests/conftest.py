from __future__ import annotations

import numpy as np
import pytest

from qclandscape.benchmarks import _coupling
from qclandscape.core import ControlSystem


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_system(rng, n: int, m: int = 1, horizon: float = 3.0) -> ControlSystem:
    """Diagonal drift with random Hermitian dipoles (fully coupled, generically controllable)."""
    e = np.sort(rng.uniform(0, 2.5, n))
    dips = []
    for _ in range(m):
        a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
        dips.append(0.5 * (a + a.conj().T))
    return ControlSystem(np.diag(e), dips, horizon)


def four_level_full(horizon: float = 10.0) -> ControlSystem:
    pairs = {(0, 1): 1.0, (1, 2): 0.8, (2, 3): 1.1, (0, 2): 0.5, (1, 3): 0.4, (0, 3): 0.3}
    return ControlSystem(np.diag([0, 1.0, 2.3, 3.1]), [_coupling(4, pairs)], horizon)


def four_level_pruned(horizon: float = 10.0) -> ControlSystem:
    return ControlSystem(np.diag([0, 1.0, 2.3, 3.1]), [_coupling(4, {(0, 3): 1.0})], horizon)
