"""Reference systems used in tests, examples and the CLI."""

from __future__ import annotations

import numpy as np

from .core import ControlField, ControlSystem
from .homotopy import SystemPath
from .objectives import ObservableSpec

SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)


def _coupling(n: int, pairs: dict) -> np.ndarray:
    mu = np.zeros((n, n), dtype=complex)
    for (i, j), v in pairs.items():
        mu[i, j] = mu[j, i] = v
    return mu


def resonant_two_level(horizon: float = 5 * np.pi, gap: float = 1.0) -> ControlSystem:
    """H0 = diag(0, gap), mu = sigma_x."""
    return ControlSystem(np.diag([0.0, gap]), [SX], horizon)


def pauli_system(horizon: float = 1.0) -> ControlSystem:
    return ControlSystem(SZ, [SX], horizon)


def ladder_system(n: int, horizon: float, reach: int = 1, rng: np.random.Generator | None = None,
                  anharmonicity: float = 0.05) -> ControlSystem:
    """Anharmonic ladder E_i = i + a i^2 with couplings between levels at most `reach` apart.

    With a generator the coupling strengths are random in [0.5, 1.5];
    otherwise they decay as 2^-(|i-j|-1).
    """
    e = np.arange(n) + anharmonicity * np.arange(n) ** 2
    pairs = {}
    for i in range(n):
        for j in range(i + 1, min(n, i + reach + 1)):
            pairs[(i, j)] = rng.uniform(0.5, 1.5) if rng is not None else 2.0 ** -(j - i - 1)
    return ControlSystem(np.diag(e), [_coupling(n, pairs)], horizon)


def eight_level_benchmark(horizon: float = 15.0, steps: int = 300, yield_target: float = 0.5, seed: int = 7):
    """8-level ladder with couplings up to third neighbours, |1> -> |8> at the given yield.

    Returns (system, spec, field) where the field already sits on the level set.
    """
    from .homotopy import seek_level

    system = ladder_system(8, horizon, reach=3)
    spec = ObservableSpec.transfer(8, 0, 7)
    rng = np.random.default_rng(seed)
    e = np.real(np.diag(system.h0))
    freqs = np.array([e[j] - e[i] for i in range(8) for j in range(i + 1, min(8, i + 4))])
    t = (np.arange(steps) + 0.5) * horizon / steps
    amp = rng.normal(size=freqs.size) * 0.05
    ph = rng.uniform(0, 2 * np.pi, size=freqs.size)
    vals = np.sum(amp * np.cos(freqs * t[:, None] + ph), axis=1)
    fld = ControlField(vals[:, None], horizon)
    return system, spec, seek_level(system, fld, spec, yield_target)


def dipole_swap_path(horizon: float = 20.0, curved: bool = False) -> SystemPath:
    """Three levels: direct 1-3 coupling at s=0 morphs into the 1-2-3 ladder at s=1."""
    h0 = np.diag([0.0, 1.0, 2.3])
    start = ControlSystem(h0, [_coupling(3, {(0, 2): 1.0})], horizon)
    end = ControlSystem(h0, [_coupling(3, {(0, 1): 1.0, (1, 2): 1.0})], horizon)
    return SystemPath.quarter_circle(start, end) if curved else SystemPath.linear(start, end)


def five_level_track_path(horizon: float = 20.0) -> SystemPath:
    """mu12, mu23, mu45 fixed; mu34(s) = s and mu14(s) = 0.5 (1 - s)."""
    h0 = np.diag([0.0, 1.0, 2.1, 3.3, 4.6])
    fixed = _coupling(5, {(0, 1): 1.0, (1, 2): 1.0, (3, 4): 1.0})
    e34 = _coupling(5, {(2, 3): 1.0})
    e14 = _coupling(5, {(0, 3): 1.0})
    return SystemPath(
        lambda s: h0,
        lambda s: (fixed + s * e34 + 0.5 * (1 - s) * e14)[None],
        horizon,
        dh0=lambda s: np.zeros((5, 5), dtype=complex),
        ddipoles=lambda s: (e34 - 0.5 * e14)[None],
    )


def resonant_start_field(system: ControlSystem, steps: int, pairs, amplitude: float = 0.05,
                         seed: int = 0) -> ControlField:
    """Sum of cosines at the transition frequencies of the given level pairs."""
    rng = np.random.default_rng(seed)
    e = np.real(np.diag(system.h0))
    t = (np.arange(steps) + 0.5) * system.horizon / steps
    vals = np.zeros(steps)
    for i, j in pairs:
        vals += amplitude * np.cos((e[j] - e[i]) * t + rng.uniform(0, 2 * np.pi))
    return ControlField(vals[:, None], system.horizon)
