"""Kinematic critical manifolds of the observable and gate objectives.

Observable objective: critical propagators are U = V_theta P V_rho^dag
with P a phased permutation matching rho0 eigenvectors to Theta
eigenvectors.  Gate objective: critical points satisfy (W^dag U)^2 = I and
fall into N + 1 classes by the number m of +1 eigenvalues of W^dag U.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .core import as_matrix, dagger, random_unitary
from .errors import EnumerationBoundError, InputError
from .objectives import ObservableSpec

ENUMERATION_CAP = 8
COUNT_CAP = 12
BLOCK_TOL = 1e-10

__all__ = [
    "SpectrumData",
    "CriticalManifoldRecord",
    "GateCriticalClass",
    "spectrum_data",
    "critical_representative",
    "overlap_matrix",
    "enumerate_phi1_critical",
    "manifold_dimension",
    "phi1_signature",
    "enumerate_phi2_critical",
    "gate_class_point",
    "gate_class_of",
    "count_critical_values",
]


def _blocks(eigs: np.ndarray, tol: float) -> tuple[np.ndarray, tuple[int, ...]]:
    """Block label per sorted eigenvalue and block sizes."""
    labels = np.zeros(eigs.size, dtype=int)
    for i in range(1, eigs.size):
        labels[i] = labels[i - 1] + (abs(eigs[i] - eigs[i - 1]) > tol)
    sizes = tuple(int(c) for c in np.bincount(labels))
    return labels, sizes


@dataclass(frozen=True, eq=False)
class SpectrumData:
    """Sorted (descending) spectra, degeneracy blocks and diagonalizers of rho0 and Theta.

    ``q[:, i]`` is the eigenvector of rho0 for ``rho_eigs[i]``; likewise
    ``r`` for Theta.
    """

    rho_eigs: np.ndarray
    theta_eigs: np.ndarray
    rho_labels: np.ndarray
    theta_labels: np.ndarray
    rho_blocks: tuple
    theta_blocks: tuple
    q: np.ndarray
    r: np.ndarray

    @property
    def dim(self) -> int:
        return self.rho_eigs.size


def spectrum_data(spec: ObservableSpec, tol: float = BLOCK_TOL) -> SpectrumData:
    er, vr = np.linalg.eigh(spec.rho0)
    et, vt = np.linalg.eigh(spec.theta)
    er, vr = er[::-1], vr[:, ::-1]
    et, vt = et[::-1], vt[:, ::-1]
    scale = max(1.0, float(np.max(np.abs(et))))
    rl, rb = _blocks(er, tol)
    tl, tb = _blocks(et, tol * scale)
    return SpectrumData(er, et, rl, tl, rb, tb, vr, vt)


def _check_perm(perm, n: int) -> tuple[int, ...]:
    perm = tuple(int(p) for p in perm)
    if sorted(perm) != list(range(n)):
        raise InputError(f"{perm} is not a permutation of range({n})")
    return perm


def critical_representative(spectra: SpectrumData, perm, phases=None) -> np.ndarray:
    """U = R P Q^dag mapping rho0 eigenvector i onto Theta eigenvector perm[i].

    `phases` multiplies column i of the permutation by exp(i phases[i]).
    """
    n = spectra.dim
    perm = _check_perm(perm, n)
    p = np.zeros((n, n), dtype=complex)
    ph = np.ones(n) if phases is None else np.exp(1j * np.asarray(phases, dtype=float))
    for i, j in enumerate(perm):
        p[j, i] = ph[i]
    return spectra.r @ p @ dagger(spectra.q)


def overlap_matrix(spectra: SpectrumData, perm) -> np.ndarray:
    """o[s, t] = number of rho0 eigenvalues in block s paired with Theta block t."""
    perm = _check_perm(perm, spectra.dim)
    o = np.zeros((len(spectra.rho_blocks), len(spectra.theta_blocks)), dtype=int)
    for i, j in enumerate(perm):
        o[spectra.rho_labels[i], spectra.theta_labels[j]] += 1
    return o


def manifold_dimension(spectra: SpectrumData, perm) -> int:
    """Dimension sum D_s^2 + sum E_t^2 - sum o^2 of the critical manifold through the permutation."""
    o = overlap_matrix(spectra, perm)
    return int(
        sum(d * d for d in spectra.rho_blocks)
        + sum(e * e for e in spectra.theta_blocks)
        - int(np.sum(o * o))
    )


def phi1_signature(spectra: SpectrumData, perm) -> tuple[int, int, int]:
    """Kinematic Hessian inertia (h_plus, h_zero, h_minus) on U(N).

    Each pair j < k contributes two directions whose curvature sign is
    minus the sign of (lambda_perm(j) - lambda_perm(k)) (eps_j - eps_k).
    """
    n = spectra.dim
    perm = _check_perm(perm, n)
    lam = spectra.theta_eigs[list(perm)]
    eps = spectra.rho_eigs
    dl = lam[:, None] - lam[None, :]
    de = eps[:, None] - eps[None, :]
    tol = BLOCK_TOL * max(1.0, float(np.max(np.abs(lam))))
    prod = np.where((np.abs(dl) > tol) & (np.abs(de) > BLOCK_TOL), dl * de, 0.0)
    upper = np.triu_indices(n, 1)
    p = prod[upper]
    h_minus = 2 * int(np.sum(p > 0))
    h_plus = 2 * int(np.sum(p < 0))
    return h_plus, n * n - h_plus - h_minus, h_minus


@dataclass(frozen=True, eq=False)
class CriticalManifoldRecord:
    """One observable critical manifold; `members` lists every permutation merged into it."""

    permutation: tuple
    value: float
    dimension: int
    signature: tuple
    representative: np.ndarray
    members: tuple = field(default=())

    @property
    def merged(self) -> bool:
        return len(self.members) > 1

    @property
    def is_saddle(self) -> bool:
        return self.signature[0] > 0 and self.signature[2] > 0


def enumerate_phi1_critical(spec: ObservableSpec) -> list[CriticalManifoldRecord]:
    """All critical manifolds of the observable objective, sorted by decreasing value.

    Permutations with the same block-overlap pattern describe the same
    manifold and are merged into one record.
    """
    n = spec.dim
    if n > ENUMERATION_CAP:
        raise EnumerationBoundError(f"N = {n} exceeds the enumeration cap {ENUMERATION_CAP}")
    sd = spectrum_data(spec)
    groups: dict[bytes, list[tuple[int, ...]]] = {}
    for perm in itertools.permutations(range(n)):
        key = overlap_matrix(sd, perm).tobytes()
        groups.setdefault(key, []).append(perm)
    records = []
    for members in groups.values():
        perm = members[0]
        value = float(np.sum(sd.rho_eigs * sd.theta_eigs[list(perm)]))
        records.append(
            CriticalManifoldRecord(
                permutation=perm,
                value=value,
                dimension=manifold_dimension(sd, perm),
                signature=phi1_signature(sd, perm),
                representative=critical_representative(sd, perm),
                members=tuple(members),
            )
        )
    records.sort(key=lambda r: (-r.value, r.permutation))
    return records


@dataclass(frozen=True)
class GateCriticalClass:
    """Gate critical class with m eigenvalues +1 of W^dag U."""

    n: int
    m: int

    @property
    def value(self) -> float:
        return 4.0 * (self.n - self.m)

    @property
    def signature(self) -> tuple[int, int, int]:
        hp = self.m**2
        hm = (self.n - self.m) ** 2
        return hp, self.n**2 - hp - hm, hm


def enumerate_phi2_critical(n: int) -> list[GateCriticalClass]:
    if n < 1:
        raise InputError("N must be at least 1")
    return [GateCriticalClass(n, m) for m in range(n, -1, -1)]


def gate_class_point(w, m: int, basis=None, rng: np.random.Generator | None = None) -> np.ndarray:
    """A critical point U = W V D V^dag of class m (D has m entries +1, the rest -1)."""
    w = as_matrix(w)
    n = w.shape[0]
    if not 0 <= m <= n:
        raise InputError(f"class index m={m} outside [0, {n}]")
    if basis is None:
        basis = np.eye(n) if rng is None else random_unitary(n, rng)
    d = np.concatenate([np.ones(m), -np.ones(n - m)])
    return w @ (basis * d[None, :]) @ dagger(basis)


def gate_class_of(u, w, tol: float = 1e-9) -> int:
    """Class index m of a gate critical point; raises if (W^dag U)^2 != I."""
    z = dagger(as_matrix(w)) @ as_matrix(u)
    n = z.shape[0]
    if np.linalg.norm(z @ z - np.eye(n)) > tol * n:
        raise InputError("point is not a gate critical point: (W^dag U)^2 != I")
    ev = np.linalg.eigvals(z)
    return int(np.sum(ev.real > 0))


def count_critical_values(n: int, case: str) -> int:
    """Number of distinct critical values: N! (nondegenerate), 2 (projector pair), N+1 (gate)."""
    if n < 1:
        raise InputError("N must be positive")
    if case == "nondegenerate":
        if n > COUNT_CAP:
            raise InputError(f"factorial count only supported for N <= {COUNT_CAP}")
        return math.factorial(n)
    if case == "projector_pair":
        return 2
    if case == "gate":
        return n + 1
    raise InputError(f"unknown case {case!r}")
