"""Dense propagation machinery for piecewise-constant dipole control.

Conventions used across the package:

* hbar = 1.
* H(t) = H0 - sum_i mu_i eps_i(t), with eps_i constant on each of K
  uniform intervals of the horizon [0, T].
* U(t_{k+1}) = exp(-i H_k dt) U(t_k), built from the eigendecomposition of
  the interval Hamiltonian, so every step is unitary to machine precision.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
import numpy.typing as npt
import scipy.linalg as sla

from .errors import BranchError, InputError

NDArrayComplex = npt.NDArray[np.complex128]
NDArrayFloat = npt.NDArray[np.float64]

HERMITIAN_ATOL = 1e-12
UNITARY_RTOL = 1e-9
BRANCH_TOL = 1e-9

__all__ = [
    "ControlSystem",
    "ControlField",
    "UnitaryPropagator",
    "Trajectory",
    "RwaSystem",
    "dagger",
    "is_hermitian",
    "is_unitary",
    "as_matrix",
    "propagate",
    "interaction_dipole",
    "principal_log_unitary",
    "unitary_exp",
    "geodesic_point",
    "special_log_unitary",
    "rwa_transform",
    "random_unitary",
    "random_hermitian",
    "random_density_matrix",
]


def dagger(a: np.ndarray) -> np.ndarray:
    """Conjugate transpose over the last two axes."""
    return np.conj(np.swapaxes(a, -1, -2))


def is_hermitian(a: np.ndarray, atol: float = HERMITIAN_ATOL) -> bool:
    a = np.asarray(a)
    return bool(np.all(np.abs(a - dagger(a)) <= atol))


def is_unitary(u: np.ndarray, rtol: float = UNITARY_RTOL) -> bool:
    u = as_matrix(u)
    n = u.shape[-1]
    return bool(np.linalg.norm(dagger(u) @ u - np.eye(n)) <= rtol * n)


def as_matrix(u) -> NDArrayComplex:
    """Accept a `UnitaryPropagator` or anything array-like and return a complex matrix."""
    if isinstance(u, UnitaryPropagator):
        return u.matrix
    a = np.asarray(u, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InputError(f"expected a square matrix, got shape {a.shape}")
    return a


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ControlSystem:
    """Drift Hamiltonian, dipole operators and final time.

    Parameters
    ----------
    h0 : (N, N) Hermitian matrix
    dipoles : sequence of m Hermitian (N, N) matrices, or an (m, N, N) array
    horizon : final time T > 0
    """

    h0: NDArrayComplex
    dipoles: tuple
    horizon: float

    def __post_init__(self):
        h0 = np.asarray(self.h0, dtype=complex)
        if h0.ndim != 2 or h0.shape[0] != h0.shape[1]:
            raise InputError(f"h0 must be square, got shape {h0.shape}")
        n = h0.shape[0]
        if n < 2:
            raise InputError("system dimension must be at least 2")
        dips = [np.asarray(d, dtype=complex) for d in self.dipoles]
        if len(dips) < 1:
            raise InputError("at least one dipole operator is required")
        for i, d in enumerate(dips):
            if d.shape != (n, n):
                raise InputError(f"dipole {i} has shape {d.shape}, expected {(n, n)}")
            if not is_hermitian(d):
                raise InputError(f"dipole {i} is not Hermitian")
        if not is_hermitian(h0):
            raise InputError("h0 is not Hermitian")
        if not np.isfinite(self.horizon) or self.horizon <= 0:
            raise InputError(f"horizon must be positive, got {self.horizon}")
        object.__setattr__(self, "h0", _frozen(h0))
        object.__setattr__(self, "dipoles", tuple(_frozen(d) for d in dips))
        object.__setattr__(self, "horizon", float(self.horizon))

    @property
    def dim(self) -> int:
        return self.h0.shape[0]

    @property
    def n_controls(self) -> int:
        return len(self.dipoles)

    @cached_property
    def dipole_stack(self) -> NDArrayComplex:
        return _frozen(np.stack(self.dipoles))

    def hamiltonians(self, values: np.ndarray) -> NDArrayComplex:
        """Interval Hamiltonians H_k = H0 - sum_i mu_i eps_{k,i}, shape (K, N, N)."""
        return self.h0[None] - np.einsum("km,mij->kij", values, self.dipole_stack)

    def with_horizon(self, horizon: float) -> "ControlSystem":
        return ControlSystem(self.h0, self.dipoles, horizon)

    def with_operators(self, h0=None, dipoles=None) -> "ControlSystem":
        return ControlSystem(
            self.h0 if h0 is None else h0,
            self.dipoles if dipoles is None else dipoles,
            self.horizon,
        )


@dataclass(frozen=True, eq=False)
class ControlField:
    """Piecewise-constant multi-channel field on a uniform grid.

    ``values[k, i]`` is the value of channel i on the interval
    [t_k, t_{k+1}).  ``shape`` is an optional strictly positive envelope
    S(t) sampled on the same intervals.
    """

    values: NDArrayFloat
    horizon: float
    shape: NDArrayFloat | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2:
            raise InputError(f"field values must be (K, m), got shape {v.shape}")
        if v.shape[0] < 2:
            raise InputError("a field needs at least K = 2 intervals")
        if not np.all(np.isfinite(v)):
            raise InputError("field values must be finite")
        if not np.isfinite(self.horizon) or self.horizon <= 0:
            raise InputError(f"horizon must be positive, got {self.horizon}")
        object.__setattr__(self, "values", _frozen(v))
        object.__setattr__(self, "horizon", float(self.horizon))
        if self.shape is not None:
            s = np.asarray(self.shape, dtype=float)
            if s.shape != (v.shape[0],):
                raise InputError(f"shape must have length K={v.shape[0]}")
            if not np.all(np.isfinite(s)) or np.any(s <= 0):
                raise InputError("shape function must be strictly positive")
            object.__setattr__(self, "shape", _frozen(s))

    @property
    def steps(self) -> int:
        return self.values.shape[0]

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @property
    def grid(self) -> NDArrayFloat:
        return np.linspace(0.0, self.horizon, self.steps + 1)

    @property
    def midpoints(self) -> NDArrayFloat:
        return (np.arange(self.steps) + 0.5) * self.dt

    @property
    def envelope(self) -> NDArrayFloat:
        """S(t) on the intervals (ones when no shape was given)."""
        return np.ones(self.steps) if self.shape is None else np.asarray(self.shape)

    def fluence(self, weighted: bool = False) -> float:
        """Integrated squared field summed over channels; divided by S(t) if `weighted`."""
        sq = self.values**2
        if weighted:
            sq = sq / self.envelope[:, None]
        return float(np.sum(sq) * self.dt)

    def with_values(self, values: np.ndarray) -> "ControlField":
        return ControlField(values, self.horizon, self.shape)

    @classmethod
    def zeros(cls, horizon: float, steps: int, channels: int = 1, shape=None) -> "ControlField":
        return cls(np.zeros((steps, channels)), horizon, shape)

    @classmethod
    def constant(cls, value, horizon: float, steps: int) -> "ControlField":
        value = np.atleast_1d(np.asarray(value, dtype=float))
        return cls(np.tile(value, (steps, 1)), horizon)

    @classmethod
    def from_function(
        cls, fn: Callable[[np.ndarray], np.ndarray], horizon: float, steps: int, shape=None
    ) -> "ControlField":
        """Sample ``fn`` at interval midpoints; ``fn`` maps an array of times to (K,) or (K, m)."""
        t = (np.arange(steps) + 0.5) * horizon / steps
        return cls(np.asarray(fn(t), dtype=float), horizon, shape)

    @classmethod
    def random_smooth(
        cls,
        rng: np.random.Generator,
        horizon: float,
        steps: int,
        channels: int = 1,
        amplitude: float = 1.0,
        bandwidth: float | None = None,
        n_modes: int = 8,
    ) -> "ControlField":
        """Sum of random sinusoids with angular frequencies up to `bandwidth`."""
        if bandwidth is None:
            bandwidth = 2 * np.pi * n_modes / horizon
        t = (np.arange(steps) + 0.5) * horizon / steps
        freqs = rng.uniform(0.0, bandwidth, size=(channels, n_modes))
        phases = rng.uniform(0.0, 2 * np.pi, size=(channels, n_modes))
        amps = rng.normal(size=(channels, n_modes))
        vals = np.einsum("cj,tcj->tc", amps, np.cos(freqs[None] * t[:, None, None] + phases[None]))
        vals *= amplitude / np.sqrt(n_modes)
        return cls(vals, horizon)


@dataclass(frozen=True, eq=False)
class UnitaryPropagator:
    """A unitary matrix tagged with the time at which it was evaluated."""

    matrix: NDArrayComplex
    time: float = 0.0

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise InputError(f"propagator must be square, got {m.shape}")
        n = m.shape[0]
        if np.linalg.norm(dagger(m) @ m - np.eye(n)) > UNITARY_RTOL * n:
            raise InputError("propagator is not unitary within tolerance")
        object.__setattr__(self, "matrix", _frozen(m))

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.matrix, dtype=dtype)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Propagators on every grid point plus the interval eigen-data that built them."""

    system: ControlSystem
    field: ControlField
    unitaries: NDArrayComplex  # (K+1, N, N)
    energies: NDArrayFloat  # (K, N) eigenvalues of H_k
    eigvecs: NDArrayComplex  # (K, N, N) eigenvectors of H_k

    @property
    def final(self) -> NDArrayComplex:
        return self.unitaries[-1]

    @property
    def times(self) -> NDArrayFloat:
        return self.field.grid

    @property
    def dt(self) -> float:
        return self.field.dt

    def propagator(self, k: int) -> UnitaryPropagator:
        return UnitaryPropagator(self.unitaries[k], float(self.times[k]))

    @cached_property
    def _frame(self) -> NDArrayComplex:
        # P_k = V_k^dag U_k maps the lab frame into the eigenframe of interval k
        return dagger(self.eigvecs) @ self.unitaries[:-1]

    @cached_property
    def _phase_kernel(self) -> NDArrayComplex:
        theta = (self.energies[:, :, None] - self.energies[:, None, :]) * self.dt
        return np.exp(0.5j * theta) * np.sinc(theta / (2 * np.pi))

    def interval_average(self, ops: np.ndarray) -> NDArrayComplex:
        """Interval means of interaction-picture operators.

        For each interval k and operator O returns
        (1/dt) * integral over the interval of U(t)^dag O U(t) dt,
        evaluated exactly in the eigenbasis of H_k.

        Parameters
        ----------
        ops : (N, N) or (m, N, N) array

        Returns
        -------
        (K, N, N) or (K, m, N, N) complex array
        """
        ops = np.asarray(ops, dtype=complex)
        single = ops.ndim == 2
        if single:
            ops = ops[None]
        v = self.eigvecs[:, None]
        local = dagger(v) @ ops[None] @ v
        local = local * self._phase_kernel[:, None]
        p = self._frame[:, None]
        out = dagger(p) @ local @ p
        return out[:, 0] if single else out

    @cached_property
    def dipole_averages(self) -> NDArrayComplex:
        """Interval-averaged interaction-picture dipoles, shape (K, m, N, N)."""
        return self.interval_average(self.system.dipole_stack)

    def ordered_second_moments(self) -> NDArrayComplex:
        """Symmetrized time-ordered double integrals within each interval.

        Returns S with shape (K, m, m, N, N) where
        S[k, a, b] = (O_ab + O_ba) / dt^2 and
        O_ab = integral_{t' < t in interval k} mu_a(t) mu_b(t') dt dt'
        in the interaction picture.  Computed with block-triangular matrix
        exponentials.
        """
        n = self.system.dim
        m = self.system.n_controls
        dt = self.dt
        mus = self.system.dipole_stack
        hk = self.system.hamiltonians(self.field.values)
        k = hk.shape[0]
        out = np.empty((k, m, m, n, n), dtype=complex)
        step_inv = None
        for a in range(m):
            for b in range(a, m):
                blk = np.zeros((k, 3 * n, 3 * n), dtype=complex)
                for j in range(3):
                    blk[:, j * n:(j + 1) * n, j * n:(j + 1) * n] = -1j * hk * dt
                blk[:, :n, n:2 * n] = mus[a] * dt
                blk[:, n:2 * n, 2 * n:] = mus[b] * dt
                e = sla.expm(blk)
                if step_inv is None:
                    step_inv = dagger(e[:, :n, :n])
                o_ab = step_inv @ e[:, :n, 2 * n:]
                if a == b:
                    o_sum = o_ab + o_ab
                else:
                    blk[:, :n, n:2 * n] = mus[b] * dt
                    blk[:, n:2 * n, 2 * n:] = mus[a] * dt
                    e2 = sla.expm(blk)
                    o_sum = o_ab + step_inv @ e2[:, :n, 2 * n:]
                u = self.unitaries[:-1]
                val = dagger(u) @ o_sum @ u / dt**2
                out[:, a, b] = val
                out[:, b, a] = val
        return out


def propagate(system: ControlSystem, field: ControlField) -> Trajectory:
    """Propagate the Schrodinger equation under a piecewise-constant field."""
    if field.n_channels != system.n_controls:
        raise InputError(
            f"field has {field.n_channels} channels but system has {system.n_controls} dipoles"
        )
    if not np.isclose(field.horizon, system.horizon, rtol=1e-12, atol=0.0):
        raise InputError(f"field horizon {field.horizon} != system horizon {system.horizon}")
    n = system.dim
    dt = field.dt
    hk = system.hamiltonians(field.values)
    energies, vecs = np.linalg.eigh(hk)
    steps = (vecs * np.exp(-1j * energies * dt)[:, None, :]) @ dagger(vecs)
    us = np.empty((field.steps + 1, n, n), dtype=complex)
    us[0] = np.eye(n)
    for k in range(field.steps):
        us[k + 1] = steps[k] @ us[k]
    err = np.linalg.norm(dagger(us[-1]) @ us[-1] - np.eye(n))
    if err > UNITARY_RTOL * n:
        raise InputError(f"propagator lost unitarity (residual {err:.2e})")
    return Trajectory(system, field, _frozen(us), _frozen(energies), _frozen(vecs))


def interaction_dipole(traj: Trajectory, channel: int, k: int) -> NDArrayComplex:
    """Interaction-picture dipole U(t_k)^dag mu U(t_k) at grid point k."""
    m = traj.system.n_controls
    if not 0 <= channel < m:
        raise InputError(f"channel {channel} out of range [0, {m})")
    if not 0 <= k <= traj.field.steps:
        raise InputError(f"grid index {k} out of range [0, {traj.field.steps}]")
    u = traj.unitaries[k]
    return dagger(u) @ traj.system.dipoles[channel] @ u


def principal_log_unitary(u) -> NDArrayComplex:
    """Principal logarithm of a unitary, eigen-angles in (-pi, pi).

    Raises `BranchError` when an eigenvalue sits on the branch cut at -1,
    where the choice between +pi and -pi would be arbitrary.
    """
    u = as_matrix(u)
    if not is_unitary(u):
        raise InputError("principal_log_unitary expects a unitary matrix")
    tri, z = sla.schur(u, output="complex")
    eig = np.diag(tri)
    angles = np.angle(eig)
    if np.any(np.pi - np.abs(angles) < BRANCH_TOL):
        raise BranchError("eigenvalue at -1: principal logarithm is branch-degenerate")
    return (z * (1j * angles)[None, :]) @ dagger(z)


def unitary_exp(a: np.ndarray) -> NDArrayComplex:
    """exp(A) for skew-Hermitian A through the eigendecomposition of -iA."""
    a = np.asarray(a, dtype=complex)
    h = -1j * a
    h = 0.5 * (h + dagger(h))
    w, v = np.linalg.eigh(h)
    return (v * np.exp(1j * w)[None, :]) @ dagger(v)


def special_log_unitary(u) -> NDArrayComplex:
    """Traceless logarithm of a unit-determinant unitary.

    Starts from the principal angles, whose sum is 2 pi k, and moves the k
    largest (or |k| smallest) angles across the cut, which is the
    shortest traceless choice.
    """
    u = as_matrix(u)
    if not is_unitary(u):
        raise InputError("special_log_unitary expects a unitary matrix")
    det = np.linalg.det(u)
    if abs(det - 1.0) > 1e-8 * u.shape[0]:
        raise InputError(f"determinant {det:.6g} is not 1; no traceless logarithm exists")
    tri, z = sla.schur(u, output="complex")
    angles = np.angle(np.diag(tri))
    k = int(round(angles.sum() / (2 * np.pi)))
    order = np.argsort(angles)
    if k > 0:
        angles[order[-k:]] -= 2 * np.pi
    elif k < 0:
        angles[order[:-k]] += 2 * np.pi
    return (z * (1j * angles)[None, :]) @ dagger(z)


def geodesic_point(u0, w, s: float, special: bool = False) -> NDArrayComplex:
    """Point U(s) = u0 exp(s log(u0^dag w)) on the geodesic from u0 (s=0) to w (s=1).

    With ``special`` the logarithm is traceless, so the path keeps det U
    fixed (needed when only su(N) directions are reachable).
    """
    u0 = as_matrix(u0)
    w = as_matrix(w)
    rel = dagger(u0) @ w
    gen = special_log_unitary(rel) if special else principal_log_unitary(rel)
    return u0 @ unitary_exp(s * gen)


def random_unitary(n: int, rng: np.random.Generator) -> NDArrayComplex:
    """Haar-random unitary via QR of a complex Gaussian matrix."""
    z = (rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    d = np.diag(r)
    return q * (d / np.abs(d))[None, :]


def random_hermitian(n: int, rng: np.random.Generator, scale: float = 1.0) -> NDArrayComplex:
    a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return scale * 0.5 * (a + dagger(a))


def random_density_matrix(n: int, rng: np.random.Generator, rank: int | None = None) -> NDArrayComplex:
    rank = n if rank is None else rank
    g = rng.normal(size=(n, rank)) + 1j * rng.normal(size=(n, rank))
    rho = g @ dagger(g)
    return rho / np.trace(rho).real


# --------------------------------------------------------------------------
# rotating-frame reduction


@dataclass(frozen=True, eq=False)
class RwaSystem:
    """Drift-free rotating-frame system plus the bookkeeping to map fields back.

    Each rotated channel drives a single transition (j, k) of one lab channel
    in one quadrature: 'x' pairs with a cosine carrier, 'y' with a sine
    carrier.  A lab field eps_c(t) = sum 2 [A(t) cos(w t) + B(t) sin(w t)],
    w = E_k - E_j, reduces (after dropping counter-rotating terms) to
    H_rot = -sum A mu_x - sum B mu_y.
    """

    system: ControlSystem
    lab: ControlSystem
    energies: NDArrayFloat
    transitions: tuple  # (lab channel, j, k, quadrature) per rotated channel

    @property
    def is_identity(self) -> bool:
        return len(self.transitions) == 0

    def carrier_phases(self, t: float) -> NDArrayComplex:
        """Element-wise factors exp(i (E_j - E_k) t) taking lab matrix elements to the rotating frame."""
        e = self.energies
        return np.exp(1j * (e[:, None] - e[None, :]) * t)

    def frame(self, t: float) -> NDArrayComplex:
        """exp(i D t) with D = diag(E)."""
        return np.diag(np.exp(1j * self.energies * t))

    def restore(self, u_rot, t: float) -> NDArrayComplex:
        """Lab-frame propagator exp(-i D t) U_rot(t)."""
        return dagger(self.frame(t)) @ as_matrix(u_rot)

    def rotate(self, u_lab, t: float) -> NDArrayComplex:
        return self.frame(t) @ as_matrix(u_lab)

    def lab_field(self, rot_field: ControlField, steps: int) -> ControlField:
        """Modulate rotating-frame envelopes onto carriers on a finer lab grid."""
        if self.is_identity:
            return rot_field
        if rot_field.n_channels != len(self.transitions):
            raise InputError("rotated field channel count does not match the transition table")
        t = (np.arange(steps) + 0.5) * rot_field.horizon / steps
        idx = np.minimum((t / rot_field.dt).astype(int), rot_field.steps - 1)
        out = np.zeros((steps, self.lab.n_controls))
        for r, (c, j, k, quad) in enumerate(self.transitions):
            w = self.energies[k] - self.energies[j]
            carrier = np.cos(w * t) if quad == "x" else np.sin(w * t)
            out[:, c] += 2.0 * rot_field.values[idx, r] * carrier
        return ControlField(out, rot_field.horizon)

    def rotated_field(self, lab_field: ControlField, steps: int) -> ControlField:
        """Demodulate a lab field: average eps_c(t) times its carrier over each rotated interval."""
        if self.is_identity:
            return lab_field
        if lab_field.steps % steps:
            raise InputError("lab grid must refine the rotated grid by an integer factor")
        ratio = lab_field.steps // steps
        t = lab_field.midpoints
        out = np.zeros((steps, len(self.transitions)))
        for r, (c, j, k, quad) in enumerate(self.transitions):
            w = self.energies[k] - self.energies[j]
            carrier = np.cos(w * t) if quad == "x" else np.sin(w * t)
            prod = lab_field.values[:, c] * carrier
            out[:, r] = prod.reshape(steps, ratio).mean(axis=1)
        return ControlField(out, lab_field.horizon)


def rwa_transform(system: ControlSystem, quadratures: Sequence[str] = ("x",)) -> RwaSystem:
    """Rotating-frame reduction of a system with diagonal drift.

    Every nonzero upper-triangular dipole element (j, k) of lab channel c
    becomes an independent rotated control per requested quadrature.
    When the drift is proportional to the identity the transform is the
    identity map.
    """
    h0 = system.h0
    if np.max(np.abs(h0 - np.diag(np.diag(h0)))) > HERMITIAN_ATOL:
        raise InputError("rwa_transform needs H0 diagonal; diagonalize the system first")
    e = np.real(np.diag(h0)).copy()
    if np.ptp(e) <= HERMITIAN_ATOL:
        return RwaSystem(system, system, e, ())
    for q in quadratures:
        if q not in ("x", "y"):
            raise InputError(f"unknown quadrature {q!r}")
    n = system.dim
    dips = []
    table = []
    for c, mu in enumerate(system.dipoles):
        if np.max(np.abs(np.diag(mu))) > HERMITIAN_ATOL:
            raise InputError(f"dipole {c} has diagonal elements in the drift eigenbasis")
        for j in range(n):
            for k in range(j + 1, n):
                if abs(mu[j, k]) <= HERMITIAN_ATOL:
                    continue
                if abs(e[k] - e[j]) <= HERMITIAN_ATOL:
                    raise InputError(f"transition ({j},{k}) of channel {c} has zero frequency")
                for q in quadratures:
                    op = np.zeros((n, n), dtype=complex)
                    if q == "x":
                        op[j, k] = mu[j, k]
                    else:
                        op[j, k] = -1j * mu[j, k]
                    op[k, j] = np.conj(op[j, k])
                    dips.append(op)
                    table.append((c, j, k, q))
    rotated = ControlSystem(np.zeros((n, n)), dips, system.horizon)
    return RwaSystem(rotated, system, e, tuple(table))
