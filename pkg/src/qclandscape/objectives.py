"""Observable and gate objectives with exact discrete gradients and Hessians.

Gradients and Hessians are returned per unit time ("Riemann weighted"):
a field perturbation d on the grid changes the objective by
sum_k g_k d_k dt to first order, and by 1/2 sum_kl H_kl d_k d_l dt^2 to
second order.  They are exact derivatives of the piecewise-constant
propagation map, obtained from interval-averaged interaction-picture
dipoles rather than point samples.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    ControlField,
    ControlSystem,
    Trajectory,
    as_matrix,
    dagger,
    is_hermitian,
    propagate,
)
from .errors import InputError

ZERO_EIG_RTOL = 1e-8

__all__ = [
    "ObservableSpec",
    "GateSpec",
    "PenaltySpec",
    "FieldGradient",
    "FieldHessian",
    "phi1",
    "phi2",
    "objective_value",
    "cost_j",
    "grad_phi1_field",
    "grad_phi2_field",
    "grad_field",
    "hessian_phi1",
    "hessian_phi2",
    "hessian_field",
    "hqf",
    "heisenberg_commutator",
]


@dataclass(frozen=True, eq=False)
class ObservableSpec:
    """Initial density matrix and target observable for the expectation-value objective."""

    rho0: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        rho = np.asarray(self.rho0, dtype=complex)
        theta = np.asarray(self.theta, dtype=complex)
        if rho.shape != theta.shape or rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
            raise InputError(f"rho0 {rho.shape} and theta {theta.shape} must be equal square shapes")
        if not is_hermitian(rho, 1e-10) or not is_hermitian(theta, 1e-10):
            raise InputError("rho0 and theta must be Hermitian")
        if abs(np.trace(rho).real - 1.0) > 1e-10:
            raise InputError("rho0 must have unit trace")
        if np.linalg.eigvalsh(rho).min() < -1e-12:
            raise InputError("rho0 must be positive semidefinite")
        object.__setattr__(self, "rho0", rho)
        object.__setattr__(self, "theta", theta)

    @property
    def dim(self) -> int:
        return self.rho0.shape[0]

    @classmethod
    def transfer(cls, n: int, initial: int, target: int) -> "ObservableSpec":
        """Pure-state to projector population transfer |initial> -> |target>."""
        rho = np.zeros((n, n))
        rho[initial, initial] = 1.0
        theta = np.zeros((n, n))
        theta[target, target] = 1.0
        return cls(rho, theta)


@dataclass(frozen=True, eq=False)
class GateSpec:
    """Target unitary for the gate-distance objective."""

    w: np.ndarray

    def __post_init__(self):
        w = as_matrix(self.w)
        n = w.shape[0]
        if np.linalg.norm(dagger(w) @ w - np.eye(n)) > 1e-10 * n:
            raise InputError("target gate must be unitary")
        object.__setattr__(self, "w", w)

    @property
    def dim(self) -> int:
        return self.w.shape[0]


@dataclass(frozen=True)
class PenaltySpec:
    """Fluence weight; the envelope S(t) lives on the field itself."""

    weight: float = 0.0

    def __post_init__(self):
        if not np.isfinite(self.weight) or self.weight < 0:
            raise InputError("penalty weight must be nonnegative")


@dataclass(frozen=True, eq=False)
class FieldGradient:
    values: np.ndarray  # (K, m)
    dt: float

    @property
    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def l2_norm(self) -> float:
        return float(np.sqrt(np.sum(self.values**2) * self.dt))


@dataclass(frozen=True, eq=False)
class FieldHessian:
    """Symmetric (K*m, K*m) kernel samples; index order is k * m + channel."""

    values: np.ndarray
    dt: float

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.values)

    def operator_eigenvalues(self) -> np.ndarray:
        """Eigenvalues of the integral operator with this kernel (matrix eigenvalues times dt)."""
        return self.eigenvalues() * self.dt

    def signature(self, rtol: float = ZERO_EIG_RTOL) -> tuple[int, int, int]:
        """Counts (positive, zero, negative) with the zero band tau = rtol * max|eig|."""
        ev = self.eigenvalues()
        tau = rtol * np.max(np.abs(ev)) if ev.size else 0.0
        pos = int(np.sum(ev > tau))
        neg = int(np.sum(ev < -tau))
        return pos, ev.size - pos - neg, neg


def _check_dim(u: np.ndarray, n: int):
    if u.shape != (n, n):
        raise InputError(f"propagator shape {u.shape} does not match objective dimension {n}")


def phi1(u, spec: ObservableSpec) -> float:
    """Expectation value Tr[U rho0 U^dag Theta]."""
    u = as_matrix(u)
    _check_dim(u, spec.dim)
    val = np.trace(u @ spec.rho0 @ dagger(u) @ spec.theta)
    scale = max(1.0, float(np.linalg.norm(spec.theta)))
    if abs(val.imag) > 1e-10 * scale:
        raise InputError(f"observable expectation has imaginary part {val.imag:.2e}")
    return float(val.real)


def phi2(u, spec: GateSpec) -> float:
    """Gate distance 2N - 2 Re Tr[W^dag U] = ||U - W||_F^2."""
    u = as_matrix(u)
    _check_dim(u, spec.dim)
    n = spec.dim
    return float(2 * n - 2 * np.trace(dagger(spec.w) @ u).real)


def objective_value(u, objective) -> float:
    if isinstance(objective, ObservableSpec):
        return phi1(u, objective)
    if isinstance(objective, GateSpec):
        return phi2(u, objective)
    raise InputError(f"unknown objective type {type(objective).__name__}")


def cost_j(system: ControlSystem, field: ControlField, objective, penalty: PenaltySpec) -> float:
    """Penalized cost: Phi1 - w * fluence (maximize) or Phi2 + w * fluence (minimize)."""
    traj = propagate(system, field)
    val = objective_value(traj.final, objective)
    pen = penalty.weight * field.fluence(weighted=True)
    return val - pen if isinstance(objective, ObservableSpec) else val + pen


def heisenberg_commutator(u: np.ndarray, spec: ObservableSpec) -> np.ndarray:
    """[U^dag Theta U, rho0], the kinematic gradient of the observable objective."""
    th = dagger(u) @ spec.theta @ u
    return th @ spec.rho0 - spec.rho0 @ th


def grad_phi1_field(traj: Trajectory, spec: ObservableSpec) -> FieldGradient:
    """Field gradient -i Tr([Theta_H, rho0] mu_bar_k), Theta_H = U(T)^dag Theta U(T).

    `mu_bar_k` is the interaction-picture dipole averaged over interval k,
    which makes the result the exact derivative of the discrete map.
    """
    _check_dim(traj.final, spec.dim)
    comm = heisenberg_commutator(traj.final, spec)
    g = -1j * np.einsum("ij,kmji->km", comm, traj.dipole_averages)
    return FieldGradient(g.real.copy(), traj.dt)


def grad_phi2_field(traj: Trajectory, spec: GateSpec) -> FieldGradient:
    """Field gradient 2 Im Tr(W^dag U mu_bar_k) of the gate distance (descend along its negative)."""
    _check_dim(traj.final, spec.dim)
    z = dagger(spec.w) @ traj.final
    g = 2.0 * np.einsum("ij,kmji->km", z, traj.dipole_averages).imag
    return FieldGradient(g, traj.dt)


def grad_field(traj: Trajectory, objective) -> FieldGradient:
    if isinstance(objective, ObservableSpec):
        return grad_phi1_field(traj, objective)
    if isinstance(objective, GateSpec):
        return grad_phi2_field(traj, objective)
    raise InputError(f"unknown objective type {type(objective).__name__}")


def hessian_phi1(traj: Trajectory, spec: ObservableSpec) -> FieldHessian:
    """Exact discrete Hessian of the observable objective (symmetrized kernel samples).

    Off-interval entries reduce to -Tr([[Theta_H, mu(t)], mu(t')] rho0) for
    t > t'; same-interval entries use the exact time-ordered second moments.
    """
    _check_dim(traj.final, spec.dim)
    k, m = traj.field.steps, traj.system.n_controls
    n = spec.dim
    th = dagger(traj.final) @ spec.theta @ traj.final
    rho = spec.rho0
    mats = traj.dipole_averages.reshape(k * m, n, n)
    # ordered term: Tr(Theta_H A_later A_earlier rho)
    x = np.einsum("ipq,jqp->ij", (rho @ th) @ mats, mats)
    t_idx = np.repeat(np.arange(k), m)
    later = t_idx[:, None] > t_idx[None, :]
    ordered = np.where(later, x, x.T)
    # cross term: Tr(Theta_H A_i rho A_j)
    y = np.einsum("ipq,jqp->ij", th @ mats @ rho, mats)
    hess = -2.0 * ordered.real + 2.0 * y.real
    sec = traj.ordered_second_moments()  # (K, m, m, N, N)
    same = -2.0 * np.einsum("ij,kabji->kab", rho @ th, sec).real
    for kk in range(k):
        sl = slice(kk * m, (kk + 1) * m)
        hess[sl, sl] = same[kk] + 2.0 * y[sl, sl].real
    hess = 0.5 * (hess + hess.T)
    return FieldHessian(hess, traj.dt)


def hessian_phi2(traj: Trajectory, spec: GateSpec) -> FieldHessian:
    """Exact discrete Hessian of the gate distance: 2 Re Tr(W^dag U mu(t) mu(t')), time ordered."""
    _check_dim(traj.final, spec.dim)
    k, m = traj.field.steps, traj.system.n_controls
    n = spec.dim
    z = dagger(spec.w) @ traj.final
    mats = traj.dipole_averages.reshape(k * m, n, n)
    x = np.einsum("ipq,jqp->ij", z @ mats, mats)
    t_idx = np.repeat(np.arange(k), m)
    later = t_idx[:, None] > t_idx[None, :]
    hess = 2.0 * np.where(later, x, x.T).real
    sec = traj.ordered_second_moments()
    same = 2.0 * np.einsum("ij,kabji->kab", z, sec).real
    for kk in range(k):
        sl = slice(kk * m, (kk + 1) * m)
        hess[sl, sl] = same[kk]
    hess = 0.5 * (hess + hess.T)
    return FieldHessian(hess, traj.dt)


def hessian_field(traj: Trajectory, objective) -> FieldHessian:
    if isinstance(objective, ObservableSpec):
        return hessian_phi1(traj, objective)
    if isinstance(objective, GateSpec):
        return hessian_phi2(traj, objective)
    raise InputError(f"unknown objective type {type(objective).__name__}")


def hqf(hessian: FieldHessian, omega: np.ndarray) -> float:
    """Hessian quadratic form: double Riemann sum of omega(t) H(t, t') omega(t')."""
    w = np.asarray(omega, dtype=float).reshape(-1)
    if w.size != hessian.values.shape[0]:
        raise InputError(f"omega has {w.size} entries, Hessian has {hessian.values.shape[0]}")
    return float(w @ hessian.values @ w * hessian.dt**2)
