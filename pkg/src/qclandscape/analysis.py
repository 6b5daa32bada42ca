"""Controllability rank, analytic optimal-control oracles and the open-system Kraus lift."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import reduce

import numpy as np
from scipy.integrate import quad, solve_ivp
from scipy.linalg import expm, sqrtm
from scipy.optimize import root

from .core import ControlSystem, as_matrix, dagger
from .errors import ConvergenceError, InputError, NumericalAbort
from .objectives import ObservableSpec
from .topology import ENUMERATION_CAP, enumerate_phi1_critical

RANK_RTOL = 1e-10

__all__ = [
    "LieRankReport",
    "lie_rank",
    "abnormal_extremal_su2",
    "abnormal_extremal_field",
    "OracleResult",
    "three_level_oracle",
    "trilinear_min_time",
    "trilinear_adjoint_hamiltonian",
    "two_qubit_conjugation_check",
    "KrausLift",
    "kraus_operators",
    "kraus_lift_objective",
    "OpenExtrema",
    "open_landscape_extrema",
]


# --------------------------------------------------------------------------
# Lie algebra rank


@dataclass(frozen=True)
class LieRankReport:
    """Dimension of the dynamical Lie algebra with the global-phase direction adjoined.

    ``su_dimension`` counts the traceless part; ``partial`` is set when the
    commutator search hit ``depth_cap`` before closing.
    """

    dimension_found: int
    ambient: int
    controllable: bool
    generator_depth: int
    su_dimension: int
    partial: bool = False


def _real_vec(a: np.ndarray) -> np.ndarray:
    return np.concatenate([a.real.ravel(), a.imag.ravel()])


class _Span:
    """Orthonormal basis of a real subspace with twice-orthogonalized insertion."""

    def __init__(self, dim: int, rtol: float):
        self.basis = np.zeros((0, dim))
        self.rtol = rtol

    def add(self, v: np.ndarray, ref: float | None = None) -> bool:
        """Insert v unless it is numerically zero (relative to `ref`) or already in the span."""
        nv = np.linalg.norm(v)
        if nv == 0 or (ref is not None and nv <= self.rtol * ref):
            return False
        r = v / nv
        for _ in range(2):
            r = r - self.basis.T @ (self.basis @ r)
        nr = np.linalg.norm(r)
        if nr <= self.rtol:
            return False
        self.basis = np.vstack([self.basis, r / nr])
        return True

    def __len__(self):
        return self.basis.shape[0]


def lie_rank(system: ControlSystem, depth_cap: int = 12, rtol: float = RANK_RTOL) -> LieRankReport:
    """Breadth-first closure of span{i H0, i mu_k} under commutators.

    New elements at depth d are brackets of the generators with the
    elements found at depth d - 1.  The identity direction (a global
    phase) is adjoined, so a controllable system reports N^2.
    """
    if depth_cap < 1:
        raise InputError("depth_cap must be at least 1")
    n = system.dim
    gens = [1j * system.h0] + [1j * mu for mu in system.dipoles]
    traceless = lambda a: a - np.trace(a) / n * np.eye(n)
    span = _Span(2 * n * n, rtol)
    frontier = []
    scale = max(np.linalg.norm(g) for g in gens)
    for g in gens:
        t = traceless(g)
        if span.add(_real_vec(t), scale):
            frontier.append(t / np.linalg.norm(t))
    depth = 0
    closed = not frontier
    while frontier and len(span) < n * n - 1:
        if depth >= depth_cap:
            break
        depth += 1
        new = []
        for g in gens:
            for x in frontier:
                c = g @ x - x @ g
                # brackets that vanish up to roundoff carry no direction
                if span.add(_real_vec(c), 2 * np.linalg.norm(g)):
                    new.append(c / np.linalg.norm(c))
        frontier = new
    closed = not frontier or len(span) == n * n - 1
    su_dim = len(span)
    dim = su_dim + 1
    return LieRankReport(dim, n * n, dim == n * n, depth, su_dim, partial=not closed)


# --------------------------------------------------------------------------
# abnormal extremals


def abnormal_extremal_su2(h_d, mu) -> float:
    """Constant control -Tr(H_d mu) / Tr(mu mu) for H = H_d + eps mu on su(2)."""
    h_d, mu = as_matrix(h_d), as_matrix(mu)
    if h_d.shape != (2, 2) or mu.shape != (2, 2):
        raise InputError("abnormal extremal formula applies to two-level systems")
    den = np.trace(mu @ mu).real
    if den <= 1e-300:
        raise InputError("Tr(mu mu) vanishes")
    return float(-np.trace(h_d @ mu).real / den)


def abnormal_extremal_field(system: ControlSystem) -> float:
    """The same extremal for a single-control system written as H = H0 - eps mu."""
    if system.n_controls != 1:
        raise InputError("single-control system required")
    return abnormal_extremal_su2(system.h0, -system.dipoles[0])


# --------------------------------------------------------------------------
# analytic oracles


@dataclass(frozen=True, eq=False)
class OracleResult:
    value: float
    trajectory: dict | None = None
    parameters: dict = field(default_factory=dict)


def _sphere_rhs(t, y):
    th, ph, pth, pph = y
    tn = np.tan(th)
    return [pth, pph * tn * tn, -pph * pph * tn * (1 + tn * tn), 0.0]


def _shoot(horizon: float, params) -> tuple[np.ndarray, object]:
    sol = solve_ivp(_sphere_rhs, (0.0, horizon), [0.0, 0.0, params[0], params[1]],
                    method="DOP853", rtol=1e-12, atol=1e-13, dense_output=True)
    th, ph = sol.y[0, -1], sol.y[1, -1]
    return np.array([th, ph - 0.5 * np.pi]), sol


# shooting parameters at T = 1; both scale as 1/T
_UNIT_GUESS = (0.9 * np.sqrt(3) * np.pi / 2, 0.5 * np.pi)


def _three_level_hamiltonian(u1: float, u2: float) -> np.ndarray:
    h = np.zeros((3, 3))
    h[0, 1] = h[1, 0] = u1
    h[1, 2] = h[2, 1] = u2
    return h


def three_level_oracle(horizon: float, samples: int = 201) -> OracleResult:
    """Minimal fluence 3 pi^2 / (4 T) for resonant |1> -> |3> transfer with two controls.

    The optimal path is found by shooting on (P_theta(0), P_phi) for the
    reduced sphere dynamics theta' = P_theta, phi' = P_phi tan^2 theta,
    P_theta' = -P_phi^2 tan theta (1 + tan^2 theta), from theta = phi = 0 to
    theta = 0, phi = pi/2.  The controls are recovered as
    u1 = v1 cos phi + v2 sin phi, u2 = -v1 sin phi + v2 cos phi with
    v1 = P_theta, v2 = P_phi tan theta, and the resulting Schrodinger
    evolution under u1 X12 + u2 X23 is integrated independently to report
    the reached population of |3>.
    """
    if not horizon > 0:
        raise InputError("T must be positive")
    value = 0.75 * np.pi**2 / horizon
    guess = np.array(_UNIT_GUESS) / horizon
    sol = root(lambda p: _shoot(horizon, p)[0], guess, method="hybr", options={"xtol": 1e-14})
    resid, ode = _shoot(horizon, sol.x)
    if not np.all(np.isfinite(resid)) or np.max(np.abs(resid)) > 1e-9:
        raise ConvergenceError(f"shooting did not converge (residual {np.max(np.abs(resid)):.2e})",
                               residual=resid.tolist())
    p_th, p_ph = sol.x

    def controls(t):
        th, ph, pth, _ = ode.sol(t)
        v1, v2 = pth, p_ph * np.tan(th)
        return v1 * np.cos(ph) + v2 * np.sin(ph), -v1 * np.sin(ph) + v2 * np.cos(ph)

    def schrod(t, c):
        u1, u2 = controls(t)
        return -1j * (_three_level_hamiltonian(u1, u2) @ c)

    psi = solve_ivp(schrod, (0.0, horizon), np.array([1, 0, 0], dtype=complex),
                    method="DOP853", rtol=1e-12, atol=1e-13)
    pop3 = float(abs(psi.y[2, -1]) ** 2)
    t = np.linspace(0.0, horizon, samples)
    th, ph, _, _ = ode.sol(t)
    u1, u2 = controls(t)
    fluence = float(quad(lambda x: float(np.sum(np.square(controls(x)))), 0.0, horizon, epsabs=1e-12, epsrel=1e-11)[0])
    if abs(fluence - value) > 1e-6 * value:
        raise ConvergenceError(f"shooting reached a non-minimal extremal (path fluence {fluence:.6g})",
                               p_theta=float(p_th), p_phi=float(p_ph))
    return OracleResult(
        value,
        trajectory={"t": t, "theta": th, "phi": ph, "u1": u1, "u2": u2},
        parameters={
            "T": horizon,
            "p_theta": float(p_th),
            "p_phi": float(p_ph),
            "residual": float(np.max(np.abs(resid))),
            "population": pop3,
            "path_fluence": fluence,
        },
    )


def trilinear_min_time(theta: float, j_coupling: float) -> OracleResult:
    """Minimal time sqrt(kappa (4 - kappa)) / (2 J), kappa = theta / 2 pi, for exp(-i theta I1z I2z I3z)."""
    if not 0.0 <= theta <= 8 * np.pi:
        raise InputError("theta must lie in [0, 8 pi] (kappa in [0, 4])")
    if not j_coupling > 0:
        raise InputError("J must be positive")
    kappa = theta / (2 * np.pi)
    t_star = float(np.sqrt(kappa * (4 - kappa)) / (2 * j_coupling))
    return OracleResult(t_star, None, {"theta": theta, "J": j_coupling, "kappa": kappa})


_PAULI = {
    "x": np.array([[0, 1], [1, 0]], dtype=complex) / 2,
    "y": np.array([[0, -1j], [1j, 0]], dtype=complex) / 2,
    "z": np.array([[1, 0], [0, -1]], dtype=complex) / 2,
    "i": np.eye(2, dtype=complex),
}


def _spin_product(labels: str) -> np.ndarray:
    return reduce(np.kron, [_PAULI[c] for c in labels])


def trilinear_adjoint_hamiltonian(t: float, horizon: float, j_coupling: float, beta: float) -> np.ndarray:
    """Adjoint-system generator for the three-spin chain.

    -i 2 pi J [(I1z I2x + I2x I3z) cos(beta t / T) - (I1z I2y + I2y I3z) sin(beta t / T)];
    beta is the free sweep parameter.
    """
    a = _spin_product("zxi") + _spin_product("ixz")
    b = _spin_product("zyi") + _spin_product("iyz")
    w = beta * t / horizon
    return -2j * np.pi * j_coupling * (a * np.cos(w) - b * np.sin(w))


def two_qubit_conjugation_check() -> dict:
    """Deviation of k_y^{+-} exp(-i Iz Sz) (k_y^{+-})^-1 from exp(+-i Ix Sx)."""
    iy, sy = _spin_product("yi"), _spin_product("iy")
    k_minus = expm(-0.5j * np.pi * iy) @ expm(-0.5j * np.pi * sy)
    k_plus = expm(0.5j * np.pi * iy) @ expm(-0.5j * np.pi * sy)
    zz = expm(-1j * _spin_product("zz"))
    out = {}
    for name, k, sign in (("plus", k_plus, 1.0), ("minus", k_minus, -1.0)):
        lhs = k @ zz @ np.linalg.inv(k)
        out[name] = float(np.linalg.norm(lhs - expm(sign * 1j * _spin_product("xx"))))
    return out


# --------------------------------------------------------------------------
# open systems


def _check_state(rho: np.ndarray, name: str) -> np.ndarray:
    rho = as_matrix(rho)
    if np.linalg.norm(rho - dagger(rho)) > 1e-10 or abs(np.trace(rho).real - 1) > 1e-10:
        raise InputError(f"{name} must be Hermitian with unit trace")
    if np.linalg.eigvalsh(rho).min() < -1e-12:
        raise InputError(f"{name} must be positive semidefinite")
    return rho


@dataclass(frozen=True, eq=False)
class KrausLift:
    """System state, environment state and system observable; the composite space is system x environment."""

    rho_s: np.ndarray
    rho_e: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rho_s", _check_state(self.rho_s, "rho_s"))
        object.__setattr__(self, "rho_e", _check_state(self.rho_e, "rho_e"))
        th = as_matrix(self.theta)
        if th.shape != self.rho_s.shape or np.linalg.norm(th - dagger(th)) > 1e-10:
            raise InputError("theta must be Hermitian with the system dimension")
        object.__setattr__(self, "theta", th)

    @property
    def n(self) -> int:
        return self.rho_s.shape[0]

    @property
    def env_dim(self) -> int:
        return self.rho_e.shape[0]

    @property
    def lifted_dim(self) -> int:
        return self.n * self.env_dim

    @property
    def lifted_state(self) -> np.ndarray:
        return np.kron(self.rho_s, self.rho_e)

    @property
    def lifted_observable(self) -> np.ndarray:
        return np.kron(self.theta, np.eye(self.env_dim))

    def lifted_spec(self) -> ObservableSpec:
        return ObservableSpec(self.lifted_state, self.lifted_observable)


def _check_lifted(lift: KrausLift, u) -> np.ndarray:
    u = as_matrix(u)
    if u.shape != (lift.lifted_dim, lift.lifted_dim):
        raise InputError(f"lifted unitary must be {lift.lifted_dim}x{lift.lifted_dim}, got {u.shape}")
    return u


def kraus_operators(lift: KrausLift, u) -> np.ndarray:
    """K_ab = (I x <a|) U (I x sqrt(rho_E)) (I x |b>), stacked as (lambda_E^2, N, N)."""
    u = _check_lifted(lift, u)
    n, le = lift.n, lift.env_dim
    root_e = sqrtm(lift.rho_e)
    k = u @ np.kron(np.eye(n), root_e)
    blocks = k.reshape(n, le, n, le)  # (i, a, j, b)
    return np.transpose(blocks, (1, 3, 0, 2)).reshape(le * le, n, n)


def kraus_lift_objective(lift: KrausLift, u, route: str = "lifted") -> float:
    """Tr(U P U^dag Theta') on the composite space, or the same number via the Kraus map on the system.

    route 'lifted' evaluates the composite-space trace; route 'kraus'
    applies sum K rho_S K^dag and measures Theta on the system.
    """
    u = _check_lifted(lift, u)
    if route == "lifted":
        val = np.trace(u @ lift.lifted_state @ dagger(u) @ lift.lifted_observable)
    elif route == "kraus":
        ks = kraus_operators(lift, u)
        out = np.einsum("kij,jl,kml->im", ks, lift.rho_s, ks.conj())
        val = np.trace(out @ lift.theta)
    else:
        raise InputError(f"unknown route {route!r}")
    return float(val.real)


@dataclass(frozen=True)
class OpenExtrema:
    maximum: float
    minimum: float
    cross_checked: bool

    def __iter__(self):
        return iter((self.maximum, self.minimum))


def open_landscape_extrema(lift: KrausLift) -> OpenExtrema:
    """Sorted and anti-sorted spectral pairings of rho_S x rho_E with Theta x I.

    When the lifted dimension is within the enumeration cap the values are
    confirmed against the full critical-point enumeration.
    """
    p = np.sort(np.linalg.eigvalsh(lift.lifted_state))[::-1]
    q = np.sort(np.linalg.eigvalsh(lift.lifted_observable))[::-1]
    vmax = float(np.sum(p * q))
    vmin = float(np.sum(p * q[::-1]))
    if lift.lifted_dim > ENUMERATION_CAP:
        warnings.warn(f"lifted dimension {lift.lifted_dim} above enumeration cap; analytic values only")
        return OpenExtrema(vmax, vmin, False)
    values = [r.value for r in enumerate_phi1_critical(lift.lifted_spec())]
    if abs(max(values) - vmax) > 1e-10 or abs(min(values) - vmin) > 1e-10:
        raise NumericalAbort("spectral pairing disagrees with enumerated critical values",
                             pairing=(vmax, vmin), enumerated=(max(values), min(values)))
    return OpenExtrema(vmax, vmin, True)
