"""Homotopy continuation of control fields in an exploration parameter s.

The field eps(s, t) evolves by an initial-value problem that keeps the
observable <Theta>(s) = Tr(U(T) rho0 U(T)^dag Theta) on a prescribed
track P(s) (constant for level-set exploration) while the system itself
may morph along a path H0(s), mu(s):

    d eps / ds = S(t) [ f + (b + dP/ds - gamma) a0 / Gamma ]

with gamma = int S a0 f dt, Gamma = int S a0^2 dt,
b = -int (a1 . eps + a2) dt.  a0 is the field gradient of <Theta>, a1
the response to d mu / ds and a2 the response to d H0 / ds, all in the
convention H = H0 - mu . eps.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import ControlField, ControlSystem, dagger, propagate
from .errors import GammaAbort, InfeasibleTrackError, InputError, StepFloorAbort
from .objectives import ObservableSpec, grad_phi1_field, hessian_phi1

GAMMA_RTOL = 1e-10
GAMMA_ABS = 1e-12
DS_FLOOR = 1e-8

__all__ = [
    "SystemPath",
    "FreeFunction",
    "free_function",
    "HomotopyProblem",
    "HomotopyTrajectory",
    "AFunctions",
    "a_functions",
    "dmorph_step",
    "explore_level_set",
    "morph_hamiltonian",
    "track_observable",
    "seek_level",
]


@dataclass(frozen=True, eq=False)
class SystemPath:
    """A family of systems indexed by s in [0, 1].

    ``h0(s)`` returns the drift and ``dipoles(s)`` an (m, N, N) array.
    Derivatives are central differences unless analytic ones are given.
    """

    h0: Callable[[float], np.ndarray]
    dipoles: Callable[[float], np.ndarray]
    horizon: float
    dh0: Callable[[float], np.ndarray] | None = None
    ddipoles: Callable[[float], np.ndarray] | None = None
    constant: bool = False
    fd_step: float = 1e-5

    def system(self, s: float) -> ControlSystem:
        return ControlSystem(self.h0(s), list(np.asarray(self.dipoles(s))), self.horizon)

    def _diff(self, fn, s):
        h = self.fd_step
        lo, hi = max(0.0, s - h), min(1.0, s + h)
        return (np.asarray(fn(hi), dtype=complex) - np.asarray(fn(lo), dtype=complex)) / (hi - lo)

    def derivatives(self, s: float) -> tuple[np.ndarray, np.ndarray]:
        """(dH0/ds, dmu/ds) at s."""
        if self.constant:
            n = np.asarray(self.h0(0.0)).shape[0]
            m = np.asarray(self.dipoles(0.0)).shape[0]
            return np.zeros((n, n), dtype=complex), np.zeros((m, n, n), dtype=complex)
        dh = self.dh0(s) if self.dh0 is not None else self._diff(self.h0, s)
        dm = self.ddipoles(s) if self.ddipoles is not None else self._diff(self.dipoles, s)
        return np.asarray(dh, dtype=complex), np.asarray(dm, dtype=complex)

    def reversed(self) -> "SystemPath":
        rev = lambda fn: (None if fn is None else (lambda s: -np.asarray(fn(1.0 - s))))
        return SystemPath(
            lambda s: self.h0(1.0 - s),
            lambda s: self.dipoles(1.0 - s),
            self.horizon,
            rev(self.dh0),
            rev(self.ddipoles),
            self.constant,
            self.fd_step,
        )

    @classmethod
    def fixed(cls, system: ControlSystem) -> "SystemPath":
        h0 = np.array(system.h0)
        mus = np.array(system.dipole_stack)
        return cls(lambda s: h0, lambda s: mus, system.horizon, constant=True)

    @classmethod
    def linear(cls, start: ControlSystem, end: ControlSystem) -> "SystemPath":
        """Straight operator path (1 - s) start + s end with analytic derivatives."""
        if start.horizon != end.horizon:
            raise InputError("path endpoints must share a horizon")
        h_a, h_b = np.array(start.h0), np.array(end.h0)
        m_a, m_b = np.array(start.dipole_stack), np.array(end.dipole_stack)
        return cls(
            lambda s: (1 - s) * h_a + s * h_b,
            lambda s: (1 - s) * m_a + s * m_b,
            start.horizon,
            lambda s: h_b - h_a,
            lambda s: m_b - m_a,
        )

    @classmethod
    def quarter_circle(cls, start: ControlSystem, end: ControlSystem) -> "SystemPath":
        """Curved path cos(pi s / 2) start + sin(pi s / 2) end."""
        h_a, h_b = np.array(start.h0), np.array(end.h0)
        m_a, m_b = np.array(start.dipole_stack), np.array(end.dipole_stack)
        c = lambda s: np.cos(0.5 * np.pi * s)
        sn = lambda s: np.sin(0.5 * np.pi * s)
        dc = lambda s: -0.5 * np.pi * np.sin(0.5 * np.pi * s)
        ds_ = lambda s: 0.5 * np.pi * np.cos(0.5 * np.pi * s)
        return cls(
            lambda s: c(s) * h_a + sn(s) * h_b,
            lambda s: c(s) * m_a + sn(s) * m_b,
            start.horizon,
            lambda s: dc(s) * h_a + ds_(s) * h_b,
            lambda s: dc(s) * m_a + ds_(s) * m_b,
        )


@dataclass(frozen=True)
class FreeFunction:
    """Free function f(s, t) steering motion within the level set.

    kinds: 'zero', 'fluence_min' (-eps / (delta_s S)), 'fluence_max'
    (its negation), 'random_null' (seeded band-limited noise).  Every
    output has zero time integral per channel.
    """

    kind: str = "zero"
    delta_s: float = 1.0
    seed: int = 0
    amplitude: float = 1.0
    n_modes: int = 6
    bandwidth: float | None = None

    def __post_init__(self):
        if self.kind not in ("zero", "fluence_min", "fluence_max", "random_null"):
            raise InputError(f"unknown free function {self.kind!r}")
        if self.delta_s <= 0:
            raise InputError("delta_s must be positive")

    def __call__(self, s: float, fld: ControlField, shape: np.ndarray) -> np.ndarray:
        k, m = fld.values.shape
        if self.kind == "zero":
            return np.zeros((k, m))
        if self.kind in ("fluence_min", "fluence_max"):
            f = -fld.values / (self.delta_s * shape[:, None])
            if self.kind == "fluence_max":
                f = -f
        else:
            rng = np.random.default_rng(self.seed)
            bw = self.bandwidth if self.bandwidth is not None else 2 * np.pi * self.n_modes / fld.horizon
            freq = rng.uniform(0, bw, size=(m, self.n_modes))
            phase = rng.uniform(0, 2 * np.pi, size=(m, self.n_modes))
            drift = rng.normal(size=(m, self.n_modes))
            amp = rng.normal(size=(m, self.n_modes)) * self.amplitude / np.sqrt(self.n_modes)
            t = fld.midpoints[:, None, None]
            f = np.sum(amp * np.cos(freq * t + phase + drift * s), axis=-1)
        return f - f.mean(axis=0, keepdims=True)


def free_function(kind: str, **params) -> FreeFunction:
    return FreeFunction(kind, **params)


@dataclass(frozen=True, eq=False)
class HomotopyProblem:
    """Everything a homotopy run needs besides the starting field.

    Parameters
    ----------
    path : SystemPath
    rho0, theta : initial state (a pure state vector is accepted) and observable
    mode : 'level_set', 'morph' or 'track'
    free : FreeFunction
    track : P(s) for mode 'track'; ``track_rate`` dP/ds (central differences if absent)
    shape : S(t) on the field intervals (ones if None)
    s_steps : nominal number of Euler steps over s in [0, 1]
    tolerance : allowed |<Theta>(s) - P(s)|; defaults 1e-4 (level_set) or 1e-3
    adaptive : projection correction and step halving; False gives plain Euler
    """

    path: SystemPath
    rho0: np.ndarray
    theta: np.ndarray
    mode: str = "level_set"
    free: FreeFunction = field(default_factory=FreeFunction)
    track: Callable[[float], float] | None = None
    track_rate: Callable[[float], float] | None = None
    shape: np.ndarray | None = None
    s_steps: int = 100
    tolerance: float | None = None
    adaptive: bool = True
    gamma_rtol: float = GAMMA_RTOL
    gamma_abs: float = GAMMA_ABS
    ds_floor: float = DS_FLOOR
    hessian_every: int = 0

    def __post_init__(self):
        rho = np.asarray(self.rho0, dtype=complex)
        if rho.ndim == 1:
            rho = np.outer(rho, np.conj(rho)) / np.vdot(rho, rho).real
        object.__setattr__(self, "rho0", rho)
        object.__setattr__(self, "theta", np.asarray(self.theta, dtype=complex))
        ObservableSpec(rho, self.theta)
        if self.mode not in ("level_set", "morph", "track"):
            raise InputError(f"unknown homotopy mode {self.mode!r}")
        if self.mode == "track" and self.track is None:
            raise InputError("track mode needs a track function P(s)")
        if self.s_steps < 1:
            raise InputError("s_steps must be positive")
        if self.tolerance is None:
            object.__setattr__(self, "tolerance", 1e-4 if self.mode == "level_set" else 1e-3)

    @property
    def spec(self) -> ObservableSpec:
        return ObservableSpec(self.rho0, self.theta)

    def target(self, s: float, p0: float) -> float:
        return p0 if self.mode != "track" else float(self.track(s))

    def target_rate(self, s: float) -> float:
        if self.mode != "track":
            return 0.0
        if self.track_rate is not None:
            return float(self.track_rate(s))
        h = 1e-6
        lo, hi = max(0.0, s - h), min(1.0, s + h)
        return float((self.track(hi) - self.track(lo)) / (hi - lo))

    def envelope(self, k: int) -> np.ndarray:
        if self.shape is None:
            return np.ones(k)
        sh = np.asarray(self.shape, dtype=float)
        if sh.shape != (k,) or np.any(sh <= 0):
            raise InputError("shape must be a positive vector over the field intervals")
        return sh


@dataclass(eq=False)
class HomotopyTrajectory:
    """Recorded field surface eps(s_j, t_k, channel) and scalar diagnostics per s_j."""

    s_grid: np.ndarray
    fields: np.ndarray
    observable: np.ndarray
    fluence: np.ndarray
    drift: np.ndarray
    horizon: float
    hessian_trace: np.ndarray | None = None
    extra: dict = field(default_factory=dict)

    @property
    def max_drift(self) -> float:
        return float(np.max(np.abs(self.drift)))

    def field_at(self, j: int) -> ControlField:
        return ControlField(self.fields[j], self.horizon)


@dataclass(frozen=True, eq=False)
class AFunctions:
    a0: np.ndarray  # (K, m)
    a1: np.ndarray  # (K, m)
    a2: np.ndarray  # (K,)
    b: float
    observable: float


def a_functions(problem: HomotopyProblem, s: float, fld: ControlField) -> AFunctions:
    """Response functions of <Theta> at (s, field).

    a0 = -i Tr([Theta_H, rho0] mu_bar), a1 the same with d mu / ds, and
    a2 = +i Tr([Theta_H, rho0] (dH0/ds)_bar); bars denote interval means in
    the interaction picture, which makes the quadrature exact for the
    discrete dynamics.
    """
    system = problem.path.system(s)
    traj = propagate(system, fld)
    spec = problem.spec
    u = traj.final
    th = dagger(u) @ spec.theta @ u
    comm = th @ spec.rho0 - spec.rho0 @ th
    a0 = grad_phi1_field(traj, spec).values
    dh0, dmu = problem.path.derivatives(s)
    k, m = fld.values.shape
    if problem.path.constant:
        a1 = np.zeros((k, m))
        a2 = np.zeros(k)
    else:
        avg_mu = traj.interval_average(dmu)
        a1 = (-1j * np.einsum("ij,kmji->km", comm, avg_mu)).real
        avg_h = traj.interval_average(dh0)
        a2 = (1j * np.einsum("ij,kji->k", comm, avg_h)).real
    b = -fld.dt * float(np.sum(a1 * fld.values) + np.sum(a2))
    obs = float(np.trace(u @ spec.rho0 @ dagger(u) @ spec.theta).real)
    return AFunctions(a0, a1, a2, b, obs)


def _gamma_floor(problem: HomotopyProblem, a0: np.ndarray, shape: np.ndarray, dt: float, system: ControlSystem) -> float:
    s_int = float(np.sum(shape) * dt)
    rel = problem.gamma_rtol * s_int * float(np.max(a0**2))
    mu_scale = max(np.linalg.norm(mu, 2) for mu in system.dipoles)
    ref = s_int * (mu_scale * np.linalg.norm(problem.theta, 2)) ** 2
    return max(rel, problem.gamma_abs * ref)


def _velocity(problem: HomotopyProblem, s: float, fld: ControlField, af: AFunctions, shape: np.ndarray) -> np.ndarray:
    dt = fld.dt
    system = problem.path.system(s)
    gam = float(np.sum(shape[:, None] * af.a0**2) * dt)
    floor = _gamma_floor(problem, af.a0, shape, dt, system)
    if gam < floor:
        raise GammaAbort(f"Gamma = {gam:.3e} below {floor:.3e} at s={s:.4g} (near a critical manifold)", s=s, gamma=gam)
    f = problem.free(s, fld, shape)
    gmm = float(np.sum(shape[:, None] * af.a0 * f) * dt)
    coeff = (af.b + problem.target_rate(s) - gmm) / gam
    return shape[:, None] * (f + coeff * af.a0)


def dmorph_step(problem: HomotopyProblem, s: float, fld: ControlField, ds: float) -> ControlField:
    """One explicit Euler step of the field in s."""
    shape = problem.envelope(fld.steps)
    af = a_functions(problem, s, fld)
    return fld.with_values(fld.values + ds * _velocity(problem, s, fld, af, shape))


def _observable(problem: HomotopyProblem, s: float, fld: ControlField) -> float:
    traj = propagate(problem.path.system(s), fld)
    u = traj.final
    return float(np.trace(u @ problem.rho0 @ dagger(u) @ problem.theta).real)


def _project(problem: HomotopyProblem, s: float, fld: ControlField, target: float, shape: np.ndarray) -> tuple[ControlField, float]:
    """One Newton correction along S a0 toward <Theta> = target."""
    af = a_functions(problem, s, fld)
    gam = float(np.sum(shape[:, None] * af.a0**2) * fld.dt)
    if gam <= 0:
        return fld, af.observable
    corr = (target - af.observable) / gam
    new = fld.with_values(fld.values + corr * shape[:, None] * af.a0)
    return new, _observable(problem, s, new)


def _hessian_trace(problem: HomotopyProblem, s: float, fld: ControlField) -> float:
    traj = propagate(problem.path.system(s), fld)
    return float(np.trace(hessian_phi1(traj, problem.spec).values) * fld.dt)


def _run(problem: HomotopyProblem, field0: ControlField) -> HomotopyTrajectory:
    shape = problem.envelope(field0.steps)
    fld = field0
    p_start = _observable(problem, 0.0, fld)
    if problem.mode == "track":
        lam = np.linalg.eigvalsh(problem.theta)
        ss = np.linspace(0.0, 1.0, 4 * problem.s_steps + 1)
        vals = np.array([problem.track(x) for x in ss])
        if vals.min() < lam[0] - 1e-12 or vals.max() > lam[-1] + 1e-12:
            bad = float(ss[np.argmax((vals < lam[0]) | (vals > lam[-1]))])
            raise InfeasibleTrackError(f"track leaves [{lam[0]:.4g}, {lam[-1]:.4g}] near s={bad:.4g}")
        if abs(problem.track(0.0) - p_start) > 1e-6:
            raise InputError(f"track starts at {problem.track(0.0)} but the field gives {p_start}")
    nominal = 1.0 / problem.s_steps
    tol = problem.tolerance
    s = 0.0
    ds = nominal
    s_grid, fields, obs, flu, drift, htr = [0.0], [fld.values.copy()], [p_start], [fld.fluence()], [0.0], []
    if problem.hessian_every:
        htr.append(_hessian_trace(problem, 0.0, fld))
    n_proj = n_halve = 0
    step_idx = 0
    while s < 1.0 - 1e-12:
        h = min(ds, 1.0 - s)
        try:
            trial = dmorph_step(problem, s, fld, h)
        except GammaAbort as exc:
            exc.context.update(max_drift=max(abs(x) for x in drift), s_grid=np.array(s_grid))
            raise
        s_new = s + h
        target = problem.target(s_new, p_start)
        val = _observable(problem, s_new, trial)
        if problem.adaptive:
            if abs(val - target) > 0.1 * tol:
                trial, val = _project(problem, s_new, trial, target, shape)
                n_proj += 1
            if abs(val - target) > tol:
                ds *= 0.5
                n_halve += 1
                if ds < problem.ds_floor:
                    raise StepFloorAbort(
                        f"step fell below {problem.ds_floor:g} at s={s:.6g}",
                        s=s,
                        max_drift=max(abs(x) for x in drift),
                        s_grid=np.array(s_grid),
                    )
                continue
            ds = min(nominal, 2.0 * ds)
        fld, s = trial, s_new
        step_idx += 1
        s_grid.append(s)
        fields.append(fld.values.copy())
        obs.append(val)
        flu.append(fld.fluence())
        drift.append(val - target)
        if problem.hessian_every and step_idx % problem.hessian_every == 0:
            htr.append(_hessian_trace(problem, s, fld))
    return HomotopyTrajectory(
        s_grid=np.array(s_grid),
        fields=np.array(fields),
        observable=np.array(obs),
        fluence=np.array(flu),
        drift=np.array(drift),
        horizon=field0.horizon,
        hessian_trace=np.array(htr) if problem.hessian_every else None,
        extra={"projections": n_proj, "halvings": n_halve},
    )


def explore_level_set(problem: HomotopyProblem, field0: ControlField) -> HomotopyTrajectory:
    """Move along the level set of <Theta> through the initial field, steered by the free function."""
    if problem.mode != "level_set":
        raise InputError("explore_level_set needs mode 'level_set'")
    return _run(problem, field0)


def morph_hamiltonian(problem: HomotopyProblem, field0: ControlField) -> HomotopyTrajectory:
    """Keep <Theta> fixed while the system moves along its path."""
    if problem.mode != "morph":
        raise InputError("morph_hamiltonian needs mode 'morph'")
    return _run(problem, field0)


def track_observable(problem: HomotopyProblem, field0: ControlField) -> HomotopyTrajectory:
    """Drive <Theta>(s) along the prescribed track P(s)."""
    if problem.mode != "track":
        raise InputError("track_observable needs mode 'track'")
    return _run(problem, field0)


def seek_level(
    system: ControlSystem,
    field0: ControlField,
    spec: ObservableSpec,
    value: float,
    max_steps: int = 2000,
    tol: float = 1e-12,
) -> ControlField:
    """Move a field onto the level set <Theta> = value.

    Newton-sized steps along the field gradient, each capped relative to
    the field norm so the walk stays local.
    """
    fld = field0
    for _ in range(max_steps):
        traj = propagate(system, fld)
        cur = float(np.trace(traj.final @ spec.rho0 @ dagger(traj.final) @ spec.theta).real)
        gap = value - cur
        if abs(gap) < tol:
            return fld
        g = grad_phi1_field(traj, spec).values
        gn = float(np.sum(g * g) * fld.dt)
        if gn == 0:
            raise GammaAbort("zero gradient while seeking a level", value=cur)
        # Newton-sized step along the gradient, capped to keep it local
        step = gap / gn
        cap = 0.5 * np.sqrt(fld.fluence() + 1.0) / np.sqrt(gn)
        step = float(np.clip(step, -cap, cap))
        fld = fld.with_values(fld.values + step * g)
    raise GammaAbort(f"could not reach level {value} (last value {cur})", value=cur)
