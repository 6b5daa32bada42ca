"""Kinematic gradient flows on U(N), their closed forms and convergence-time bounds,
plus the field-space gradient driver.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import ControlField, ControlSystem, as_matrix, dagger, propagate, unitary_exp
from .errors import (
    BoundInapplicableError,
    FlowMonotonicityError,
    InputError,
    SingularResolventError,
)
from .objectives import (
    FieldHessian,
    GateSpec,
    ObservableSpec,
    grad_field,
    hessian_field,
    objective_value,
    phi1,
    phi2,
)
from .tracking import correlation_matrix

MONOTONE_SLACK = 1e-9
MAX_HALVINGS = 8

__all__ = [
    "FlowTrajectory",
    "ConvergenceBoundInputs",
    "StepRule",
    "SaddleLimitWarning",
    "polar_unitary",
    "flow_velocity_phi1",
    "flow_velocity_phi2",
    "u_flow_phi1",
    "u_flow_phi2",
    "closed_form_populations",
    "closed_form_gate_flow",
    "convergence_bound_phi1",
    "convergence_bound_phi2",
    "bound_inputs",
    "initial_gate_angle",
    "eps_gradient_ascent",
    "polish_critical_point",
    "gradient_subspace_dimension",
    "kinematic_projection_matrix",
    "population_distance",
    "convergence_time",
]


class SaddleLimitWarning(UserWarning):
    """The initial state has no weight on the top eigenspace, so the flow ends on a saddle."""


@dataclass(eq=False)
class FlowTrajectory:
    """Samples of a flow in algorithmic time s.

    ``points`` holds propagators for kinematic flows and `ControlField`
    objects for the field-space driver.
    """

    s_grid: np.ndarray
    points: list
    values: np.ndarray
    grad_norms: np.ndarray
    converged: bool = False
    exhausted: bool = False
    stalled: bool = False
    halvings: int = 0

    @property
    def final(self):
        return self.points[-1]

    @property
    def final_value(self) -> float:
        return float(self.values[-1])


def polar_unitary(x: np.ndarray) -> np.ndarray:
    """Closest unitary to x (polar factor) via the SVD."""
    u, _, vh = np.linalg.svd(x)
    return u @ vh


def flow_velocity_phi1(u: np.ndarray, spec: ObservableSpec) -> np.ndarray:
    """Ascent velocity U [Theta_H, rho0] = -U [rho0, U^dag Theta U]."""
    th = dagger(u) @ spec.theta @ u
    return u @ (th @ spec.rho0 - spec.rho0 @ th)


def flow_velocity_phi2(u: np.ndarray, spec: GateSpec) -> np.ndarray:
    """Descent velocity W - U W^dag U."""
    return spec.w - u @ dagger(spec.w) @ u


def _integrate_flow(
    u0,
    velocity: Callable[[np.ndarray], np.ndarray],
    value: Callable[[np.ndarray], float],
    ascending: bool,
    s_max: float,
    steps: int,
    method: str,
) -> FlowTrajectory:
    if steps < 1 or s_max <= 0:
        raise InputError("flows need s_max > 0 and at least one step")
    u = polar_unitary(as_matrix(u0))
    if np.linalg.norm(u - as_matrix(u0)) > 1e-8 * u.shape[0]:
        raise InputError("initial point is not unitary")
    ds = s_max / steps
    sign = 1.0 if ascending else -1.0

    def rk4(x, h):
        k1 = velocity(x)
        k2 = velocity(x + 0.5 * h * k1)
        k3 = velocity(x + 0.5 * h * k2)
        k4 = velocity(x + h * k3)
        return polar_unitary(x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4))

    def lie_euler(x, h):
        return polar_unitary(x @ unitary_exp(h * (dagger(x) @ velocity(x))))

    stepper = {"rk4": rk4, "lie_euler": lie_euler}.get(method)
    if stepper is None:
        raise InputError(f"unknown flow integrator {method!r}")

    s_grid = [0.0]
    points = [u]
    vals = [value(u)]
    norms = [float(np.linalg.norm(velocity(u)))]
    halvings = 0
    for _ in range(steps):
        # halve the step locally until the objective moves in the right direction
        for level in range(MAX_HALVINGS + 1):
            n_sub = 2**level
            h = ds / n_sub
            x = u
            ok = True
            prev = vals[-1]
            for _ in range(n_sub):
                x = stepper(x, h)
                cur = value(x)
                if sign * (cur - prev) < -MONOTONE_SLACK:
                    ok = False
                    break
                prev = cur
            if ok:
                halvings += level
                break
        else:
            raise FlowMonotonicityError(
                f"objective not monotone at s={s_grid[-1]:.4g} even after {MAX_HALVINGS} halvings; "
                f"retry with steps >= {steps * 2**MAX_HALVINGS}",
                s=s_grid[-1],
            )
        u = x
        s_grid.append(s_grid[-1] + ds)
        points.append(u)
        vals.append(prev)
        norms.append(float(np.linalg.norm(velocity(u))))
    return FlowTrajectory(
        np.array(s_grid), points, np.array(vals), np.array(norms), halvings=halvings
    )


def u_flow_phi1(u0, spec: ObservableSpec, s_max: float, steps: int, method: str = "rk4") -> FlowTrajectory:
    """Integrate dU/ds = -U [rho0, U^dag Theta U] (observable ascent)."""
    return _integrate_flow(
        u0,
        lambda u: flow_velocity_phi1(u, spec),
        lambda u: phi1(u, spec),
        True,
        s_max,
        steps,
        method,
    )


def u_flow_phi2(u0, spec: GateSpec, s_max: float, steps: int, method: str = "rk4") -> FlowTrajectory:
    """Integrate dU/ds = W - U W^dag U (gate-distance descent)."""
    return _integrate_flow(
        u0,
        lambda u: flow_velocity_phi2(u, spec),
        lambda u: phi2(u, spec),
        False,
        s_max,
        steps,
        method,
    )


def closed_form_populations(c0, theta_eigs, s: float) -> np.ndarray:
    """Populations in the Theta eigenbasis along the pure-state observable flow.

    x_i(s) is proportional to exp(2 s lambda_i) |c_i(0)|^2.
    """
    c0 = np.asarray(c0, dtype=complex)
    lam = np.asarray(theta_eigs, dtype=float)
    if c0.shape != lam.shape:
        raise InputError("c0 and theta_eigs must have equal length")
    if abs(np.linalg.norm(c0) - 1.0) > 1e-10:
        raise InputError("c0 must be normalized")
    p0 = np.abs(c0) ** 2
    top = np.isclose(lam, lam.max(), rtol=0, atol=1e-12)
    if np.all(p0[top] == 0.0):
        warnings.warn("no overlap with the top eigenspace: the flow converges to a saddle", SaddleLimitWarning)
    with np.errstate(divide="ignore"):
        logw = np.where(p0 > 0, np.log(p0) + 2.0 * s * lam, -np.inf)
    logw -= np.max(logw)
    w = np.exp(logw)
    return w / w.sum()


def closed_form_gate_flow(u0, w, s: float) -> np.ndarray:
    """U(s) = W (tanh s + Y0)(1 + tanh s Y0)^{-1} with Y0 = W^dag U0."""
    u0 = as_matrix(u0)
    w = as_matrix(w)
    n = u0.shape[0]
    y0 = dagger(w) @ u0
    t = np.tanh(s)
    res = np.eye(n) + t * y0
    if np.linalg.cond(res) > 1e12:
        raise SingularResolventError(f"resolvent singular at s={s}", s=s)
    y = np.linalg.solve(res.T, (t * np.eye(n) + y0).T).T
    return w @ y


@dataclass(frozen=True)
class ConvergenceBoundInputs:
    """Parameters of the convergence-time bounds.

    ``k`` is the multiplicity of the top Theta eigenvalue, ``mu_gap`` the gap
    to the next eigenvalue, ``theta0`` the largest initial eigenphase of
    W^dag U0 (gate flow).
    """

    n: int
    eps: float
    k: int = 1
    mu_gap: float = 1.0
    theta0: float = np.pi / 2
    lambda_list: tuple = ()

    def __post_init__(self):
        if not 0 < self.eps < 1:
            raise InputError("eps must lie in (0, 1)")
        if self.mu_gap <= 0:
            raise InputError("mu_gap must be positive")


def bound_inputs(theta_eigs, n: int, eps: float, theta0: float = np.pi / 2, tol: float = 1e-12) -> ConvergenceBoundInputs:
    """Assemble bound inputs from a Theta spectrum."""
    lam = np.sort(np.asarray(theta_eigs, dtype=float))[::-1]
    k = int(np.sum(lam >= lam[0] - tol))
    if k >= lam.size:
        raise BoundInapplicableError("Theta is proportional to the identity; no gap")
    return ConvergenceBoundInputs(n, eps, k, float(lam[0] - lam[k]), theta0, tuple(lam))


def convergence_bound_phi1(inputs: ConvergenceBoundInputs) -> float:
    """Upper bound on the observable-flow convergence time.

    (1 / 2 mu) [ln(2 N k / eps^2) + 2 ln((N - k - 2) lambda_{k+1} / (k (lambda_1 - lambda_{k+1})))]
    """
    n, k, mu, eps = inputs.n, inputs.k, inputs.mu_gap, inputs.eps
    lam = np.sort(np.asarray(inputs.lambda_list, dtype=float))[::-1]
    if lam.size != n:
        raise BoundInapplicableError("lambda_list must hold the full Theta spectrum")
    if n - k - 2 <= 0:
        raise BoundInapplicableError(f"bound needs N - k - 2 > 0 (N={n}, k={k})")
    lam_next = lam[k]
    gap = lam[0] - lam_next
    arg = (n - k - 2) * lam_next / (k * gap) if gap > 0 else -1.0
    if lam_next <= 0 or arg <= 0:
        raise BoundInapplicableError("spectral logarithm undefined (needs lambda_{k+1} > 0)")
    return float((np.log(2 * n * k / eps**2) + 2 * np.log(arg)) / (2 * mu))


def convergence_bound_phi2(inputs: ConvergenceBoundInputs) -> float:
    """Upper bound (1/2) ln(4N / (a^2 eps)), a = sin(theta0) / (1 - cos(theta0))."""
    th = inputs.theta0
    if not 0 < th < np.pi:
        raise BoundInapplicableError("theta0 must lie strictly inside (0, pi)")
    a = np.sin(th) / (1 - np.cos(th))
    return float(0.5 * np.log(4 * inputs.n / (a * a * inputs.eps)))


def initial_gate_angle(u0, w) -> float:
    """Largest |eigenphase| of W^dag U0."""
    ev = np.linalg.eigvals(dagger(as_matrix(w)) @ as_matrix(u0))
    return float(np.max(np.abs(np.angle(ev))))


# --------------------------------------------------------------------------
# field-space driver


@dataclass(frozen=True)
class StepRule:
    """Backtracking line search: try `initial`, shrink by `shrink` until Armijo holds."""

    initial: float = 1.0
    shrink: float = 0.5
    grow: float = 2.0
    armijo: float = 1e-4
    min_step: float = 1e-14


def _penalized(system, fld, objective, weight):
    traj = propagate(system, fld)
    val = objective_value(traj.final, objective)
    pen = weight * fld.fluence(weighted=True)
    if isinstance(objective, ObservableSpec):
        return val - pen, traj
    return val + pen, traj


def eps_gradient_ascent(
    system: ControlSystem,
    field0: ControlField,
    objective,
    step_rule: StepRule | None = None,
    max_steps: int = 500,
    tol: float = 1e-6,
    penalty: float = 0.0,
    target: float | None = None,
) -> FlowTrajectory:
    """First-order field optimization with backtracking line search.

    Ascends the observable objective, descends the gate distance, with an
    optional fluence penalty.  Stops when the sup norm of the search
    direction drops below `tol`, when `target` is reached, or after
    `max_steps` (then ``exhausted`` is set).
    """
    rule = step_rule or StepRule()
    ascend = isinstance(objective, ObservableSpec)
    sgn = 1.0 if ascend else -1.0
    fld = field0
    val, traj = _penalized(system, fld, objective, penalty)
    env = fld.envelope[:, None]

    def direction(tr, f):
        g = grad_field(tr, objective).values
        if penalty:
            g = g - sgn * 2.0 * penalty * f.values / env
        return sgn * g

    d = direction(traj, fld)
    s_hist, points, vals, norms = [0.0], [fld], [val], [float(np.max(np.abs(d)))]
    step = rule.initial
    converged = stalled = False
    for it in range(max_steps):
        if norms[-1] < tol or (target is not None and sgn * (vals[-1] - target) >= 0):
            converged = True
            break
        slope = float(np.sum(d * d) * fld.dt)
        while True:
            trial = fld.with_values(fld.values + step * d)
            tval, ttraj = _penalized(system, trial, objective, penalty)
            if sgn * (tval - val) >= rule.armijo * step * slope:
                break
            step *= rule.shrink
            if step < rule.min_step:
                stalled = True
                break
        if stalled:
            break
        fld, val, traj = trial, tval, ttraj
        d = direction(traj, fld)
        s_hist.append(s_hist[-1] + step)
        points.append(fld)
        vals.append(val)
        norms.append(float(np.max(np.abs(d))))
        step *= rule.grow
    else:
        converged = norms[-1] < tol or (target is not None and sgn * (vals[-1] - target) >= 0)
    return FlowTrajectory(
        np.array(s_hist),
        points,
        np.array(vals),
        np.array(norms),
        converged=converged,
        exhausted=not converged and not stalled,
        stalled=stalled,
    )


def polish_critical_point(
    system: ControlSystem,
    fld: ControlField,
    objective,
    iters: int = 10,
    rcond: float = 1e-6,
    tol: float = 1e-13,
) -> tuple[ControlField, FieldHessian]:
    """Refine a near-critical field by Newton steps on the dominant Hessian subspace.

    Directions whose curvature is below ``rcond`` times the largest are left
    alone (they are tangent to the critical manifold), so the iteration
    moves onto the manifold instead of along it.  Returns the refined field
    and its Hessian.
    """
    for _ in range(iters):
        traj = propagate(system, fld)
        g = grad_field(traj, objective).flat
        hess = hessian_field(traj, objective)
        if np.max(np.abs(g)) < tol:
            break
        w, v = np.linalg.eigh(hess.values)
        keep = np.abs(w) > rcond * np.max(np.abs(w))
        coeff = (v[:, keep].T @ g) / w[keep]
        delta = -(v[:, keep] @ coeff) / fld.dt
        fld = fld.with_values(fld.values + delta.reshape(fld.values.shape))
    else:
        traj = propagate(system, fld)
        hess = hessian_field(traj, objective)
    return fld, hess


def gradient_subspace_dimension(rho_block_multiplicities, n: int) -> int:
    """Dimension n(2N - n) - sum n_i^2 of the span of observable gradients.

    ``rho_block_multiplicities`` are the multiplicities of the nonzero
    eigenvalues of rho0; n is their sum (rank of rho0).
    """
    mults = [int(x) for x in rho_block_multiplicities]
    if any(x <= 0 for x in mults):
        raise InputError("multiplicities must be positive integers")
    rank = sum(mults)
    if rank > n or rank < 1:
        raise InputError(f"multiplicities sum to {rank}, must lie in [1, N={n}]")
    return rank * (2 * n - rank) - sum(x * x for x in mults)


def kinematic_projection_matrix(traj) -> np.ndarray:
    """Gram matrix G = integral of v(mu(t)) v(mu(t))^T dt (same object as the tracking correlation matrix)."""
    return correlation_matrix(traj).g


def population_distance(u: np.ndarray, spec: ObservableSpec, tol: float = 1e-12) -> float:
    """Euclidean distance of Theta-eigenbasis populations from their limit on the top eigenspace.

    The limit keeps the relative weights inside the top eigenspace and
    removes everything else, as the closed-form observable flow does.
    """
    lam, r = np.linalg.eigh(spec.theta)
    top = lam >= lam.max() - tol
    rho = u @ spec.rho0 @ dagger(u)
    x = np.real(np.diag(dagger(r) @ rho @ r))
    w = x[top].sum()
    lim = np.where(top, x / w, 0.0) if w > 0 else np.zeros_like(x)
    return float(np.linalg.norm(x - lim))


def convergence_time(traj: FlowTrajectory, metric: Callable[[np.ndarray], float], eps: float) -> float:
    """First recorded s at which metric(U(s)) <= eps and stays there; inf if never."""
    vals = np.array([metric(u) for u in traj.points])
    inside = vals <= eps
    if not inside[-1]:
        return float("inf")
    last_out = np.flatnonzero(~inside)
    idx = 0 if last_out.size == 0 else last_out[-1] + 1
    return float(traj.s_grid[idx])
