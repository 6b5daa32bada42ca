"""Tracking in propagator space: the correlation matrix G, unitary and geodesic
tracks, observable tracks, and simulated-measurement state reconstruction.

Hermitian matrices are vectorized into R^{N^2} row-major over the upper
triangle: the diagonal entry A_ii, then sqrt(2) Re A_ij and sqrt(2) Im A_ij
for j > i.  With this packing v(A) . v(B) = Tr(A B) for Hermitian A, B, so
G is real symmetric.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .core import (
    ControlField,
    ControlSystem,
    as_matrix,
    dagger,
    geodesic_point,
    principal_log_unitary,
    propagate,
)
from .errors import (
    ConditionAbort,
    ConvergenceError,
    DivergenceAbort,
    InputError,
)
from .homotopy import HomotopyTrajectory
from .objectives import ObservableSpec, grad_phi1_field, phi1

CONDITION_CAP = 1e8
RIDGE_SCALE = 1e-10
RANK_RTOL = 1e-10

__all__ = [
    "CorrelationMatrix",
    "TrackSpec",
    "MeasurementRecord",
    "MLEResult",
    "hermitian_vector",
    "hermitian_from_vector",
    "correlation_matrix",
    "track_unitary",
    "geodesic_observable_track",
    "multi_observable_tracks",
    "observable_constraint_rank",
    "state_constraint_rank",
    "field_gradient_rank",
    "simulate_measurements",
    "log_likelihood",
    "mle_reconstruct",
    "pauli_povm",
]


@lru_cache(maxsize=None)
def _vec_layout(n: int):
    rows, cols, kinds = [], [], []
    for i in range(n):
        rows.append(i), cols.append(i), kinds.append(0)
        for j in range(i + 1, n):
            rows += [i, i]
            cols += [j, j]
            kinds += [1, 2]
    return np.array(rows), np.array(cols), np.array(kinds)


def hermitian_vector(a: np.ndarray) -> np.ndarray:
    """Real N^2 packing of Hermitian matrices; works on stacks (..., N, N)."""
    a = np.asarray(a)
    n = a.shape[-1]
    rows, cols, kinds = _vec_layout(n)
    el = a[..., rows, cols]
    return np.where(kinds == 0, el.real, np.where(kinds == 1, np.sqrt(2) * el.real, np.sqrt(2) * el.imag))


def hermitian_from_vector(v: np.ndarray, n: int) -> np.ndarray:
    """Inverse of `hermitian_vector` for a single vector."""
    rows, cols, kinds = _vec_layout(n)
    a = np.zeros((n, n), dtype=complex)
    v = np.asarray(v, dtype=float)
    for val, i, j, kd in zip(v, rows, cols, kinds):
        if kd == 0:
            a[i, i] = val
        elif kd == 1:
            a[i, j] += val / np.sqrt(2)
            a[j, i] += val / np.sqrt(2)
        else:
            a[i, j] += 1j * val / np.sqrt(2)
            a[j, i] -= 1j * val / np.sqrt(2)
    return a


def _traceless_basis(n: int) -> np.ndarray:
    """Orthonormal basis (columns) of the complement of v(I)/sqrt(N) in R^{N^2}."""
    ident = hermitian_vector(np.eye(n)) / np.sqrt(n)
    q, _ = np.linalg.qr(np.column_stack([ident, np.eye(n * n)]))
    return q[:, 1:n * n]


@dataclass(frozen=True, eq=False)
class CorrelationMatrix:
    """G and its conditioning on the reachable directions.

    When every dipole is traceless the identity direction is unreachable;
    ``basis`` then spans its complement (the su(N) directions) and
    ``condition`` refers to G restricted there.
    """

    g: np.ndarray
    condition: float
    traceless: bool
    basis: np.ndarray

    @property
    def reduced(self) -> np.ndarray:
        return self.basis.T @ self.g @ self.basis


def correlation_matrix(traj, traceless: bool | None = None) -> CorrelationMatrix:
    """G = sum over intervals and channels of dt v(mu_bar) v(mu_bar)^T."""
    n = traj.system.dim
    vecs = hermitian_vector(traj.dipole_averages)  # (K, m, N^2)
    flat = vecs.reshape(-1, n * n)
    g = traj.dt * flat.T @ flat
    g = 0.5 * (g + g.T)
    if traceless is None:
        traceless = all(
            abs(np.trace(mu)) <= 1e-12 * max(1.0, np.linalg.norm(mu)) for mu in traj.system.dipoles
        )
    basis = _traceless_basis(n) if traceless else np.eye(n * n)
    red = basis.T @ g @ basis
    ev = np.linalg.eigvalsh(red)
    cond = float(np.inf) if ev[0] <= 0 else float(ev[-1] / ev[0])
    return CorrelationMatrix(g, cond, bool(traceless), basis)


@dataclass(frozen=True, eq=False)
class TrackSpec:
    """Target path in U(N) for `track_unitary`.

    kind 'geodesic' follows the geodesic from U(T; field0) to `target`;
    kind 'unitary_path' follows ``path(s)`` which must start at U(T; field0).
    ``regularization`` None means the default ridge with the condition cap
    enforced; an explicit value disables the cap.
    """

    kind: str = "geodesic"
    target: np.ndarray | None = None
    path: Callable[[float], np.ndarray] | None = None
    tolerance: float = 1e-3
    regularization: float | None = None
    condition_cap: float = CONDITION_CAP
    corrector_iters: int = 4

    def __post_init__(self):
        if self.tolerance <= 0:
            raise InputError("tolerance must be positive")
        if self.kind == "geodesic" and self.target is None:
            raise InputError("geodesic tracking needs a target unitary")
        if self.kind == "unitary_path" and self.path is None:
            raise InputError("unitary_path tracking needs a path callable")
        if self.kind not in ("geodesic", "unitary_path"):
            raise InputError(f"unknown track kind {self.kind!r}")
        if self.regularization is not None and self.regularization < 0:
            raise InputError("regularization must be nonnegative")


def _tracking_update(traj, corr: CorrelationMatrix, v_target: np.ndarray, f: np.ndarray | None, ds: float, ridge: float):
    """Field increment realizing the generator v_target to first order, plus the free function."""
    n = traj.system.dim
    k, m = traj.field.steps, traj.system.n_controls
    vmu = hermitian_vector(traj.dipole_averages)  # (K, m, N^2)
    rhs = v_target.copy()
    if f is not None:
        alpha = traj.dt * np.einsum("kmv,km->v", vmu, f)
        rhs = rhs - ds * alpha
    b = corr.basis
    x = np.linalg.solve(corr.reduced + ridge * np.eye(b.shape[1]), b.T @ rhs)
    delta = np.einsum("kmv,v->km", vmu, b @ x)
    if f is not None:
        delta = delta + ds * f
    return delta


def track_unitary(
    system: ControlSystem,
    field0: ControlField,
    spec: TrackSpec,
    s_steps: int,
    free_function: Callable[[float, ControlField], np.ndarray] | None = None,
) -> HomotopyTrajectory:
    """Follow a path in U(N) by solving the linear field-response equation at each step.

    Each step aims at U_track(s + ds) with a Newton-type update through the
    regularized correlation matrix, followed by up to `corrector_iters`
    corrections.  Per-step residual ||U(T) - U_track(s)||_F and cond(G)
    are logged in ``extra``.
    """
    if s_steps < 1:
        raise InputError("s_steps must be positive")
    n = system.dim
    traj = propagate(system, field0)
    u_start = traj.final
    if spec.kind == "geodesic":
        w = as_matrix(spec.target)
        # traceless dipoles cannot move det U(T), so stay on the fixed-determinant geodesic
        special = correlation_matrix(traj).traceless
        if special:
            d = np.linalg.det(dagger(u_start) @ w)
            if abs(d - 1.0) > spec.tolerance:
                raise InputError("target determinant differs from det U(T; field0); unreachable with traceless dipoles")
            w = w * d ** (-1.0 / n)

        def path(s):
            return geodesic_point(u_start, w, s, special=special)
    else:
        path = spec.path
        if np.linalg.norm(as_matrix(path(0.0)) - u_start) > spec.tolerance:
            raise InputError("track does not start at U(T; field0)")

    def ridge_for(corr):
        if spec.regularization is not None:
            return spec.regularization
        if corr.condition > spec.condition_cap:
            return None
        return RIDGE_SCALE * np.trace(corr.g) / n**2

    ds = 1.0 / s_steps
    fld = field0
    s_grid = [0.0]
    fields = [fld.values.copy()]
    residuals = [0.0]
    conds = []
    fluences = [fld.fluence()]
    for j in range(1, s_steps + 1):
        s = j * ds
        target = as_matrix(path(s))
        for it in range(spec.corrector_iters + 1):
            corr = correlation_matrix(traj)
            if it == 0:
                conds.append(corr.condition)
            ridge = ridge_for(corr)
            if ridge is None:
                raise ConditionAbort(
                    f"cond(G) = {corr.condition:.3g} exceeds cap {spec.condition_cap:.1g} at s={s - ds:.4g}",
                    s=s - ds,
                    condition=corr.condition,
                )
            gen = principal_log_unitary(dagger(traj.final) @ target)
            v_target = hermitian_vector(-1j * gen)
            f = None
            if it == 0 and free_function is not None:
                f = np.asarray(free_function(s, fld), dtype=float)
                f = f - f.mean(axis=0, keepdims=True)
            delta = _tracking_update(traj, corr, v_target, f, ds, ridge)
            fld = fld.with_values(fld.values + delta)
            traj = propagate(system, fld)
            res = float(np.linalg.norm(traj.final - target))
            if res < 0.1 * spec.tolerance:
                break
        if res > 10 * spec.tolerance:
            raise DivergenceAbort(f"tracking residual {res:.3g} at s={s:.4g}", s=s, residual=res)
        s_grid.append(s)
        fields.append(fld.values.copy())
        residuals.append(res)
        fluences.append(fld.fluence())
    conds.append(correlation_matrix(traj).condition)
    return HomotopyTrajectory(
        s_grid=np.array(s_grid),
        fields=np.array(fields),
        observable=np.array(residuals),
        fluence=np.array(fluences),
        drift=np.array(residuals),
        horizon=field0.horizon,
        extra={"residual": np.array(residuals), "condition": np.array(conds), "final_unitary": traj.final},
    )


def geodesic_observable_track(u0, w, spec: ObservableSpec, s_grid) -> np.ndarray:
    """Observable values phi1(U(s)) along the geodesic from u0 to w."""
    return np.array([phi1(geodesic_point(u0, w, s), spec) for s in np.asarray(s_grid, dtype=float)])


def _check_observables(observables: Sequence[np.ndarray], n: int) -> np.ndarray:
    obs = np.array([np.asarray(o, dtype=complex) for o in observables])
    if not 1 <= len(obs) <= n * n - 1:
        raise InputError(f"need between 1 and N^2-1 = {n * n - 1} observables")
    vec = hermitian_vector(obs)
    gram = vec @ vec.T
    ev = np.linalg.eigvalsh(gram)
    if ev[0] <= RANK_RTOL * ev[-1]:
        raise InputError("observable set is linearly dependent")
    return obs


def multi_observable_tracks(u_track: Callable[[float], np.ndarray], observables, s_grid, rho0) -> np.ndarray:
    """Tracks P_i(s) = Tr(U(s) rho0 U(s)^dag Theta_i), shape (len(s_grid), count)."""
    rho0 = np.asarray(rho0, dtype=complex)
    obs = _check_observables(observables, rho0.shape[0])
    out = []
    for s in np.asarray(s_grid, dtype=float):
        u = as_matrix(u_track(s))
        st = u @ rho0 @ dagger(u)
        out.append(np.einsum("ij,oji->o", st, obs).real)
    return np.array(out)


def _rank(mat: np.ndarray, rtol: float = 1e-9) -> int:
    sv = np.linalg.svd(mat, compute_uv=False)
    if sv.size == 0 or sv[0] == 0:
        return 0
    return int(np.sum(sv > rtol * sv[0]))


def observable_constraint_rank(u, rho0, observables) -> int:
    """Rank of the kinematic gradients v(-i [U^dag Theta_i U, rho0]) of the observable set."""
    u = as_matrix(u)
    rho0 = np.asarray(rho0, dtype=complex)
    rows = []
    for th in observables:
        h = dagger(u) @ np.asarray(th) @ u
        rows.append(hermitian_vector(-1j * (h @ rho0 - rho0 @ h)))
    return _rank(np.array(rows))


def state_constraint_rank(rho0) -> int:
    """Number of independent directions in which a unitary step moves the state rho0.

    This is N^2 minus the dimension of the commutant of rho0, i.e. the rank
    of the unitary-tracking constraints as seen through the state.
    """
    rho0 = np.asarray(rho0, dtype=complex)
    n = rho0.shape[0]
    basis = np.eye(n * n)
    rows = [hermitian_vector(-1j * (hermitian_from_vector(b, n) @ rho0 - rho0 @ hermitian_from_vector(b, n))) for b in basis]
    return _rank(np.array(rows))


def field_gradient_rank(traj, rho0, observables) -> int:
    """Rank of the stacked field gradients of several observables."""
    rows = [grad_phi1_field(traj, ObservableSpec(rho0, th)).flat for th in observables]
    return _rank(np.array(rows))


# --------------------------------------------------------------------------
# simulated measurements and maximum likelihood


@dataclass(frozen=True, eq=False)
class MeasurementRecord:
    povm: np.ndarray  # (n_effects, N, N)
    counts: np.ndarray
    n_total: int

    def __post_init__(self):
        povm = np.array([np.asarray(f, dtype=complex) for f in self.povm])
        counts = np.asarray(self.counts, dtype=np.int64)
        n = povm.shape[-1]
        if np.linalg.norm(povm.sum(axis=0) - np.eye(n)) > 1e-10:
            raise InputError("POVM effects must sum to the identity")
        for f in povm:
            if np.linalg.eigvalsh(0.5 * (f + dagger(f))).min() < -1e-12:
                raise InputError("POVM effects must be positive semidefinite")
        if counts.shape != (len(povm),) or np.any(counts < 0):
            raise InputError("counts must be nonnegative, one per effect")
        if int(counts.sum()) != int(self.n_total):
            raise InputError("counts must sum to n_total")
        object.__setattr__(self, "povm", povm)
        object.__setattr__(self, "counts", counts)

    @property
    def dim(self) -> int:
        return self.povm.shape[-1]

    @property
    def informationally_complete(self) -> bool:
        return _rank(hermitian_vector(0.5 * (self.povm + dagger(self.povm)))) == self.dim**2


def pauli_povm() -> np.ndarray:
    """Six-outcome qubit POVM: eigenprojectors of X, Y, Z, each weighted 1/3."""
    kets = [
        np.array([1, 1]) / np.sqrt(2),
        np.array([1, -1]) / np.sqrt(2),
        np.array([1, 1j]) / np.sqrt(2),
        np.array([1, -1j]) / np.sqrt(2),
        np.array([1, 0]),
        np.array([0, 1]),
    ]
    return np.array([np.outer(k, np.conj(k)) / 3.0 for k in kets])


def simulate_measurements(rho, povm, n: int, seed: int | np.random.Generator) -> MeasurementRecord:
    """Multinomial counts with outcome probabilities Tr(rho F_i)."""
    rho = np.asarray(rho, dtype=complex)
    povm = np.asarray(povm, dtype=complex)
    if n < 1:
        raise InputError("n must be positive")
    p = np.einsum("ij,fji->f", rho, povm).real
    if p.min() < -1e-12:
        raise InputError("negative outcome probability")
    p = np.clip(p, 0.0, None)
    p /= p.sum()
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    counts = rng.multinomial(n, p)
    return MeasurementRecord(povm, counts, n)


def log_likelihood(rho, record: MeasurementRecord) -> float:
    p = np.einsum("ij,fji->f", np.asarray(rho), record.povm).real
    mask = record.counts > 0
    if np.any(p[mask] <= 0):
        return -np.inf
    return float(np.sum(record.counts[mask] * np.log(p[mask])))


@dataclass(eq=False)
class MLEResult:
    rho: np.ndarray
    loglik: np.ndarray  # history, nondecreasing
    converged: bool
    identifiable: bool
    iterations: int


def mle_reconstruct(record: MeasurementRecord, max_iter: int = 20000, tol: float = 1e-10) -> MLEResult:
    """Maximum-likelihood density matrix with rho = T^dag T / Tr(T^dag T).

    Each iteration sets T <- T (I + e R), R = sum (n_i / (n p_i)) F_i, with
    e chosen by backtracking so the likelihood never decreases.  The
    stationarity residual ||R rho - rho||_F decides convergence.
    """
    n = record.dim
    mask = record.counts > 0
    freq = record.counts[mask] / record.n_total
    effects = record.povm[mask]
    t = np.eye(n, dtype=complex) / np.sqrt(n)
    rho = dagger(t) @ t
    hist = [log_likelihood(rho, record)]
    step = 1.0
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        p = np.einsum("ij,fji->f", rho, effects).real
        r = np.einsum("f,fij->ij", freq / p, effects)
        resid = np.linalg.norm(r @ rho - rho)
        if resid < tol:
            converged = True
            break
        step = min(step * 2.0, 1e8)
        while True:
            tn = t @ (np.eye(n) + step * r)
            tn /= np.sqrt(np.trace(dagger(tn) @ tn).real)
            rn = dagger(tn) @ tn
            ln = log_likelihood(rn, record)
            if ln >= hist[-1]:
                break
            step *= 0.5
            if step < 1e-16:
                ln = hist[-1]
                tn, rn = t, rho
                break
        t, rho = tn, 0.5 * (rn + dagger(rn))
        hist.append(ln)
    if not converged:
        raise ConvergenceError(f"MLE did not converge in {max_iter} iterations", residual=float(resid))
    return MLEResult(rho, np.array(hist), converged, record.informationally_complete, it)
