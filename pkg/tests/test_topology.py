from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_system
from qclandscape.core import ControlField, dagger, propagate, random_unitary, unitary_exp
from qclandscape.errors import EnumerationBoundError, InputError
from qclandscape.objectives import GateSpec, ObservableSpec, grad_field, hessian_field, phi1, phi2
from qclandscape.topology import (
    count_critical_values,
    critical_representative,
    enumerate_phi1_critical,
    enumerate_phi2_critical,
    gate_class_of,
    gate_class_point,
    manifold_dimension,
    phi1_signature,
    spectrum_data,
)


def _skew_basis(n):
    out = []
    for i in range(n):
        e = np.zeros((n, n), dtype=complex)
        e[i, i] = 1j
        out.append(e)
        for j in range(i + 1, n):
            a = np.zeros((n, n), dtype=complex)
            a[i, j], a[j, i] = 1, -1
            out.append(a)
            b = np.zeros((n, n), dtype=complex)
            b[i, j] = b[j, i] = 1j
            out.append(b)
    return out


def _vec(a):
    return np.concatenate([a.real.ravel(), a.imag.ravel()])


def _commutant_basis(h, tol=1e-9):
    """Skew-Hermitian matrices commuting with h, via the null space of A -> [A, h]."""
    basis = _skew_basis(h.shape[0])
    m = np.array([_vec(a @ h - h @ a) for a in basis]).T
    _, s, vt = np.linalg.svd(m)
    rank = int(np.sum(s > tol * max(1, s.max())))
    coeffs = vt[rank:]
    return [sum(c * b for c, b in zip(row, basis)) for row in coeffs]


def tangent_rank(u, rho, theta):
    """Dimension of span{A U : [A, Theta] = 0} + span{U B : [B, rho] = 0} inside u(N)."""
    vecs = [_vec(a @ u) for a in _commutant_basis(theta)] + [_vec(u @ b) for b in _commutant_basis(rho)]
    return int(np.linalg.matrix_rank(np.array(vecs), tol=1e-8))


def _kinematic_hessian(f, u, n):
    """Second derivatives of f(U exp(A)) over the u(N) basis, by central differences."""
    basis = _skew_basis(n)
    h = 1e-4
    d = len(basis)
    out = np.zeros((d, d))
    for i in range(d):
        for j in range(i, d):
            vals = []
            for a, b in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
                vals.append(f(u @ unitary_exp(h * (a * basis[i] + b * basis[j]))))
            out[i, j] = out[j, i] = (vals[0] - vals[1] - vals[2] + vals[3]) / (4 * h * h)
    return out


def _inertia(h, rtol=1e-6):
    ev = np.linalg.eigvalsh(h)
    tau = rtol * np.max(np.abs(ev))
    return int(np.sum(ev > tau)), int(np.sum(np.abs(ev) <= tau)), int(np.sum(ev < -tau))


def _nondegenerate_spec(rng, n):
    q, r = random_unitary(n, rng), random_unitary(n, rng)
    eps = np.sort(rng.dirichlet(np.ones(n)))[::-1]
    lam = np.sort(rng.normal(size=n))[::-1]
    return ObservableSpec(q @ np.diag(eps) @ dagger(q), r @ np.diag(lam) @ dagger(r)), eps, lam


def test_n3_six_critical_values(rng):
    spec, eps, lam = _nondegenerate_spec(rng, 3)
    records = enumerate_phi1_critical(spec)
    assert len(records) == 6
    expected = sorted((float(eps @ lam[list(p)]) for p in itertools.permutations(range(3))), reverse=True)
    assert np.allclose([r.value for r in records], expected, atol=1e-12)
    for r in records:
        u = r.representative
        comm = dagger(u) @ spec.theta @ u @ spec.rho0 - spec.rho0 @ dagger(u) @ spec.theta @ u
        assert np.linalg.norm(comm) < 1e-9
        assert phi1(u, spec) == pytest.approx(r.value, abs=1e-12)
    assert not records[0].is_saddle and not records[-1].is_saddle
    assert all(r.is_saddle for r in records[1:-1])


def test_signature_matches_kinematic_hessian(rng):
    spec, _, _ = _nondegenerate_spec(rng, 3)
    for r in enumerate_phi1_critical(spec):
        hk = _kinematic_hessian(lambda v: phi1(v, spec), r.representative, 3)
        assert _inertia(hk) == r.signature


def _degenerate_spec(rng, n):
    rho_mult = rng.integers(1, 3, size=rng.integers(1, n + 1))
    rho_eigs = np.repeat(rng.dirichlet(np.ones(rho_mult.size)), rho_mult)
    rho_eigs = rho_eigs[:n]
    rho_eigs = np.concatenate([rho_eigs, np.zeros(n - rho_eigs.size)])
    rho_eigs /= rho_eigs.sum()
    lam = np.repeat(rng.normal(size=n), rng.integers(1, 3, size=n))[:n]
    q, r = random_unitary(n, rng), random_unitary(n, rng)
    return ObservableSpec(q @ np.diag(rho_eigs) @ dagger(q), r @ np.diag(lam) @ dagger(r))


def test_manifold_dimension_matches_tangent_rank():
    rng = np.random.default_rng(5)
    checked = 0
    while checked < 10:
        n = int(rng.integers(3, 6))
        spec = _degenerate_spec(rng, n)
        sd = spectrum_data(spec)
        if len(sd.rho_blocks) == n and len(sd.theta_blocks) == n:
            continue
        for rec in enumerate_phi1_critical(spec):
            for perm in rec.members[:3]:
                u = critical_representative(sd, perm)
                assert manifold_dimension(sd, perm) == tangent_rank(u, spec.rho0, spec.theta)
                assert phi1_signature(sd, perm)[1] == manifold_dimension(sd, perm)
        checked += 1


def test_merged_records_share_value():
    spec = ObservableSpec(np.diag([1.0, 0, 0]), np.diag([1.0, 0, 0]))
    recs = enumerate_phi1_critical(spec)
    assert len(recs) == 2
    assert [r.value for r in recs] == [1.0, 0.0]
    assert recs[1].merged and len(recs[1].members) == 4


def test_enumeration_cap():
    with pytest.raises(EnumerationBoundError):
        enumerate_phi1_critical(ObservableSpec.transfer(9, 0, 1))


def test_count_critical_values():
    assert count_critical_values(4, "nondegenerate") == 24
    assert count_critical_values(7, "projector_pair") == 2
    assert count_critical_values(5, "gate") == 6
    with pytest.raises(InputError):
        count_critical_values(3, "other")


def test_gate_classes_values_and_signatures():
    classes = enumerate_phi2_critical(3)
    assert [c.value for c in classes] == [0.0, 4.0, 8.0, 12.0]
    assert [c.signature for c in classes] == [(9, 0, 0), (4, 4, 1), (1, 4, 4), (0, 0, 9)]


@pytest.mark.parametrize("n", [2, 3])
def test_gate_class_kinematic_hessian(rng, n):
    w = random_unitary(n, rng)
    for m in range(n + 1):
        u = gate_class_point(w, m, rng=rng)
        assert gate_class_of(u, w) == m
        assert phi2(u, GateSpec(w)) == pytest.approx(4 * (n - m), abs=1e-10)
        hk = _kinematic_hessian(lambda v: phi2(v, GateSpec(w)), u, n)
        ip, _, im = _inertia(hk)
        assert (ip, im) == (m * m, (n - m) ** 2)


def test_gate_class_field_hessian(rng):
    # place a random field's propagator on a class-1 critical point by choosing W
    n, m = 3, 1
    system = random_system(rng, n)
    fld = ControlField.random_smooth(rng, system.horizon, 30, 1, 1.0)
    traj = propagate(system, fld)
    v = random_unitary(n, rng)
    d = np.diag([1.0] * m + [-1.0] * (n - m))
    w = traj.final @ v @ d @ dagger(v)
    hp, h0, hm = hessian_field(traj, GateSpec(w)).signature()
    assert (hp, hm) == (m * m, (n - m) ** 2)
    assert h0 == 30 - m * m - (n - m) ** 2


def test_gate_class_of_rejects_noncritical(rng):
    with pytest.raises(InputError):
        gate_class_of(random_unitary(3, rng), np.eye(3))


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 5), st.integers(0, 2**31 - 1))
def test_every_representative_is_critical(n, seed):
    rng = np.random.default_rng(seed)
    spec, _, _ = _nondegenerate_spec(rng, n)
    sd = spectrum_data(spec)
    perm = tuple(rng.permutation(n))
    phases = rng.uniform(0, 2 * np.pi, n)
    u = critical_representative(sd, perm, phases)
    th = dagger(u) @ spec.theta @ u
    assert np.linalg.norm(th @ spec.rho0 - spec.rho0 @ th) < 1e-9
    assert np.allclose(dagger(u) @ u, np.eye(n), atol=1e-12)
    hp, h0, hm = phi1_signature(sd, perm)
    assert hp + h0 + hm == n * n and h0 == n


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 5), st.integers(0, 2**31 - 1))
def test_gate_signature_sums(n, seed):
    for c in enumerate_phi2_critical(n):
        assert sum(c.signature) == n * n
        assert c.signature[1] == 2 * c.m * (n - c.m)


def test_n4_representatives_are_field_critical(rng):
    # realize each critical point as U(T) of a fixed field by rotating Theta
    spec, _, _ = _nondegenerate_spec(rng, 4)
    system = random_system(rng, 4)
    traj = propagate(system, ControlField.random_smooth(rng, system.horizon, 30, 1, 1.0))
    records = enumerate_phi1_critical(spec)
    assert len(records) == 24
    for rec in records:
        r = traj.final @ dagger(rec.representative)
        moved = ObservableSpec(spec.rho0, r @ spec.theta @ dagger(r))
        assert phi1(traj.final, moved) == pytest.approx(rec.value, abs=1e-12)
        assert np.max(np.abs(grad_field(traj, moved).values)) < 1e-6


def test_n4_intermediate_permutations_are_saddles(rng):
    spec, _, _ = _nondegenerate_spec(rng, 4)
    records = enumerate_phi1_critical(spec)
    assert records[0].signature[0] == 0 and records[-1].signature[2] == 0
    for rec in records[1:-1]:
        assert rec.signature[0] > 0 and rec.signature[2] > 0


def test_manifold_dimension_extremes(rng):
    spec, _, _ = _nondegenerate_spec(rng, 4)
    sd = spectrum_data(spec)
    assert all(manifold_dimension(sd, p) == 4 for p in itertools.permutations(range(4)))
    n = 5
    proj = ObservableSpec.transfer(n, 0, 0)
    sd = spectrum_data(proj)
    top = enumerate_phi1_critical(proj)[0]
    assert top.value == pytest.approx(1.0)
    assert manifold_dimension(sd, top.members[0]) == n * n - (2 * n - 2)


def test_n2_gate_classes():
    classes = enumerate_phi2_critical(2)
    assert [c.value for c in classes] == [0.0, 4.0, 8.0]
    assert [(c.signature[0], c.signature[2]) for c in classes] == [(4, 0), (1, 1), (0, 4)]
    # W^dag U = diag(1, -1): Hessian of the realized field
    rng = np.random.default_rng(7)
    system = random_system(rng, 2)
    traj = propagate(system, ControlField.random_smooth(rng, system.horizon, 20, 1, 1.0))
    w = traj.final @ np.diag([1.0, -1.0])
    hp, _, hm = hessian_field(traj, GateSpec(w)).signature()
    assert (hp, hm) == (1, 1)


def test_critical_counts_exact():
    assert count_critical_values(5, "nondegenerate") == 120
    assert count_critical_values(7, "gate") == 8
    assert count_critical_values(3, "gate") == 4
