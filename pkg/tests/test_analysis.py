from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qclandscape.analysis import (
    KrausLift,
    abnormal_extremal_field,
    abnormal_extremal_su2,
    kraus_lift_objective,
    kraus_operators,
    lie_rank,
    open_landscape_extrema,
    three_level_oracle,
    trilinear_adjoint_hamiltonian,
    trilinear_min_time,
    two_qubit_conjugation_check,
)
from qclandscape.benchmarks import SX, SY, SZ, ladder_system, pauli_system
from qclandscape.core import ControlField, ControlSystem, dagger, propagate, random_density_matrix, random_hermitian, random_unitary
from qclandscape.errors import InputError
from qclandscape.flows import u_flow_phi1
from qclandscape.objectives import ObservableSpec, phi1
from qclandscape.tracking import correlation_matrix


def brute_force_lie_dimension(gens, rng, words=400, max_len=8):
    """Rank of random nested commutators of random generator words, re-orthogonalized in random order."""
    n = gens[0].shape[0]
    mats = [g - np.trace(g) / n * np.eye(n) for g in gens]
    for _ in range(words):
        length = int(rng.integers(2, max_len + 1))
        idx = rng.integers(0, len(gens), size=length)
        x = gens[idx[0]]
        for i in idx[1:]:
            x = gens[i] @ x - x @ gens[i]
            x = x / max(np.linalg.norm(x), 1e-300)
        mats.append(x)
    vecs = np.array([np.concatenate([m.real.ravel(), m.imag.ravel()]) for m in mats])
    vecs = vecs[rng.permutation(len(vecs))]
    q, _ = np.linalg.qr(vecs.T)
    q, r = np.linalg.qr(q.T @ vecs.T)
    sv = np.linalg.svd(vecs, compute_uv=False)
    return int(np.sum(sv > 1e-9 * sv[0])) + 1  # identity adjoined


def test_pauli_rank_four():
    rep = lie_rank(pauli_system())
    assert rep.dimension_found == 4 and rep.su_dimension == 3 and rep.controllable


def test_commuting_system_uncontrollable():
    rep = lie_rank(ControlSystem(np.diag([0.0, 1.0, 3.0]), [np.diag([1.0, -1.0, 0.5])], 1.0))
    assert rep.dimension_found <= 3 and not rep.controllable


def test_ladder_five_full_rank_with_oracle():
    rng = np.random.default_rng(2)
    system = ladder_system(5, 1.0, rng=rng)
    rep = lie_rank(system)
    assert rep.dimension_found == 25 and rep.controllable and not rep.partial
    gens = [1j * system.h0, 1j * system.dipoles[0]]
    assert brute_force_lie_dimension(gens, rng) == 25


def test_decoupled_level_oracle_agrees():
    rng = np.random.default_rng(8)
    mu = np.zeros((3, 3))
    mu[0, 1] = mu[1, 0] = 1.0
    system = ControlSystem(np.diag([0.0, 1.0, 2.5]), [mu], 1.0)
    rep = lie_rank(system)
    assert not rep.controllable
    assert rep.dimension_found == brute_force_lie_dimension([1j * system.h0, 1j * mu], rng)


def test_depth_cap_marks_partial():
    system = ladder_system(5, 1.0, rng=np.random.default_rng(2))
    rep = lie_rank(system, depth_cap=1)
    assert rep.partial and rep.dimension_found < 25
    with pytest.raises(InputError):
        lie_rank(system, depth_cap=0)


@settings(max_examples=15, deadline=None)
@given(st.integers(2, 4), st.integers(0, 2**31 - 1))
def test_lie_rank_conjugation_invariant(n, seed):
    rng = np.random.default_rng(seed)
    h0 = np.diag(rng.normal(size=n))
    mu = np.diag(rng.normal(size=n - 1), 1)
    mu = mu + mu.T
    if rng.random() < 0.5:
        mu = np.diag(rng.normal(size=n))
    v = random_unitary(n, rng)
    a = lie_rank(ControlSystem(h0, [mu], 1.0))
    b = lie_rank(ControlSystem(v @ h0 @ dagger(v), [v @ mu @ dagger(v)], 1.0))
    assert a.dimension_found == b.dimension_found


def test_abnormal_extremal_formula():
    assert abnormal_extremal_su2(SZ + SX, SX) == pytest.approx(-1.0)
    assert abnormal_extremal_su2(SZ, SX) == 0.0
    with pytest.raises(InputError):
        abnormal_extremal_su2(np.eye(3), np.eye(3))


def _su2_condition(eps, horizon=3.0):
    system = ControlSystem(SZ + SX, [-SX], horizon)
    return correlation_matrix(propagate(system, ControlField.constant(eps, horizon, 60))).condition


def test_abnormal_extremal_makes_g_singular():
    system = ControlSystem(SZ + SX, [-SX], 3.0)
    eps = abnormal_extremal_field(system)
    assert eps == pytest.approx(-1.0)
    assert _su2_condition(eps) >= 1e8
    for delta in (0.3, -0.3, 0.5):
        assert _su2_condition(eps + delta) < 1e6


def test_three_level_oracle_values():
    res = three_level_oracle(1.0)
    assert res.value == pytest.approx(7.402203300817018, abs=1e-12)
    assert res.value == 0.75 * np.pi**2
    assert res.parameters["population"] > 1 - 1e-6
    assert res.parameters["path_fluence"] == pytest.approx(res.value, rel=1e-6)
    assert three_level_oracle(2.0).value == res.value / 2


def test_three_level_controls_match_reported_path():
    res = three_level_oracle(1.5, samples=301)
    tr = res.trajectory
    fl = np.trapezoid(tr["u1"] ** 2 + tr["u2"] ** 2, tr["t"])
    assert fl == pytest.approx(res.value, rel=1e-3)
    assert abs(tr["theta"][0]) < 1e-12 and abs(tr["phi"][-1] - np.pi / 2) < 1e-8


def test_trilinear_min_time():
    assert trilinear_min_time(2 * np.pi, 1.0).value == pytest.approx(np.sqrt(3) / 2)
    assert trilinear_min_time(2 * np.pi, 2.0).value == pytest.approx(np.sqrt(3) / 4)
    assert trilinear_min_time(0.0, 1.0).value == 0.0
    for kappa in np.linspace(0, 4, 17):
        a = trilinear_min_time(2 * np.pi * kappa, 1.3).value
        b = trilinear_min_time(2 * np.pi * (4 - kappa), 1.3).value
        assert a == pytest.approx(b, abs=1e-12)
    with pytest.raises(InputError):
        trilinear_min_time(-1.0, 1.0)


def test_trilinear_adjoint_is_skew():
    h = trilinear_adjoint_hamiltonian(0.3, 1.0, 1.0, 2.0)
    assert h.shape == (8, 8)
    assert np.allclose(h, -dagger(h))


def test_two_qubit_conjugation_identities():
    errs = two_qubit_conjugation_check()
    assert errs["plus"] < 1e-12 and errs["minus"] < 1e-12


def test_kraus_reduces_to_closed_system(rng):
    rho_s, theta = random_density_matrix(2, rng), random_hermitian(2, rng)
    lift = KrausLift(rho_s, np.diag([1.0, 0.0]), theta)
    us = random_unitary(2, rng)
    u = np.kron(us, np.eye(2))
    closed = phi1(us, ObservableSpec(rho_s, theta))
    assert kraus_lift_objective(lift, u) == pytest.approx(closed, abs=1e-12)
    assert kraus_lift_objective(lift, u, "kraus") == pytest.approx(closed, abs=1e-12)
    assert kraus_lift_objective(lift, np.eye(4)) == pytest.approx(np.trace(rho_s @ theta).real)


def test_kraus_operators_trace_preserving(rng):
    lift = KrausLift(random_density_matrix(2, rng), random_density_matrix(3, rng), random_hermitian(2, rng))
    ks = kraus_operators(lift, random_unitary(6, rng))
    assert ks.shape == (9, 2, 2)
    assert np.allclose(np.einsum("kji,kjl->il", ks.conj(), ks), np.eye(2), atol=1e-10)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 3), st.integers(1, 3), st.integers(0, 2**31 - 1))
def test_kraus_dual_evaluation(n, le, seed):
    rng = np.random.default_rng(seed)
    lift = KrausLift(random_density_matrix(n, rng), random_density_matrix(le, rng), random_hermitian(n, rng))
    u = random_unitary(n * le, rng)
    assert abs(kraus_lift_objective(lift, u, "lifted") - kraus_lift_objective(lift, u, "kraus")) < 1e-10


def test_open_extrema_forced_pairing():
    lift = KrausLift(np.diag([1.0, 0.0]), np.eye(2) / 2, np.diag([1.0, 0.0]))
    ext = open_landscape_extrema(lift)
    assert ext.maximum == pytest.approx(1.0) and ext.minimum == pytest.approx(0.0)
    assert ext.cross_checked


def test_open_extrema_decoupled_matches_closed(rng):
    rho_s, theta = random_density_matrix(3, rng), random_hermitian(3, rng)
    ext = open_landscape_extrema(KrausLift(rho_s, np.array([[1.0]]), theta))
    p = np.sort(np.linalg.eigvalsh(rho_s))
    q = np.sort(np.linalg.eigvalsh(theta))
    assert ext.maximum == pytest.approx(p @ q) and ext.minimum == pytest.approx(p @ q[::-1])


def test_environment_broadens_attainable_range():
    # maximally mixed system cannot move in a closed setting; a pure environment lets it purify
    rho_s, theta = np.eye(2) / 2, np.diag([1.0, -1.0])
    closed = open_landscape_extrema(KrausLift(rho_s, np.array([[1.0]]), theta))
    opened = open_landscape_extrema(KrausLift(rho_s, np.diag([1.0, 0.0]), theta))
    assert closed.maximum == pytest.approx(0.0)
    assert opened.maximum == pytest.approx(1.0)
    assert opened.maximum >= closed.maximum
    assert opened.minimum <= closed.minimum


def test_open_extrema_above_cap_warns(rng):
    lift = KrausLift(random_density_matrix(3, rng), random_density_matrix(3, rng), random_hermitian(3, rng))
    with pytest.warns(UserWarning):
        ext = open_landscape_extrema(lift)
    assert not ext.cross_checked


def test_lifted_flows_reach_maximum():
    lift = KrausLift(np.diag([0.8, 0.2]), np.diag([0.7, 0.3]), np.diag([1.0, -1.0]))
    target = open_landscape_extrema(lift).maximum
    rng = np.random.default_rng(12)
    for _ in range(4):
        traj = u_flow_phi1(random_unitary(4, rng), lift.lifted_spec(), 60.0, 1200)
        assert abs(traj.final_value - target) < 1e-6


def test_kraus_input_validation():
    with pytest.raises(InputError):
        KrausLift(np.eye(2), np.eye(2) / 2, np.eye(2))
    lift = KrausLift(np.eye(2) / 2, np.eye(2) / 2, SY)
    with pytest.raises(InputError):
        kraus_lift_objective(lift, np.eye(2))
    with pytest.raises(InputError):
        kraus_lift_objective(lift, np.eye(4), route="other")
