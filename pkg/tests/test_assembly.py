import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sbip.assembly import (
    BroadPhaseConfig,
    InteractionEvaluator,
    InvalidPairError,
    PairElement,
    QuadratureSpec,
    assign_master_slave,
    build_candidate_pairs,
    evaluate_pair,
    self_interaction_pairs,
)
from sbip.beam import BeamMesh, eval_centerline
from sbip.potentials import PointPairLaw, SBIPParams, sbip_disk_cylinder
from sbip.scenario import straight_fiber
from sbip.solver import rotation_matrix
from sbip.verify import lj_prefactors_from_parallel_equilibrium

R = 0.1
G_EQ = 0.01


def lj_params(r_cutoff=np.inf, g_reg=0.008):
    k6, k12 = lj_prefactors_from_parallel_equilibrium(G_EQ, -1.0, 1.0, 1.0, R, R)
    return SBIPParams(R, R, 1.0, 1.0, [PointPairLaw(6, k6), PointPairLaw(12, k12)], g_reg=g_reg, r_cutoff=r_cutoff)


def element(p0, t0, p1, t1):
    from sbip.beam import fit_element_length

    d = np.r_[p0, t0, p1, t1].astype(float)
    return PairElement(d, fit_element_length(np.asarray(p0), np.asarray(t0), np.asarray(p1), np.asarray(t1)))


def crossing_pair(seed=0, gap=0.02):
    """Slightly curved elements crossing at an angle, about ``gap`` apart."""
    rng = np.random.default_rng(seed)
    z = 2 * R + gap
    s = element([-0.5, 0, 0], [1, 0.1, 0], [0.5, 0.05, 0], [1, -0.1, 0.05])
    m = element([0.1, -0.5, z], [0.3, 1, 0], [0.2, 0.5, z], [-0.2, 1, 0.05])
    s.dofs = s.dofs + 0.005 * rng.normal(size=12)
    m.dofs = m.dofs + 0.005 * rng.normal(size=12)
    s.ref_dofs, m.ref_dofs = s.dofs.copy(), m.dofs.copy()
    return s, m


def move(d, Q, shift):
    X = np.asarray(d).reshape(-1, 3) @ Q.T
    X[0::2] += shift
    return X.ravel()


# ---------------------------------------------------------------------------
# master/slave and quadrature


@pytest.mark.parametrize("a,b", [(7, 3), (3, 7)])
def test_smaller_id_is_slave(a, b):
    assert assign_master_slave(a, b) == (3, 7)
    assert assign_master_slave(a, b, swap=True) == (7, 3)


def test_self_pairing_rejected():
    with pytest.raises(InvalidPairError):
        assign_master_slave(5, 5)


def test_quadrature_spec_defaults_and_weights():
    q = QuadratureSpec()
    x, w = q.points_weights()
    assert q.n_points == 20 and len(x) == 20
    assert w.sum() == pytest.approx(2.0)
    assert np.all(np.diff(x) > 0)
    with pytest.raises(ValueError):
        QuadratureSpec(0, 3)


# ---------------------------------------------------------------------------
# single pair


def test_pair_beyond_cutoff_contributes_nothing():
    p = lj_params(r_cutoff=0.05)
    s = element([0, 0, 0], [1, 0, 0], [1, 0, 0], [1, 0, 0])
    m = element([0, 0, 1.0], [1, 0, 0], [1, 0, 1.0], [1, 0, 0])
    c = evaluate_pair(s, m, p)
    assert c.energy == 0.0
    assert not np.any(c.residual) and not np.any(c.stiffness)


@pytest.mark.parametrize("g_over_R", [0.01, 0.1, 1.0])
def test_parallel_elements_match_per_length_law(g_over_R):
    p = SBIPParams(R, R, 1.0, 1.0, [PointPairLaw(6, -1.0)])
    z = 2 * R + g_over_R * R
    s = element([0, 0, 0], [1, 0, 0], [1, 0, 0], [1, 0, 0])
    m = element([0, 0, z], [1, 0, 0], [1, 0, z], [1, 0, 0])
    c = evaluate_pair(s, m, p)
    exact = sbip_disk_cylinder(p, p.laws[0], g_over_R * R, 1.0).value
    assert c.energy == pytest.approx(float(exact), rel=1e-3)


@pytest.mark.parametrize("seed", range(3))
def test_residual_and_stiffness_match_finite_differences(seed):
    p = lj_params()
    s, m = crossing_pair(seed)
    c = evaluate_pair(s, m, p)
    d0 = np.r_[s.dofs, m.dofs]
    h = 1e-7
    r_fd = np.zeros(24)
    K_fd = np.zeros((24, 24))
    for i in range(24):
        out = []
        for sgn in (1, -1):
            d = d0.copy()
            d[i] += sgn * h
            s.dofs, m.dofs = d[:12], d[12:]
            out.append(evaluate_pair(s, m, p, xi0=c.xi))
        r_fd[i] = (out[0].energy - out[1].energy) / (2 * h)
        K_fd[:, i] = (out[0].residual - out[1].residual) / (2 * h)
    assert np.max(np.abs(r_fd - c.residual)) <= 1e-6 * np.max(np.abs(c.residual))
    assert np.max(np.abs(K_fd - c.stiffness)) <= 1e-4 * np.max(np.abs(c.stiffness))


def test_stiffness_is_symmetric():
    s, m = crossing_pair(5)
    K = evaluate_pair(s, m, lj_params()).stiffness
    assert np.max(np.abs(K - K.T)) <= 1e-8 * np.max(np.abs(K))


@settings(max_examples=25, deadline=None)
@given(
    seed=st.integers(0, 100),
    axis=st.tuples(st.floats(-1, 1), st.floats(-1, 1), st.floats(0.1, 1)),
    angle=st.floats(-3, 3),
    shift=st.tuples(st.floats(-10, 10), st.floats(-10, 10), st.floats(-10, 10)),
)
def test_energy_is_invariant_under_rigid_motion(seed, axis, angle, shift):
    p = lj_params()
    s, m = crossing_pair(seed)
    e0 = evaluate_pair(s, m, p, order=0).energy
    Q = rotation_matrix(axis, angle)
    s.dofs, m.dofs = move(s.dofs, Q, shift), move(m.dofs, Q, shift)
    e1 = evaluate_pair(s, m, p, order=0).energy
    assert e1 == pytest.approx(e0, rel=1e-12)


@pytest.mark.parametrize("seed", range(4))
def test_residual_conserves_linear_and_angular_momentum(seed):
    s, m = crossing_pair(seed)
    r = evaluate_pair(s, m, lj_params(), order=1).residual
    X = np.r_[s.dofs, m.dofs].reshape(8, 3)
    F = r.reshape(8, 3)
    scale = np.linalg.norm(r)
    pos = np.array([0, 2, 4, 6])
    assert np.linalg.norm(F[pos].sum(axis=0)) <= 1e-10 * scale
    # tangent DOFs transform like directions, so they carry a moment but no force
    moment = np.cross(X, F).sum(axis=0)
    assert np.linalg.norm(moment) <= 1e-10 * scale * max(1.0, np.abs(X).max())


def test_quadrature_doubling_changes_energy_little():
    s, m = crossing_pair(0, gap=0.05)
    p = lj_params()
    e = evaluate_pair(s, m, p, QuadratureSpec(2, 10), order=0).energy
    e2 = evaluate_pair(s, m, p, QuadratureSpec(4, 10), order=0).energy
    assert e2 == pytest.approx(e, rel=1e-3)


# ---------------------------------------------------------------------------
# broad phase


def two_fiber_mesh(offset, angle=np.pi / 2, n=8):
    P1, T1 = straight_fiber([-1, 0, 0], [1, 0, 0], n)
    d = np.array([np.cos(angle), np.sin(angle), 0.0])
    P2, T2 = straight_fiber(offset - d, offset + d, n)
    return BeamMesh.from_polylines([P1, P2], [T1, T2], [R, R])


def test_far_fibers_have_no_candidates():
    mesh = two_fiber_mesh(np.array([0, 0, 5.0]))
    p = lj_params(r_cutoff=0.1)
    assert build_candidate_pairs(mesh, mesh.ref_dofs, BroadPhaseConfig(), p, include_self=False) == []
    pairs = build_candidate_pairs(mesh, mesh.ref_dofs, BroadPhaseConfig(), p)
    assert all(mesh.elem_fiber[a] == mesh.elem_fiber[b] for a, b in pairs)


def test_crossing_element_pair_is_found():
    mesh = two_fiber_mesh(np.array([0.0, 0.0, 2 * R + 0.05]))
    pairs = build_candidate_pairs(mesh, mesh.ref_dofs, BroadPhaseConfig(), lj_params(r_cutoff=0.1))
    # the crossing happens at the shared node of elements 3/4 and 11/12
    assert {(3, 11), (3, 12), (4, 11), (4, 12)} <= set(pairs)
    assert all(a < b for a, b in pairs)


def test_adjacent_elements_never_paired():
    mesh = two_fiber_mesh(np.array([0, 0, 0.5]))
    pairs = build_candidate_pairs(mesh, mesh.ref_dofs, BroadPhaseConfig(), lj_params(r_cutoff=10.0))
    nodes = mesh.elements
    for a, b in pairs:
        assert not set(nodes[a]) & set(nodes[b])


def test_straight_fiber_self_pairs_are_filtered():
    P, T = straight_fiber([0, 0, 0], [8, 0, 0], 8)
    mesh = BeamMesh.from_polylines([P], [T], [R])
    assert len(self_interaction_pairs(mesh)) == 21
    assert build_candidate_pairs(mesh, mesh.ref_dofs, BroadPhaseConfig(), lj_params(r_cutoff=0.1)) == []


def test_near_closed_loop_tip_pair_is_found():
    n = 16
    # circle of radius 1 with an opening of 2R + 0.05 between the tips
    gap = 2 * R + 0.05
    phi = np.linspace(0, 2 * np.pi - gap, n + 1)
    P = np.stack([np.cos(phi), np.sin(phi), 0 * phi], 1)
    T = np.stack([-np.sin(phi), np.cos(phi), 0 * phi], 1)
    mesh = BeamMesh.from_polylines([P], [T], [R])
    pairs = build_candidate_pairs(mesh, mesh.ref_dofs, BroadPhaseConfig(), lj_params(r_cutoff=0.1))
    assert (0, n - 1) in pairs


def min_surface_gap(mesh, dofs, a, b, n=120):
    xi = np.linspace(-1, 1, n)
    E = mesh.element_dofs()
    pa = eval_centerline(dofs[E[a]], mesh.l_ele[a], xi)[0]
    pb = eval_centerline(dofs[E[b]], mesh.l_ele[b], xi)[0]
    d = np.linalg.norm(pa[:, None] - pb[None], axis=-1).min()
    return d - mesh.radius[a] - mesh.radius[b]


def random_mesh(rng, n_fibers=3, n_el=4):
    Ps, Ts = [], []
    for _ in range(n_fibers):
        a = rng.uniform(-1, 1, 3)
        b = a + rng.normal(size=3)
        P, T = straight_fiber(a, b, n_el)
        P = P + 0.05 * rng.normal(size=P.shape)
        Ts.append(T + 0.2 * rng.normal(size=T.shape))
        Ps.append(P)
    Ts = [T / np.linalg.norm(T, axis=1, keepdims=True) for T in Ts]
    return BeamMesh.from_polylines(Ps, Ts, [0.05] * n_fibers)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_broad_phase_never_misses_a_close_pair(seed):
    rng = np.random.default_rng(seed)
    mesh = random_mesh(rng)
    p = SBIPParams(0.05, 0.05, 1.0, 1.0, [PointPairLaw(6, -1.0)], r_cutoff=0.2)
    found = set(build_candidate_pairs(mesh, mesh.ref_dofs, BroadPhaseConfig(bucket_edge=0.3), p))
    for a in range(mesh.n_elements):
        for b in range(a + 1, mesh.n_elements):
            if set(mesh.elements[a]) & set(mesh.elements[b]):
                continue
            if min_surface_gap(mesh, mesh.ref_dofs, a, b) <= p.r_cutoff:
                assert (a, b) in found


# ---------------------------------------------------------------------------
# global evaluator


def crossing_mesh():
    mesh = two_fiber_mesh(np.array([0.03, 0.02, 2 * R + 0.015]), angle=1.2)
    return mesh


def test_global_residual_matches_finite_differences():
    mesh = crossing_mesh()
    ev = InteractionEvaluator(mesh, lj_params(r_cutoff=0.1))
    d0 = mesh.ref_dofs.copy()
    E, r, K = ev.evaluate(d0)
    assert E < 0
    rng = np.random.default_rng(0)
    v = rng.normal(size=d0.size)
    h = 1e-7
    Ep = ev.evaluate(d0 + h * v, order=0, update_cache=False)[0]
    Em = ev.evaluate(d0 - h * v, order=0, update_cache=False)[0]
    assert (Ep - Em) / (2 * h) == pytest.approx(r @ v, rel=1e-6)
    rp = ev.evaluate(d0 + h * v, order=1, update_cache=False)[1]
    rm = ev.evaluate(d0 - h * v, order=1, update_cache=False)[1]
    Kv = K @ v
    assert np.max(np.abs((rp - rm) / (2 * h) - Kv)) <= 1e-4 * np.max(np.abs(Kv))


def test_swap_changes_only_roles():
    mesh = crossing_mesh()
    a = InteractionEvaluator(mesh, lj_params(r_cutoff=0.1))
    b = InteractionEvaluator(mesh, lj_params(r_cutoff=0.1), swap_master_slave=True)
    assert [p[::-1] for p in a.pairs(mesh.ref_dofs)] == b.pairs(mesh.ref_dofs)
    Ea, Eb = a.evaluate(mesh.ref_dofs)[0], b.evaluate(mesh.ref_dofs)[0]
    # both are approximations of the same interaction, not bitwise equal
    assert Eb == pytest.approx(Ea, rel=0.05)


def test_threaded_evaluation_matches_serial():
    mesh = crossing_mesh()
    serial = InteractionEvaluator(mesh, lj_params(r_cutoff=0.1))
    threaded = InteractionEvaluator(mesh, lj_params(r_cutoff=0.1), threads=3)
    E1, r1, K1 = serial.evaluate(mesh.ref_dofs)
    E2, r2, K2 = threaded.evaluate(mesh.ref_dofs)
    assert E2 == pytest.approx(E1, rel=1e-12)
    assert np.allclose(r2, r1, rtol=1e-12, atol=1e-14 * np.abs(r1).max())
    assert abs(K2 - K1).max() <= 1e-12 * abs(K1).max()


def test_serial_evaluation_is_bitwise_reproducible():
    mesh = crossing_mesh()
    ev = InteractionEvaluator(mesh, lj_params(r_cutoff=0.1))
    a = ev.evaluate(mesh.ref_dofs)
    ev.reset_cache()
    b = ev.evaluate(mesh.ref_dofs)
    assert a[0] == b[0] and np.array_equal(a[1], b[1])


def test_rigid_fibers_do_not_interact_with_each_other():
    mesh = crossing_mesh()
    ev = InteractionEvaluator(mesh, lj_params(r_cutoff=0.1), rigid_fibers=[0, 1])
    E, r, K = ev.evaluate(mesh.ref_dofs)
    assert E == 0.0 and not np.any(r)
