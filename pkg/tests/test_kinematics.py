import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sbip.beam import eval_centerline, hermite_basis
from sbip.kinematics import (
    INTERIOR,
    DegenerateKinematicsError,
    ProjectionError,
    SingularProjectionError,
    angle_state,
    closest_point_projection,
    first_variations,
    pair_kinematics,
    project_batch,
    second_variations,
    stiffness_from_factors,
)
from sbip.solver import rotation_matrix

STRAIGHT = np.r_[0, 0, 0, 1, 0, 0, 2, 0, 0, 1, 0, 0.0]


def curved_pair(seed=0):
    """A slave element crossing above a gently curved master element."""
    rng = np.random.default_rng(seed)
    master = np.r_[0, 0, 0, 1, 0.2, 0, 1, 0.1, 0, 1, -0.2, 0.0] + 0.02 * rng.normal(size=12)
    slave = np.r_[0.5, -0.4, 0.3, 0.2, 1, 0.1, 0.6, 0.5, 0.35, -0.1, 1, 0.0] + 0.02 * rng.normal(size=12)
    return slave, 1.0, master, 1.0


def state(slave, l1, master, l2, xi1, R1=0.0, R2=0.0, guess=None):
    B = hermite_basis(xi1, l1)
    X1 = slave.reshape(4, 3)
    r1, a1 = B.N @ X1, B.dN @ X1
    cps = closest_point_projection(r1, master, l2, guess, R1, R2)
    angle_state(a1, cps)
    return cps, B


# ---------------------------------------------------------------------------
# projection


def test_perpendicular_foot_on_straight_segment():
    cps = closest_point_projection([1, 1, 0], STRAIGHT, 2.0)
    assert cps.xi2c == pytest.approx(0.0, abs=1e-14)
    assert cps.d_ul_norm == pytest.approx(1.0)
    assert np.allclose(cps.n_ul, [0, 1, 0])
    assert not cps.on_boundary


def test_gap_subtracts_radii():
    cps = closest_point_projection([1, 1, 0], STRAIGHT, 2.0, R1=0.25, R2=0.25)
    assert cps.g_ul == pytest.approx(0.5)


@pytest.mark.parametrize("point,end", [([5, 1, 0], 1.0), ([-3, 0, 1], -1.0)])
def test_foot_beyond_segment_end_is_boundary(point, end):
    cps = closest_point_projection(point, STRAIGHT, 2.0)
    assert cps.on_boundary
    assert cps.xi2c == end


def test_orthogonality_at_convergence():
    slave, l1, master, l2 = curved_pair()
    for xi1 in np.linspace(-0.9, 0.9, 7):
        cps, _ = state(slave, l1, master, l2, xi1)
        if cps.on_boundary:
            continue
        assert abs(cps.r2_xi @ cps.d_ul) <= 1e-10 * np.linalg.norm(cps.r2_xi) * cps.d_ul_norm


def test_projection_is_idempotent():
    slave, l1, master, l2 = curved_pair()
    r1 = eval_centerline(slave, l1, 0.1)[0]
    cps = closest_point_projection(r1, master, l2)
    again = closest_point_projection(r1, master, l2, initial_guess=cps.xi2c, max_iter=1)
    assert again.xi2c == pytest.approx(cps.xi2c, abs=1e-12)


def test_center_of_curvature_is_singular():
    # quarter circle of radius 1 around the origin; the origin is its center of curvature
    k = np.pi / 2
    master = np.r_[1, 0, 0, 0, 1, 0, 0, 1, 0, -1, 0, 0.0]
    l2 = k * 1.0
    # tangents are unit vectors, so the Hermite curve is nearly circular; pick the point
    # exactly at the center of curvature at the element midpoint
    r, a, b, _ = eval_centerline(master, l2, 0.0)
    kappa_vec = b - (a @ b) / (a @ a) * a
    centre = r + (a @ a) / (kappa_vec @ kappa_vec) * kappa_vec
    with pytest.raises(SingularProjectionError):
        closest_point_projection(centre, master, l2, initial_guess=0.0)


def test_non_convergence_raises():
    slave, l1, master, l2 = curved_pair()
    with pytest.raises(ProjectionError):
        closest_point_projection([0.5, 3.0, 0.2], master, l2, initial_guess=-1.0, max_iter=1)


def test_batch_matches_single_projection():
    slave, l1, master, l2 = curved_pair(3)
    xi1 = np.linspace(-1, 1, 9)
    r1 = eval_centerline(slave, l1, xi1)[0]
    xi, status, _ = project_batch(r1, np.broadcast_to(master.reshape(4, 3), (9, 4, 3)), l2)
    for i in range(9):
        cps = closest_point_projection(r1[i], master, l2)
        assert xi[i] == pytest.approx(cps.xi2c, abs=1e-12)
        assert (status[i] != INTERIOR) == cps.on_boundary


# ---------------------------------------------------------------------------
# angle


def test_perpendicular_tangents():
    cps = closest_point_projection([1, 1, 0], STRAIGHT, 2.0)
    angle_state([0, 2, 0], cps)
    assert cps.cos_alpha == 0.0 and cps.sign == 1.0
    t2 = cps.r2_xi / np.linalg.norm(cps.r2_xi)
    assert np.allclose(cps.v_alpha1, t2 / 2.0)


@pytest.mark.parametrize("direction,sign", [(1.0, 1.0), (-1.0, -1.0)])
def test_parallel_tangents(direction, sign):
    cps = closest_point_projection([1, 1, 0], STRAIGHT, 2.0)
    angle_state([direction, 0, 0], cps)
    assert cps.cos_alpha == pytest.approx(1.0)
    assert cps.sign == sign
    assert np.allclose(cps.v_alpha1, 0) and np.allclose(cps.v_alpha2, 0)


def test_zero_tangent_raises():
    cps = closest_point_projection([1, 1, 0], STRAIGHT, 2.0)
    with pytest.raises(DegenerateKinematicsError):
        angle_state([0, 0, 0], cps)


@settings(max_examples=30, deadline=None)
@given(
    seed=st.integers(0, 1000),
    axis=st.tuples(st.floats(-1, 1), st.floats(-1, 1), st.floats(0.1, 1)),
    angle=st.floats(-3, 3),
    shift=st.tuples(st.floats(-10, 10), st.floats(-10, 10), st.floats(-10, 10)),
)
def test_gap_and_angle_are_frame_indifferent(seed, axis, angle, shift):
    slave, l1, master, l2 = curved_pair(seed % 7)
    Q = rotation_matrix(axis, angle)

    def move(d):
        X = d.reshape(4, 3) @ Q.T
        X[0::2] += shift
        return X.ravel()

    a, _ = state(slave, l1, master, l2, 0.2)
    b, _ = state(move(slave), l1, move(master), l2, 0.2)
    assert b.g_ul == pytest.approx(a.g_ul, rel=1e-12)
    assert b.cos_alpha == pytest.approx(a.cos_alpha, rel=1e-12, abs=1e-14)


# ---------------------------------------------------------------------------
# variations


def quantities(slave, l1, master, l2, xi1, guess):
    cps, _ = state(slave, l1, master, l2, xi1, 0.1, 0.1, guess)
    return np.array([cps.g_ul, cps.sign * cps.cos_alpha, cps.xi2c])


def test_rigid_translation_leaves_gap_unchanged():
    slave, l1, master, l2 = curved_pair()
    cps, B = state(slave, l1, master, l2, 0.0)
    w = first_variations(cps, B.N, B.dN, slave, master, l2)
    shift = np.zeros(24)
    shift[0::6] = 1.0  # x-position of every node
    assert abs(w.w_g @ shift) < 1e-14


def test_perpendicular_straight_beams_angle_variation_has_no_position_part():
    slave = np.r_[1, -1, 1, 0, 1, 0, 1, 1, 1, 0, 1, 0.0]
    cps, B = state(slave, 2.0, STRAIGHT, 2.0, 0.3)
    w = first_variations(cps, B.N, B.dN, slave, STRAIGHT, 2.0)
    # a rigid slave translation moves r1 but not r1'; on a straight master the
    # xi-chain term vanishes as well
    for axis in range(3):
        inc = np.zeros(24)
        inc[[axis, 6 + axis]] = 1.0
        assert abs(w.w_c @ inc) < 1e-15


@pytest.mark.parametrize("seed", range(4))
@pytest.mark.parametrize("xi1", [-0.5, 0.35])
def test_first_variations_match_finite_differences(seed, xi1):
    slave, l1, master, l2 = curved_pair(seed)
    cps, B = state(slave, l1, master, l2, xi1, 0.1, 0.1)
    assert not cps.on_boundary
    w = first_variations(cps, B.N, B.dN, slave, master, l2, 0.1, 0.1)
    W = np.stack([w.w_g, w.w_c, w.w_xi])
    h = 1e-6
    fd = np.zeros((3, 24))
    for i in range(24):
        dp = np.r_[slave, master].copy()
        dm = dp.copy()
        dp[i] += h
        dm[i] -= h
        fd[:, i] = (
            quantities(dp[:12], l1, dp[12:], l2, xi1, cps.xi2c) - quantities(dm[:12], l1, dm[12:], l2, xi1, cps.xi2c)
        ) / (2 * h)
    for row in range(3):
        assert np.max(np.abs(fd[row] - W[row])) <= 1e-5 * np.max(np.abs(W[row]))


def test_normal_linearization_annihilates_normal_direction():
    slave, l1, master, l2 = curved_pair()
    cps, B = state(slave, l1, master, l2, 0.1)
    s = second_variations(cps, B.N, B.dN, slave, master, l2)
    # a DOF increment that moves r1 along n only: Delta d is parallel to n there
    inc = np.zeros(24)
    for k in range(4):
        inc[3 * k : 3 * k + 3] = cps.n_ul * (1.0 if k in (0, 2) else 0.0)
    Dd = s.Dd @ inc
    assert np.allclose(np.cross(Dd, cps.n_ul), 0, atol=1e-12)
    assert np.allclose(s.Dn @ inc, 0, atol=1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_second_variations_match_finite_differences(seed):
    slave, l1, master, l2 = curved_pair(seed)
    xi1 = 0.2
    cps, B = state(slave, l1, master, l2, xi1)
    s = second_variations(cps, B.N, B.dN, slave, master, l2)
    h = 1e-6
    for name, K in (("w_g", s.K_g), ("w_c", s.K_c), ("w_xi", s.K_xi)):
        fd = np.zeros((24, 24))
        for i in range(24):
            cols = []
            for sgn in (1, -1):
                d = np.r_[slave, master].copy()
                d[i] += sgn * h
                c, Bi = state(d[:12], l1, d[12:], l2, xi1, guess=cps.xi2c)
                cols.append(getattr(first_variations(c, Bi.N, Bi.dN, d[:12], d[12:], l2), name))
            fd[:, i] = (cols[0] - cols[1]) / (2 * h)
        assert np.max(np.abs(fd - K)) <= 1e-4 * np.max(np.abs(K)), name


def test_factored_stiffness_equals_explicit_contraction():
    rng = np.random.default_rng(4)
    slave, l1, master, l2 = curved_pair(1)
    xi1 = np.array([-0.6, 0.0, 0.5])
    B = hermite_basis(xi1, l1)
    X1 = slave.reshape(4, 3)
    r1, a1 = B.N @ X1, B.dN @ X1
    X2 = np.broadcast_to(master.reshape(4, 3), (3, 4, 3))
    xi, status, _ = project_batch(r1, X2, l2)
    k = pair_kinematics(r1, a1, B.N, B.dN, X2, np.full(3, l2), xi, status != INTERIOR, 0.1, 0.1, order=2)
    d_g, d_c, d_gg, d_gc, d_cc, w = rng.normal(size=(6, 3))
    K = stiffness_from_factors(k, d_g, d_c, d_gg, d_gc, d_cc, w)
    wg, wc = k.first.w_g, k.first.w_c
    o = lambda a, b: a[:, :, None] * b[:, None, :]  # noqa: E731
    ref = (
        d_gg[:, None, None] * o(wg, wg)
        + d_gc[:, None, None] * (o(wg, wc) + o(wc, wg))
        + d_cc[:, None, None] * o(wc, wc)
        + d_g[:, None, None] * k.second.K_g
        + d_c[:, None, None] * k.second.K_c
    ) * w[:, None, None]
    assert np.allclose(K, ref, rtol=0, atol=1e-10 * np.max(np.abs(ref)))


def test_values_only_order():
    slave, l1, master, l2 = curved_pair()
    B = hermite_basis(np.array([0.0]), l1)
    X1 = slave.reshape(4, 3)
    X2 = master.reshape(1, 4, 3)
    r1 = B.N @ X1
    xi, status, _ = project_batch(r1, X2, l2)
    k = pair_kinematics(r1, B.dN @ X1, B.N, B.dN, X2, np.array([l2]), xi, status != INTERIOR, 0.0, 0.0, order=0)
    assert k.first is None and k.second is None
    assert 0.0 <= k.c[0] <= 1.0
