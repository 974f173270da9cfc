"""Closest-point projection and gap/angle kinematics of a slave point and a master element.

A slave Gauss point ``r1`` is projected onto a master element by solving the
orthogonality condition ``p(xi) = r2'(xi) . (r1 - r2(xi)) = 0`` with Newton's
method.  The unilateral gap ``g = |r1 - r2(xi_c)| - R1 - R2`` and the angle
cosine ``c = |t1 . t2|`` are then linearized w.r.t. the 24 element DOFs
(slave 12 followed by master 12), including the dependence of ``xi_c`` on
the DOFs.

All routines work on a leading batch axis so that every Gauss point of every
element pair can be processed in one vectorized sweep.  Variation vectors have
shape ``(n, 24)`` and linearizations ``(n, 24, 24)``; "shape matrices" are the
``(n, 3, 24)`` maps from element DOFs to a position or a derivative.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .beam import hermite_basis

__all__ = [
    "ProjectionError",
    "SingularProjectionError",
    "DegenerateKinematicsError",
    "ClosestPointState",
    "FirstVariations",
    "SecondVariations",
    "project_batch",
    "closest_point_projection",
    "angle_state",
    "shape_matrix",
    "first_variations",
    "second_variations",
    "PairKinematics",
    "pair_kinematics",
    "stiffness_from_factors",
    "LinearizationFactors",
    "INTERIOR",
    "FAILED",
    "SINGULAR",
]

INTERIOR = 0
FAILED = 2
SINGULAR = 3
# boundary projections are reported as -1 / +1 (the endpoint)

PROJECTION_TOL = 1e-10


class ProjectionError(RuntimeError):
    """Closest-point Newton iteration did not converge."""

    def __init__(self, msg: str, last_iterate: float = np.nan, location=None):
        super().__init__(msg)
        self.last_iterate = last_iterate
        self.location = location


class SingularProjectionError(ProjectionError):
    """Vanishing projection derivative (slave point near a master curvature center)."""


class DegenerateKinematicsError(ArithmeticError):
    """A centerline tangent vanished."""


def _master_geometry(X2, l2, xi, order=3):
    B = hermite_basis(xi, l2)
    mats = (B.N, B.dN, B.ddN, B.dddN)[: order + 1]
    return B, [np.einsum("nk,nkj->nj", M, X2) for M in mats]


def project_batch(r1, X2, l2, xi0=None, tol: float = PROJECTION_TOL, max_iter: int = 50):
    """Vectorized closest-point projection.

    Parameters
    ----------
    r1 : (n, 3) slave points.
    X2 : (n, 4, 3) master nodal vectors ``[d1, t1, d2, t2]``.
    l2 : (n,) master reference lengths.
    xi0 : (n,) initial guesses; ``None`` or NaN entries trigger a cold start
        that picks the closest of five sample parameters.

    Returns
    -------
    xi : (n,) projected parameters.
    status : (n,) int codes, ``INTERIOR`` (0), ``-1``/``+1`` for boundary
        projections onto that endpoint, ``FAILED`` or ``SINGULAR``.
    p_xi : (n,) derivative of the orthogonality condition at ``xi``.
    """
    r1 = np.asarray(r1, dtype=float)
    n = len(r1)
    l2 = np.broadcast_to(np.asarray(l2, dtype=float), (n,))
    xi = np.full(n, np.nan) if xi0 is None else np.array(xi0, dtype=float, copy=True)
    cold = ~np.isfinite(xi)
    if np.any(cold):
        samples = np.linspace(-1.0, 1.0, 5)
        idx = np.nonzero(cold)[0]
        B = hermite_basis(samples[None, :], l2[idx, None])
        pts = np.einsum("nsk,nkj->nsj", B.N, X2[idx])
        dist = np.linalg.norm(pts - r1[idx, None, :], axis=-1)
        xi[idx] = samples[np.argmin(dist, axis=1)]
    xi = np.clip(xi, -1.0, 1.0)

    status = np.full(n, FAILED, dtype=int)
    p_xi = np.full(n, np.nan)
    active = np.ones(n, dtype=bool)
    for _ in range(max_iter):
        ids = np.nonzero(active)[0]
        if ids.size == 0:
            break
        _, (r2, a2, b2) = _master_geometry(X2[ids], l2[ids], xi[ids], order=2)
        d = r1[ids] - r2
        p = np.sum(a2 * d, axis=1)
        pxi = np.sum(b2 * d, axis=1) - np.sum(a2 * a2, axis=1)
        p_xi[ids] = pxi
        scale = np.linalg.norm(a2, axis=1) * np.maximum(np.linalg.norm(d, axis=1), 1e-300)
        xc = xi[ids]
        # boundary: iterate sits on an endpoint and the distance keeps decreasing outward
        out_hi = (xc >= 1.0) & (p > 0)
        out_lo = (xc <= -1.0) & (p < 0)
        bnd = out_hi | out_lo
        status[ids[out_hi]] = 1
        status[ids[out_lo]] = -1
        sing = ~bnd & (np.abs(pxi) < 1e-14 * np.sum(a2 * a2, axis=1))
        status[ids[sing]] = SINGULAR
        done = bnd | sing
        step = np.where(done, 0.0, -p / np.where(sing | bnd, 1.0, pxi))
        conv = ~done & (np.abs(p) <= tol * scale) & ((np.abs(step) <= 1e-12) | (np.abs(p) <= 1e-14 * scale))
        status[ids[conv]] = INTERIOR
        xnew = np.clip(xc + step, -1.0, 1.0)
        xi[ids] = np.where(done, xc, xnew)
        active[ids[done | conv]] = False

    # an interior stationary point with p_xi > 0 is a distance maximum: fall back to the nearer end
    maxima = np.nonzero((status == INTERIOR) & (p_xi > 0))[0]
    if maxima.size:
        B = hermite_basis(np.array([-1.0, 1.0])[None, :], l2[maxima, None])
        pts = np.einsum("nsk,nkj->nsj", B.N, X2[maxima])
        dist = np.linalg.norm(pts - r1[maxima, None, :], axis=-1)
        side = np.where(dist[:, 0] <= dist[:, 1], -1, 1)
        xi[maxima] = side.astype(float)
        status[maxima] = side
    return xi, status, p_xi


# ---------------------------------------------------------------------------
# single-point API


@dataclass
class ClosestPointState:
    """Result of projecting one slave point onto one master element."""

    xi2c: float
    converged: bool
    on_boundary: bool
    d_ul: np.ndarray
    d_ul_norm: float
    g_ul: float
    n_ul: np.ndarray
    p2_xi2: float
    r2: np.ndarray
    r2_xi: np.ndarray
    r2_xixi: np.ndarray
    r2_xixixi: np.ndarray
    cos_alpha: float = np.nan
    sign: float = 1.0
    t1: Optional[np.ndarray] = None
    t2: Optional[np.ndarray] = None
    v_alpha1: Optional[np.ndarray] = None
    v_alpha2: Optional[np.ndarray] = None
    r1_xi: Optional[np.ndarray] = None


def closest_point_projection(
    slave_point,
    master_dofs,
    l_ele: float,
    initial_guess: Optional[float] = None,
    R1: float = 0.0,
    R2: float = 0.0,
    max_iter: int = 50,
) -> ClosestPointState:
    """Project one slave point onto a master element (see :func:`project_batch`)."""
    r1 = np.asarray(slave_point, dtype=float).reshape(1, 3)
    X2 = np.asarray(master_dofs, dtype=float).reshape(1, 4, 3)
    xi0 = None if initial_guess is None else np.array([initial_guess], dtype=float)
    xi, status, pxi = project_batch(r1, X2, np.array([l_ele]), xi0, max_iter=max_iter)
    if status[0] == SINGULAR:
        raise SingularProjectionError("vanishing projection derivative", float(xi[0]))
    if status[0] == FAILED:
        raise ProjectionError("closest-point projection did not converge", float(xi[0]))
    _, (r2, a2, b2, c2) = _master_geometry(X2, np.array([l_ele]), xi, order=3)
    d = r1[0] - r2[0]
    dn = float(np.linalg.norm(d))
    return ClosestPointState(
        xi2c=float(xi[0]),
        converged=True,
        on_boundary=bool(status[0] != INTERIOR),
        d_ul=d,
        d_ul_norm=dn,
        g_ul=dn - R1 - R2,
        n_ul=d / dn,
        p2_xi2=float(np.dot(b2[0], d) - np.dot(a2[0], a2[0])),
        r2=r2[0],
        r2_xi=a2[0],
        r2_xixi=b2[0],
        r2_xixixi=c2[0],
    )


def angle_state(slave_tangent, cps: ClosestPointState) -> ClosestPointState:
    """Fill in the angle-related fields of ``cps`` given ``r1' = slave_tangent``."""
    a1 = np.asarray(slave_tangent, dtype=float)
    n1 = np.linalg.norm(a1)
    n2 = np.linalg.norm(cps.r2_xi)
    if n1 == 0 or n2 == 0:
        raise DegenerateKinematicsError("zero tangent")
    t1, t2 = a1 / n1, cps.r2_xi / n2
    ct = float(t1 @ t2)
    cps.t1, cps.t2 = t1, t2
    cps.cos_alpha = abs(ct)
    cps.sign = 1.0 if ct >= 0 else -1.0
    cps.v_alpha1 = (t2 - ct * t1) / n1
    cps.v_alpha2 = (t1 - ct * t2) / n2
    cps.r1_xi = a1
    return cps


# ---------------------------------------------------------------------------
# variations and linearizations (batched)


def shape_matrix(N, slot: int) -> np.ndarray:
    """``(n, 3, 24)`` map from pair DOFs to ``sum_k N_k X_k`` of the slave (slot 0) or master (slot 1)."""
    N = np.asarray(N, dtype=float)
    S = np.zeros((N.shape[0], 3, 24))
    for k in range(4):
        for i in range(3):
            S[:, i, 12 * slot + 3 * k + i] = N[:, k]
    return S


@dataclass
class FirstVariations:
    w_g: np.ndarray
    w_c: np.ndarray
    w_xi: np.ndarray


@dataclass
class SecondVariations:
    K_g: np.ndarray
    K_c: np.ndarray
    K_xi: np.ndarray
    Dd: np.ndarray
    Dn: np.ndarray
    Dv1: np.ndarray
    Dv2: np.ndarray
    Dt1: np.ndarray
    Dt2: np.ndarray
    Dr2_xi: np.ndarray


@dataclass
class PairKinematics:
    """Batched kinematic state of slave Gauss points w.r.t. master elements."""

    g: np.ndarray
    c: np.ndarray
    sign: np.ndarray
    d: np.ndarray
    dn: np.ndarray
    n: np.ndarray
    t1: np.ndarray
    t2: np.ndarray
    v1: np.ndarray
    v2: np.ndarray
    p_xi: np.ndarray
    first: Optional[FirstVariations] = None
    second: Optional[SecondVariations] = None
    factors: Optional["LinearizationFactors"] = None


@dataclass
class LinearizationFactors:
    """``(n, 3, 24)`` linearized vectors and 24-vector contractions of the linearization."""

    S12: np.ndarray
    S1p: np.ndarray
    S2p: np.ndarray
    Dn: np.ndarray
    Dd: np.ndarray
    R2t: np.ndarray
    Dv1: np.ndarray
    Dv2: np.ndarray
    S2pT_n: np.ndarray
    S2ppT_v2: np.ndarray
    S2pT_a2: np.ndarray
    S2ppT_d: np.ndarray
    Dv2T_b2_R2ttT_v2: np.ndarray
    Dpxi: np.ndarray
    b2v2: np.ndarray
    inv_pxi: np.ndarray


def _outer(a, b):
    return a[:, :, None] * b[:, None, :]


def _t(M):
    return np.swapaxes(M, -1, -2)


def pair_kinematics(
    r1,
    a1,
    N1,
    dN1,
    X2,
    l2,
    xi,
    frozen,
    R1: float,
    R2: float,
    order: int = 2,
    blocks: bool = True,
) -> PairKinematics:
    """Gap, angle and (optionally) their first and second variations.

    Parameters
    ----------
    r1, a1 : (n, 3) slave position and xi-derivative at the Gauss point.
    N1, dN1 : (n, 4) slave shape functions and their xi-derivatives.
    X2, l2 : (n, 4, 3) master nodal vectors, (n,) master lengths.
    xi : (n,) projected master parameter.
    frozen : (n,) bool, True for boundary projections whose parameter is held
        fixed (no dependence of ``xi`` on the DOFs).
    order : 0 for values only, 1 adds first variations, 2 adds linearizations.
    blocks : with ``order=2``, also form the explicit 24x24 blocks
        (``second``); otherwise only the factors used by
        :func:`stiffness_from_factors` are computed.
    """
    n_items = len(xi)
    B, (r2, a2, b2, c2) = _master_geometry(X2, l2, xi, order=3)
    d = r1 - r2
    dn = np.linalg.norm(d, axis=1)
    nvec = d / dn[:, None]
    g = dn - R1 - R2
    n1 = np.linalg.norm(a1, axis=1)
    n2 = np.linalg.norm(a2, axis=1)
    if np.any(n1 == 0) or np.any(n2 == 0):
        raise DegenerateKinematicsError("zero tangent")
    t1 = a1 / n1[:, None]
    t2 = a2 / n2[:, None]
    ct = np.sum(t1 * t2, axis=1)
    sign = np.where(ct >= 0, 1.0, -1.0)
    c = np.abs(ct)
    v1 = (t2 - ct[:, None] * t1) / n1[:, None]
    v2 = (t1 - ct[:, None] * t2) / n2[:, None]
    p_xi = np.sum(b2 * d, axis=1) - np.sum(a2 * a2, axis=1)
    out = PairKinematics(g, c, sign, d, dn, nvec, t1, t2, v1, v2, p_xi)
    if order < 1:
        return out

    live = ~np.asarray(frozen, dtype=bool)
    S1 = shape_matrix(N1, 0)
    S1p = shape_matrix(dN1, 0)
    S2 = shape_matrix(B.N, 1)
    S2p = shape_matrix(B.dN, 1)
    S2pp = shape_matrix(B.ddN, 1)
    S12 = S1 - S2
    inv_pxi = np.where(live, 1.0 / np.where(live, p_xi, 1.0), 0.0)

    w_xi = (
        np.einsum("nij,ni->nj", S2 - S1, a2) - np.einsum("nij,ni->nj", S2p, d)
    ) * inv_pxi[:, None]
    w_g = np.einsum("nij,ni->nj", S12, nvec)
    b2v2 = np.sum(b2 * v2, axis=1)
    w_c = sign[:, None] * (
        np.einsum("nij,ni->nj", S1p, v1) + np.einsum("nij,ni->nj", S2p, v2) + b2v2[:, None] * w_xi
    )
    out.first = FirstVariations(w_g=w_g, w_c=w_c, w_xi=w_xi)
    if order < 2:
        return out

    I3 = np.eye(3)[None]
    Dd = S12 - a2[:, :, None] * w_xi[:, None, :]
    P_n = I3 - _outer(nvec, nvec)
    Dn = (P_n @ Dd) / dn[:, None, None]

    # linearization of the projected parameter
    R2t = S2p + b2[:, :, None] * w_xi[:, None, :]  # Delta[r2'(xi_c)]
    R2tt = S2pp + c2[:, :, None] * w_xi[:, None, :]  # Delta[r2''(xi_c)]
    Dpxi = (
        np.einsum("nij,ni->nj", R2tt, d)
        + np.einsum("nij,ni->nj", Dd, b2)
        - 2.0 * np.einsum("nij,ni->nj", R2t, a2)
    )

    # tangents and auxiliary angle vectors
    P1 = I3 - _outer(t1, t1)
    P2 = I3 - _outer(t2, t2)
    Dt1 = (P1 @ S1p) / n1[:, None, None]
    Dt2 = (P2 @ R2t) / n2[:, None, None]
    Dn1 = np.einsum("ni,nij->nj", t1, S1p)  # Delta|r1'|
    Dn2 = np.einsum("ni,nij->nj", t2, R2t)  # Delta|r2'|
    P1t2 = np.einsum("nij,nj->ni", P1, t2)
    P2t1 = np.einsum("nij,nj->ni", P2, t1)
    Dv1 = (
        -(ct[:, None, None] * Dt1 + t1[:, :, None] * np.einsum("ni,nij->nj", t2, Dt1)[:, None, :])
        + P1 @ Dt2
    ) / n1[:, None, None] - _outer(P1t2, Dn1) / (n1**2)[:, None, None]
    Dv2 = (
        -(ct[:, None, None] * Dt2 + t2[:, :, None] * np.einsum("ni,nij->nj", t1, Dt2)[:, None, :])
        + P2 @ Dt1
    ) / n2[:, None, None] - _outer(P2t1, Dn2) / (n2**2)[:, None, None]

    out.factors = LinearizationFactors(
        S12=S12,
        S1p=S1p,
        S2p=S2p,
        Dn=Dn,
        Dd=Dd,
        R2t=R2t,
        Dv1=Dv1,
        Dv2=Dv2,
        S2pT_n=np.einsum("nij,ni->nj", S2p, nvec),
        S2ppT_v2=np.einsum("nij,ni->nj", S2pp, v2),
        S2pT_a2=np.einsum("nij,ni->nj", S2p, a2),
        S2ppT_d=np.einsum("nij,ni->nj", S2pp, d),
        Dv2T_b2_R2ttT_v2=np.einsum("nij,ni->nj", Dv2, b2) + np.einsum("nij,ni->nj", R2tt, v2),
        Dpxi=Dpxi,
        b2v2=b2v2,
        inv_pxi=inv_pxi,
    )
    if not blocks:
        return out

    f = out.factors
    K_g = _t(S12) @ Dn - _outer(f.S2pT_n, w_xi)
    DA = -_t(S12) @ R2t + _outer(f.S2pT_a2 - f.S2ppT_d, w_xi) - _t(S2p) @ Dd
    K_xi = (DA - _outer(w_xi, Dpxi)) * inv_pxi[:, None, None]
    K_c = sign[:, None, None] * (
        _t(S1p) @ Dv1
        + _t(S2p) @ Dv2
        + _outer(f.S2ppT_v2, w_xi)
        + _outer(w_xi, f.Dv2T_b2_R2ttT_v2)
        + b2v2[:, None, None] * K_xi
    )
    out.second = SecondVariations(
        K_g=K_g, K_c=K_c, K_xi=K_xi, Dd=Dd, Dn=Dn, Dv1=Dv1, Dv2=Dv2, Dt1=Dt1, Dt2=Dt2, Dr2_xi=R2t
    )
    return out


def stiffness_from_factors(k: PairKinematics, d_g, d_c, d_gg, d_gc, d_cc, weight) -> np.ndarray:
    """Weighted Gauss-point stiffness ``weight * Hessian of pi(g, c)`` as ``L^T R``.

    Expanding every product of a shape matrix and a linearized quantity into
    rank-one terms lets the whole contraction

        d_gg w_g w_g + d_gc (w_g w_c + w_c w_g) + d_cc w_c w_c + d_g K_g + d_c K_c

    be evaluated as one batched ``(24 x 13) @ (13 x 24)`` product.
    """
    f = k.factors
    wg, wc, wx = k.first.w_g, k.first.w_c, k.first.w_xi
    s = k.sign
    cs = d_c * s
    beta = cs * f.b2v2 * f.inv_pxi
    col = lambda v: v[:, None, None]  # noqa: E731
    L = np.concatenate(
        [
            f.S12,
            f.S1p,
            f.S2p,
            wg[:, None, :],
            wc[:, None, :],
            wx[:, None, :],
            (
                -d_g[:, None] * f.S2pT_n
                + cs[:, None] * f.S2ppT_v2
                + beta[:, None] * (f.S2pT_a2 - f.S2ppT_d)
            )[:, None, :],
        ],
        axis=1,
    )
    R = np.concatenate(
        [
            col(d_g) * f.Dn - col(beta) * f.R2t,
            col(cs) * f.Dv1,
            col(cs) * f.Dv2 - col(beta) * f.Dd,
            (d_gg[:, None] * wg + d_gc[:, None] * wc)[:, None, :],
            (d_gc[:, None] * wg + d_cc[:, None] * wc)[:, None, :],
            (cs[:, None] * f.Dv2T_b2_R2ttT_v2 - beta[:, None] * f.Dpxi)[:, None, :],
            wx[:, None, :],
        ],
        axis=1,
    )
    R *= weight[:, None, None]
    return _t(L) @ R


def _single_inputs(cps: ClosestPointState, N1, dN1, slave_dofs, master_dofs, l2):
    X1 = np.asarray(slave_dofs, dtype=float).reshape(4, 3)
    r1 = (np.asarray(N1) @ X1)[None]
    a1 = (np.asarray(dN1) @ X1)[None]
    X2 = np.asarray(master_dofs, dtype=float).reshape(1, 4, 3)
    return r1, a1, np.asarray(N1)[None], np.asarray(dN1)[None], X2, np.array([l2])


def first_variations(cps: ClosestPointState, N1, dN1, slave_dofs, master_dofs, l2, R1=0.0, R2=0.0):
    """Variation vectors of gap, angle cosine and master parameter for one Gauss point.

    ``N1``/``dN1`` are the slave shape functions at the Gauss point.  Boundary
    projections use a frozen master parameter (``w_xi = 0``).
    """
    args = _single_inputs(cps, N1, dN1, slave_dofs, master_dofs, l2)
    k = pair_kinematics(*args, np.array([cps.xi2c]), np.array([cps.on_boundary]), R1, R2, order=1)
    return FirstVariations(k.first.w_g[0], k.first.w_c[0], k.first.w_xi[0])


def second_variations(cps: ClosestPointState, N1, dN1, slave_dofs, master_dofs, l2, R1=0.0, R2=0.0):
    """Linearized variations (24x24 blocks) for one Gauss point."""
    args = _single_inputs(cps, N1, dN1, slave_dofs, master_dofs, l2)
    k = pair_kinematics(*args, np.array([cps.xi2c]), np.array([cps.on_boundary]), R1, R2, order=2)
    return SecondVariations(*(getattr(k.second, f)[0] for f in SecondVariations.__dataclass_fields__))
