"""Independent oracles and analytical references for the SBIP engine.

Nothing in here is used by the simulation itself.  The functions compute
reference values by routes that share as little code as possible with the
production path: closed-form cylinder formulas, direct volume quadrature of
point-pair and point/half-space laws, and finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import gamma as gamma_fn

from .assembly import InteractionEvaluator, QuadratureSpec
from .beam import BeamMesh
from .potentials import (
    DomainError,
    PointPairLaw,
    SBIPParams,
    lj_prefactors_to_params,
    sbip_prefactor,
    sbip_total,
)

__all__ = [
    "CylinderScene",
    "Cylinder",
    "DimensionlessGroups",
    "QuadratureResult",
    "FDReport",
    "hamaker_constant",
    "analytic_skewed_cylinders",
    "lj_parallel_equilibrium",
    "sbip_parallel_equilibrium",
    "lj_prefactors_from_parallel_equilibrium",
    "point_half_space_potential",
    "point_half_space_quadrature",
    "point_half_space_reference",
    "brute_force_6d",
    "parallel_cylinders_per_length",
    "sbip_straight_cylinders",
    "potential_sweep",
    "nondimensional_groups",
    "finite_difference_check",
]

# convergence flag threshold for the quadrature references
QUAD_TOL = 5e-3


@dataclass(frozen=True)
class CylinderScene:
    """Two straight cylinders: a finite slave and an infinite master.

    The slave axis runs along ``x`` and is centered at the origin.  The
    master axis lies in the plane ``z = R1 + R2 + g_bl`` and encloses the
    angle ``alpha`` (radians) with the slave axis, so that ``g_bl`` is the
    smallest surface separation for any ``alpha > 0``.
    """

    R1: float
    R2: float
    g_bl: float
    alpha: float
    slave_length: float = np.inf

    def __post_init__(self) -> None:
        if not (self.R1 > 0 and self.R2 > 0):
            raise DomainError("radii must be positive")
        if not self.g_bl > 0:
            raise DomainError("g_bl must be positive")
        if not 0.0 <= self.alpha <= np.pi / 2 + 1e-15:
            raise DomainError("alpha must lie in [0, pi/2]")

    @property
    def axis_distance(self) -> float:
        return self.R1 + self.R2 + self.g_bl

    def master_axis(self) -> tuple[np.ndarray, np.ndarray]:
        """Point on and unit direction of the master axis."""
        return (
            np.array([0.0, 0.0, self.axis_distance]),
            np.array([np.cos(self.alpha), np.sin(self.alpha), 0.0]),
        )


@dataclass(frozen=True)
class Cylinder:
    """Finite straight cylinder for volume quadrature."""

    center: Sequence[float]
    axis: Sequence[float]
    radius: float
    length: float


@dataclass(frozen=True)
class DimensionlessGroups:
    zeta: float
    k_ratio: float
    r_eq_over_R: float
    compliance_k6: float
    compliance_phi: float
    atom_group: float


@dataclass(frozen=True)
class QuadratureResult:
    """Value of a quadrature reference with its refinement check."""

    value: float
    refined: float
    rel_change: float

    @property
    def converged(self) -> bool:
        return self.rel_change <= QUAD_TOL


@dataclass(frozen=True)
class FDReport:
    max_abs_error: float
    max_rel_error: float
    worst_index: tuple
    analytic: np.ndarray
    numeric: np.ndarray


# ---------------------------------------------------------------------------
# closed-form references


def hamaker_constant(rho1: float, rho2: float, C_vdw: float) -> float:
    """``A_Ham = pi**2 rho1 rho2 C_vdW``."""
    return np.pi**2 * rho1 * rho2 * C_vdw


def analytic_skewed_cylinders(scene: CylinderScene, A_ham: float) -> float:
    """Small-separation vdW energy of two infinite skewed cylinders.

    ``-(A/6) sqrt(R1 R2) / (g sin(alpha))``; undefined for parallel axes,
    where only a per-length value exists.
    """
    s = np.sin(scene.alpha)
    if scene.alpha <= 0 or s <= 0:
        raise DomainError("total energy of parallel infinite cylinders is infinite")
    return -A_ham / 6.0 * np.sqrt(scene.R1 * scene.R2) / (scene.g_bl * s)


def lj_parallel_equilibrium(k6, k12, rho1, rho2, R1, R2) -> tuple[float, float]:
    """Equilibrium spacing and peak adhesive line force of parallel LJ cylinders.

    Uses the published floating-point coefficients.  The coefficient of the
    gap is not consistent with the tabulated repulsive SBIP prefactor; see
    :func:`sbip_parallel_equilibrium` for the values implied by the law
    actually implemented.
    """
    if not (k6 < 0 < k12):
        raise DomainError("need k6 < 0 < k12")
    g_eq = 1.1434 * (-k12 / k6) ** (1.0 / 6.0)
    f_min = 0.7927 * rho1 * rho2 * np.sqrt(2 * R1 * R2 / (R1 + R2)) * k6 * (-k6 / k12) ** (5.0 / 12.0)
    return g_eq, f_min


def _parallel_constants(rho1, rho2, R1, R2) -> tuple[float, float]:
    """``pi(g) = C6 k6 g**-1.5 + C12 k12 g**-7.5`` for parallel axes."""
    geo = rho1 * np.sqrt(2 * R1 * R2 / (R1 + R2))
    C6 = sbip_prefactor(PointPairLaw(6, 1.0), rho2) * geo
    C12 = sbip_prefactor(PointPairLaw(12, 1.0), rho2) * geo
    return C6, C12


# The peak attraction sits where d2pi/dg2 = 0: (g*/g_eq)**6 = 8.5*7.5/(2.5*1.5)/5.
_PEAK_RATIO6 = 17.0 / 5.0


def sbip_parallel_equilibrium(k6, k12, rho1, rho2, R1, R2) -> tuple[float, float]:
    """Exact equilibrium gap and minimum line force of the parallel SBIP law."""
    if not (k6 < 0 < k12):
        raise DomainError("need k6 < 0 < k12")
    C6, C12 = _parallel_constants(rho1, rho2, R1, R2)
    g_eq = (-5.0 * C12 * k12 / (C6 * k6)) ** (1.0 / 6.0)
    g_pk = g_eq * _PEAK_RATIO6 ** (1.0 / 6.0)
    f_min = 1.5 * C6 * k6 * g_pk**-2.5 * (1.0 - 1.0 / _PEAK_RATIO6)
    return g_eq, f_min


def lj_prefactors_from_parallel_equilibrium(g_eq, f_min, rho1, rho2, R1, R2) -> tuple[float, float]:
    """Inverse of :func:`sbip_parallel_equilibrium`: ``(k6, k12)``."""
    if not (g_eq > 0 and f_min < 0):
        raise DomainError("need g_eq > 0 and f_min < 0")
    C6, C12 = _parallel_constants(rho1, rho2, R1, R2)
    g_pk = g_eq * _PEAK_RATIO6 ** (1.0 / 6.0)
    k6 = f_min / (1.5 * C6 * g_pk**-2.5 * (1.0 - 1.0 / _PEAK_RATIO6))
    k12 = -(g_eq**6) * C6 * k6 / (5.0 * C12)
    return k6, k12


# ---------------------------------------------------------------------------
# point / half-space


def point_half_space_potential(law: PointPairLaw, rho2: float, d):
    """Energy of a point at distance ``d`` from a half-space of density ``rho2``.

    Slab integration of ``k r**-m`` gives ``2 pi k rho2 d**(3-m) / ((m-2)(m-3))``.
    """
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise DomainError("distance to the half-space must be positive")
    m = law.m
    return 2.0 * np.pi * law.k_m * rho2 * d ** (3 - m) / ((m - 2) * (m - 3))


def _gauss01(n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def point_half_space_quadrature(law: PointPairLaw, rho2: float, d: float, n: int = 48) -> float:
    """Direct 3D Gauss quadrature of the point law over the half-space ``z >= d``.

    Cylindrical coordinates about the foot point; both unbounded directions
    are mapped to ``[0, 1)`` by ``x = d u / (1 - u)``.
    """
    u, wu = _gauss01(n)
    z = d + d * u / (1 - u)
    wz = wu * d / (1 - u) ** 2
    rr = d * u / (1 - u)
    wr = wu * d / (1 - u) ** 2
    th, wth = _gauss01(max(4, n // 4))
    th = 2 * np.pi * th
    wth = 2 * np.pi * wth
    Z, Rr, T = np.meshgrid(z, rr, th, indexing="ij")
    W = wz[:, None, None] * (wr * rr)[None, :, None] * wth[None, None, :]
    x = Rr * np.cos(T)
    y = Rr * np.sin(T)
    r = np.sqrt(x * x + y * y + Z * Z)
    return float(np.sum(W * law.k_m * rho2 * r ** (-law.m)))


def _graded_rule(a: float, b: float, c: float, h0: float, n: int, ratio: float = 2.0):
    """Composite Gauss rule on ``[a, b]`` with intervals growing geometrically away from ``c``."""
    c = min(max(c, a), b)
    breaks = {a, b, c}
    for side, end in ((-1, a), (1, b)):
        h = h0
        x = c
        while side * (end - x) > h:
            x = x + side * h
            breaks.add(x)
            h *= ratio
    pts = np.array(sorted(breaks))
    g, w = np.polynomial.legendre.leggauss(n)
    lo, hi = pts[:-1], pts[1:]
    X = 0.5 * (hi - lo)[:, None] * g[None, :] + 0.5 * (hi + lo)[:, None]
    W = 0.5 * (hi - lo)[:, None] * w[None, :]
    return X.ravel(), W.ravel()


def _slave_volume_rule(scene: CylinderScene, n: int, per_length: bool):
    """Quadrature points and weights over the slave volume (or midspan disk)."""
    R1, g = scene.R1, scene.g_bl
    r, wr = _graded_rule(0.0, R1, R1, max(g, 1e-6 * R1), n)
    wr = wr * r
    dth = np.sqrt(g / R1)
    th, wth = _graded_rule(-np.pi / 2, 3 * np.pi / 2, np.pi / 2, dth, n)
    if per_length:
        s, ws = np.zeros(1), np.ones(1)
    else:
        half = scene.slave_length / 2
        if not np.isfinite(half):
            raise DomainError("a finite slave length is needed for a total energy")
        s, ws = _graded_rule(-half, half, 0.0, np.sqrt(g * R1) / max(np.sin(scene.alpha), 1e-3), n)
    S, Rr, T = np.meshgrid(s, r, th, indexing="ij")
    W = ws[:, None, None] * wr[None, :, None] * wth[None, None, :]
    P = np.stack([S, Rr * np.cos(T), Rr * np.sin(T)], axis=-1)
    return P.reshape(-1, 3), W.ravel()


def _distance_to_master_surface(scene: CylinderScene, P: np.ndarray) -> np.ndarray:
    p0, e = scene.master_axis()
    v = P - p0
    perp = v - (v @ e)[:, None] * e[None, :]
    return np.linalg.norm(perp, axis=1) - scene.R2


def point_half_space_reference(
    scene: CylinderScene,
    law: PointPairLaw,
    rho1: float,
    rho2: float,
    order: int = 8,
    per_length: Optional[bool] = None,
) -> QuadratureResult:
    """Volume quadrature of the point/half-space law over the slave cylinder.

    Every slave point interacts with the half-space bounded by the tangent
    plane of the master surface at its foot point, i.e. the law is evaluated
    at the point's distance to the master surface.  For parallel axes the
    result is per unit length (a cross-section at midspan), otherwise it is
    the total energy of the finite slave.  ``order`` Gauss points are used
    per graded sub-interval and the result is re-evaluated at twice the order.
    """
    if per_length is None:
        per_length = scene.alpha == 0.0

    def run(n):
        P, W = _slave_volume_rule(scene, n, per_length)
        d = _distance_to_master_surface(scene, P)
        return float(rho1 * np.sum(W * point_half_space_potential(law, rho2, d)))

    a, b = run(order), run(2 * order)
    return QuadratureResult(a, b, abs(b - a) / abs(b))


# ---------------------------------------------------------------------------
# brute-force volume integral


def _frame(axis) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    e = np.asarray(axis, dtype=float)
    e = e / np.linalg.norm(e)
    a = np.cross(e, [1.0, 0.0, 0.0])
    if np.linalg.norm(a) < 0.5:
        a = np.cross(e, [0.0, 1.0, 0.0])
    a /= np.linalg.norm(a)
    return e, a, np.cross(e, a)


def _closest_axis_points(c1: Cylinder, c2: Cylinder, n: int = 401) -> tuple[np.ndarray, np.ndarray]:
    """Closest points of the two axis segments (dense sampling, then one refinement)."""
    e1, e2 = _frame(c1.axis)[0], _frame(c2.axis)[0]
    s = np.linspace(-0.5, 0.5, n) * c1.length
    t = np.linspace(-0.5, 0.5, n) * c2.length
    P = np.asarray(c1.center, dtype=float) + s[:, None] * e1
    Q = np.asarray(c2.center, dtype=float) + t[:, None] * e2
    i, j = np.unravel_index(np.argmin(np.linalg.norm(P[:, None] - Q[None], axis=-1)), (n, n))
    ds, dt = c1.length / (n - 1), c2.length / (n - 1)
    s = np.linspace(max(s[i] - ds, -c1.length / 2), min(s[i] + ds, c1.length / 2), n)
    t = np.linspace(max(t[j] - dt, -c2.length / 2), min(t[j] + dt, c2.length / 2), n)
    P = np.asarray(c1.center, dtype=float) + s[:, None] * e1
    Q = np.asarray(c2.center, dtype=float) + t[:, None] * e2
    i, j = np.unravel_index(np.argmin(np.linalg.norm(P[:, None] - Q[None], axis=-1)), (n, n))
    return P[i], Q[j]


def _cylinder_rule(cyl: Cylinder, order: int, focus: np.ndarray, gap: float):
    """Volume rule of ``cyl`` graded towards the surface point facing ``focus``.

    Sub-intervals grow geometrically away from the near point in the axial,
    radial and angular directions, with initial sizes set by the surface gap.
    """
    e, a, b = _frame(cyl.axis)
    c = np.asarray(cyl.center, dtype=float)
    R, L = cyl.radius, cyl.length
    v = np.asarray(focus, dtype=float) - c
    s_c = float(np.clip(v @ e, -L / 2, L / 2))
    th_c = float(np.arctan2(v @ b, v @ a))
    g = max(gap, 1e-6 * R)
    s, ws = _graded_rule(-L / 2, L / 2, s_c, np.sqrt(g * R), order)
    r, wr = _graded_rule(0.0, R, R, g, order)
    wr = wr * r
    t, wt = _graded_rule(th_c - np.pi, th_c + np.pi, th_c, np.sqrt(g / R), order)
    S, Rr, T = np.meshgrid(s, r, t, indexing="ij")
    W = ws[:, None, None] * wr[None, :, None] * wt[None, None, :]
    P = c + S[..., None] * e + (Rr * np.cos(T))[..., None] * a + (Rr * np.sin(T))[..., None] * b
    return P.reshape(-1, 3), W.ravel()


def _pair_sum(P1, W1, P2, W2, laws: Sequence[PointPairLaw], chunk: int = 1024) -> float:
    total = 0.0
    for i in range(0, len(P1), chunk):
        d = P1[i : i + chunk, None, :] - P2[None, :, :]
        r2 = np.einsum("ijk,ijk->ij", d, d)
        phi = sum(law.k_m * r2 ** (-law.m / 2) for law in laws)
        total += float(W1[i : i + chunk] @ phi @ W2)
    return total


def brute_force_6d(
    body1: Cylinder,
    body2: Cylinder,
    laws: Sequence[PointPairLaw] | PointPairLaw,
    rho1: float,
    rho2: float,
    order: int = 3,
    refined_order: Optional[int] = None,
) -> QuadratureResult:
    """Nested 3D x 3D Gauss quadrature of the point-pair law over both volumes.

    Each volume uses composite Gauss rules with ``order`` points per
    sub-interval, graded towards the point of closest approach.  The check
    value uses ``refined_order`` (default ``order + 2``).  Only meaningful
    where the bodies do not touch; the cost grows as ``order**6``.
    """
    if isinstance(laws, PointPairLaw):
        laws = [laws]
    p1, p2 = _closest_axis_points(body1, body2)
    gap = float(np.linalg.norm(p2 - p1)) - body1.radius - body2.radius
    if not gap > 0:
        raise DomainError("the cylinders overlap")

    def run(o):
        P1, W1 = _cylinder_rule(body1, o, p2, gap)
        P2, W2 = _cylinder_rule(body2, o, p1, gap)
        return rho1 * rho2 * _pair_sum(P1, W1, P2, W2, laws)

    a = run(order)
    b = run(order + 2 if refined_order is None else refined_order)
    return QuadratureResult(a, b, abs(b - a) / abs(b))


def _line_integral_factor(m: int) -> float:
    """``int (a**2 + s**2)**(-m/2) ds = factor * a**(1-m)`` over the real line."""
    return float(np.sqrt(np.pi) * gamma_fn((m - 1) / 2.0) / gamma_fn(m / 2.0))


def parallel_cylinders_per_length(
    R1: float,
    R2: float,
    g: float,
    laws: Sequence[PointPairLaw] | PointPairLaw,
    rho1: float,
    rho2: float,
    order: int = 6,
) -> QuadratureResult:
    """Exact volume-integrated energy per unit length of two infinite parallel cylinders.

    The integral along the second axis is done in closed form, which leaves
    a 4D integral over the two cross-sections; both disks use polar rules
    graded towards the facing surface points.
    """
    if isinstance(laws, PointPairLaw):
        laws = [laws]
    if not (R1 > 0 and R2 > 0 and g > 0):
        raise DomainError("radii and gap must be positive")
    D = R1 + R2 + g

    def disk(R, center, facing, n):
        r, wr = _graded_rule(0.0, R, R, g, n)
        wr = wr * r
        t, wt = _graded_rule(facing - np.pi, facing + np.pi, facing, np.sqrt(g / R), n)
        Rr, T = np.meshgrid(r, t, indexing="ij")
        W = wr[:, None] * wt[None, :]
        P = np.stack([center + Rr * np.cos(T), Rr * np.sin(T)], axis=-1)
        return P.reshape(-1, 2), W.ravel()

    def run(n):
        P1, W1 = disk(R1, 0.0, 0.0, n)
        P2, W2 = disk(R2, D, np.pi, n)
        total = 0.0
        for i in range(0, len(P1), 1024):
            d2 = np.sum((P1[i : i + 1024, None, :] - P2[None, :, :]) ** 2, axis=-1)
            phi = sum(law.k_m * _line_integral_factor(law.m) * d2 ** ((1 - law.m) / 2.0) for law in laws)
            total += float(W1[i : i + 1024] @ phi @ W2)
        return rho1 * rho2 * total

    a, b = run(order), run(2 * order)
    return QuadratureResult(a, b, abs(b - a) / abs(b))


# ---------------------------------------------------------------------------
# SBIP on straight cylinders


def _graded_axis(length: float, n_el: int, grading: float = 6.0) -> np.ndarray:
    """Node coordinates on ``[-L/2, L/2]`` clustered around the midpoint."""
    u = np.linspace(-1.0, 1.0, n_el + 1)
    return 0.5 * length * np.sinh(grading * u) / np.sinh(grading)


def sbip_straight_cylinders(
    scene: CylinderScene,
    params: SBIPParams,
    n_elements: int = 64,
    quad: QuadratureSpec = QuadratureSpec(4, 8),
    master_length: Optional[float] = None,
) -> float:
    """Total SBIP energy of a finite straight slave against a long straight master.

    Both fibers are meshed with Hermite elements clustered around the point
    of closest approach and evaluated through the production pair assembly,
    so this exercises projection, quadrature and the law together.
    """
    Ls = scene.slave_length
    if not np.isfinite(Ls):
        raise DomainError("slave length must be finite")
    Lm = 2.0 * Ls if master_length is None else master_length
    s = _graded_axis(Ls, n_elements)
    e1 = np.array([1.0, 0.0, 0.0])
    p0, e2 = scene.master_axis()
    t = _graded_axis(Lm, n_elements)
    P = [s[:, None] * e1, p0 + t[:, None] * e2]
    T = [np.tile(e1, (len(s), 1)), np.tile(e2, (len(t), 1))]
    mesh = BeamMesh.from_polylines(P, T, [scene.R1, scene.R2])
    ev = InteractionEvaluator(mesh, params, quad=quad, include_self=False)
    E, _, _ = ev.evaluate(mesh.ref_dofs, order=0)
    return E


def potential_sweep(
    gaps_over_R: Sequence[float],
    angles_deg: Sequence[float],
    R: float = 1.0,
    k6: float = -1.0,
    rho: float = 1.0,
    slave_length_over_R: float = 20.0,
    order: int = 6,
) -> list[dict]:
    """Rows ``(g_over_R, alpha_deg, value_sbip, value_reference, rel_dev)``.

    Parallel rows hold energies per unit length at midspan; all other rows
    hold total energies of a slave of length ``slave_length_over_R * R``.
    The reference is the point/half-space volume quadrature.
    """
    law = PointPairLaw(6, k6)
    params = SBIPParams(R, R, rho, rho, [law])
    rows = []
    for a_deg in angles_deg:
        for gr in gaps_over_R:
            scene = CylinderScene(R, R, gr * R, np.radians(a_deg), slave_length_over_R * R)
            if a_deg == 0:
                val = float(sbip_total(params, gr * R, 1.0).value)
            else:
                val = sbip_straight_cylinders(scene, params)
            ref = point_half_space_reference(scene, law, rho, rho, order=order).value
            rows.append(
                dict(g_over_R=gr, alpha_deg=a_deg, value_sbip=val, value_reference=ref, rel_dev=(val - ref) / abs(ref))
            )
    return rows


# ---------------------------------------------------------------------------
# dimensionless groups and finite differences


def nondimensional_groups(L: float, R: float, E: float, rho: float, k6: float, k12: float) -> DimensionlessGroups:
    """Slenderness, LJ length ratios, adhesive compliances and the atom group."""
    if not (L > 0 and R > 0 and E > 0 and rho > 0):
        raise DomainError("L, R, E and rho must be positive")
    if not (k6 < 0 < k12):
        raise DomainError("need k6 < 0 < k12")
    r_eq, phi_eq = lj_prefactors_to_params(k6, k12)
    return DimensionlessGroups(
        zeta=L / R,
        k_ratio=k12 / (abs(k6) * L**6),
        r_eq_over_R=r_eq / R,
        compliance_k6=rho**2 * abs(k6) / (E * L**3),
        compliance_phi=rho**2 * abs(phi_eq) * L**3 / E,
        atom_group=rho * L**3,
    )


def finite_difference_check(
    target: Callable[[np.ndarray], object],
    dofs,
    step: float = 1e-6,
    derivative: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> FDReport:
    """Compare an analytic derivative with central differences of ``target``.

    ``target`` maps a vector to a scalar or a vector.  The analytic
    derivative comes from ``derivative(dofs)`` or, if that is omitted, from
    the second entry of ``target(dofs)`` returning ``(value, derivative)``.
    The relative error is normalized by the largest analytic entry.
    """
    x = np.asarray(dofs, dtype=float)
    if derivative is None:
        f = lambda y: np.asarray(target(y)[0], dtype=float)  # noqa: E731
        A = np.asarray(target(x)[1], dtype=float)
    else:
        f = lambda y: np.asarray(target(y), dtype=float)  # noqa: E731
        A = np.asarray(derivative(x), dtype=float)
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = step
        cols.append((f(x + e) - f(x - e)) / (2 * step))
    num = np.stack(cols, axis=-1)
    if num.shape != A.shape:
        num = num.reshape(A.shape)
    err = np.abs(num - A)
    idx = np.unravel_index(int(np.argmax(err)), err.shape)
    scale = max(float(np.max(np.abs(A))), 1e-300)
    return FDReport(float(err.max()), float(err.max() / scale), tuple(int(i) for i in idx), A, num)
