"""Point-pair laws and the disk-cylinder section-beam interaction law.

The section-beam interaction potential (SBIP) replaces the full six-fold
volume integral between two fibers by a closed-form potential per unit length
of the slave fiber.  For an inverse power law ``Phi_m(r) = k_m r**-m`` the
disk-cylinder law reads::

    pi_m(g, c) = Khat_m * rho1 * sqrt(2 R1 R2 / (R1 c**2 + R2)) * g**(-m + 9/2)

where ``g`` is the unilateral surface gap and ``c = |cos(alpha)|`` the cosine
of the mutual angle of the two centerline tangents.  Everything in this module
is vectorized over ``g`` and ``c`` and free of side effects.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "PointPairLaw",
    "SBIPParams",
    "SbipDerivatives",
    "DomainError",
    "SingularityError",
    "UnsupportedLawError",
    "point_pair",
    "point_pair_derivative",
    "lj_params_to_prefactors",
    "lj_prefactors_to_params",
    "lj_point_pair",
    "sbip_prefactor",
    "sbip_disk_cylinder",
    "sbip_regularized",
    "sbip_total",
    "sbip_equilibrium_gap",
]


class DomainError(ValueError):
    """An argument lies outside the domain of a law."""


class SingularityError(ArithmeticError):
    """The unregularized law was evaluated at a non-positive gap."""


class UnsupportedLawError(ValueError):
    """No SBIP prefactor is known for the requested exponent."""


@dataclass(frozen=True)
class PointPairLaw:
    """Inverse power law ``Phi_m(r) = k_m * r**-m``.

    ``K_m`` is only needed for exponents other than 6 and 12, where the
    disk-cylinder prefactor is not tabulated and must be supplied externally.
    """

    m: int
    k_m: float
    K_m: Optional[float] = None

    def __post_init__(self) -> None:
        if self.m < 6:
            raise DomainError(f"exponent m={self.m} < 6 is not supported")


@dataclass(frozen=True)
class SBIPParams:
    """Parameters of the SBIP interaction between two fibers.

    ``g_reg=None`` selects the unregularized law, which raises
    :class:`SingularityError` for non-positive gaps.
    """

    R1: float
    R2: float
    rho1: float
    rho2: float
    laws: Sequence[PointPairLaw]
    g_reg: Optional[float] = None
    r_cutoff: float = np.inf

    def __post_init__(self) -> None:
        for name in ("R1", "R2", "rho1", "rho2", "r_cutoff"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be positive")
        if self.g_reg is not None and not self.g_reg > 0:
            raise DomainError("g_reg must be positive")
        object.__setattr__(self, "laws", tuple(self.laws))
        exps = {law.m for law in self.laws}
        if self.g_reg is not None and {6, 12} <= exps:
            g_eq = sbip_equilibrium_gap(self)
            if not self.g_reg < g_eq:
                raise DomainError(
                    f"g_reg={self.g_reg} must lie below the equilibrium gap {g_eq}"
                )

    def swapped(self) -> "SBIPParams":
        """Same interaction seen from the other fiber (radii and densities exchanged)."""
        return replace(self, R1=self.R2, R2=self.R1, rho1=self.rho2, rho2=self.rho1)


@dataclass
class SbipDerivatives:
    """Value and partial derivatives of the SBIP law w.r.t. gap ``g`` and ``c``.

    Attribute names follow the differentiation order, e.g. ``d_cgg`` is the
    derivative once w.r.t. ``c`` and twice w.r.t. ``g``.
    """

    value: np.ndarray
    d_g: np.ndarray
    d_c: np.ndarray
    d_gg: np.ndarray
    d_gc: np.ndarray
    d_cc: np.ndarray
    d_ccg: np.ndarray
    d_cgg: np.ndarray
    d_ccgg: np.ndarray

    _fields = ("value", "d_g", "d_c", "d_gg", "d_gc", "d_cc", "d_ccg", "d_cgg", "d_ccgg")

    def __add__(self, other: "SbipDerivatives") -> "SbipDerivatives":
        return SbipDerivatives(
            **{f: getattr(self, f) + getattr(other, f) for f in self._fields}
        )

    def as_dict(self) -> dict:
        return {f: getattr(self, f) for f in self._fields}


# ---------------------------------------------------------------------------
# point-pair laws


def point_pair(law: PointPairLaw, r):
    """Evaluate ``k_m r**-m``."""
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise DomainError("point-pair distance must be positive")
    out = law.k_m * r ** (-law.m)
    return float(out) if out.ndim == 0 else out


def point_pair_derivative(law: PointPairLaw, r):
    """First derivative ``-m k_m r**-(m+1)``."""
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise DomainError("point-pair distance must be positive")
    out = -law.m * law.k_m * r ** (-law.m - 1)
    return float(out) if out.ndim == 0 else out


def lj_params_to_prefactors(r_eq: float, phi_eq: float) -> tuple[float, float]:
    """Convert LJ equilibrium distance and minimum energy into ``(k6, k12)``.

    The LJ law ``-phi_eq ((r_eq/r)**12 - 2 (r_eq/r)**6)`` expands to
    ``k12 r**-12 + k6 r**-6`` with ``k12 = -phi_eq r_eq**12`` and
    ``k6 = 2 phi_eq r_eq**6``.
    """
    if not r_eq > 0:
        raise DomainError("r_eq must be positive")
    if not phi_eq < 0:
        raise DomainError("phi_eq must be negative (it is the energy minimum)")
    return 2.0 * phi_eq * r_eq**6, -phi_eq * r_eq**12


def lj_prefactors_to_params(k6: float, k12: float) -> tuple[float, float]:
    """Inverse of :func:`lj_params_to_prefactors`, returns ``(r_eq, phi_eq)``."""
    if not (k6 < 0 < k12):
        raise DomainError("LJ prefactors need k6 < 0 < k12")
    r_eq6 = -2.0 * k12 / k6
    return r_eq6 ** (1.0 / 6.0), k6 / (2.0 * r_eq6)


def lj_point_pair(r, k6: float, k12: float):
    """Composite LJ point-pair energy."""
    return point_pair(PointPairLaw(6, k6), r) + point_pair(PointPairLaw(12, k12), r)


# ---------------------------------------------------------------------------
# disk-cylinder law

_TABULATED = {
    6: np.pi**2 / 24.0,
    12: 143.0 * np.pi**2 / (15.0 * 2**14),
}


def sbip_prefactor(law: PointPairLaw, rho2: float) -> float:
    """Prefactor ``Khat_m`` of the disk-cylinder law (includes ``k_m`` and ``rho2``)."""
    if law.K_m is not None:
        return 4.0 ** (-law.m + 4.5) * law.K_m
    try:
        return _TABULATED[law.m] * law.k_m * rho2
    except KeyError:
        raise UnsupportedLawError(
            f"no tabulated SBIP prefactor for m={law.m}; supply K_m explicitly"
        ) from None


def _raw(params: SBIPParams, law: PointPairLaw, g: np.ndarray, c: np.ndarray) -> SbipDerivatives:
    """Unregularized law and derivatives, without domain checks."""
    R1, R2 = params.R1, params.R2
    e1 = -law.m + 4.5
    e2 = -law.m + 3.5
    den = R1 * c * c + R2
    value = sbip_prefactor(law, params.rho2) * params.rho1 * np.sqrt(2.0 * R1 * R2 / den) * g**e1
    d_g = e1 * value / g
    d_gg = e2 * d_g / g
    d_c = -R1 * c / den * value
    d_cc = (-R1 / den + 3.0 * R1**2 * c * c / den**2) * value
    d_gc = e1 * d_c / g
    d_ccg = e1 * d_cc / g
    d_cgg = e1 * e2 * d_c / (g * g)
    d_ccgg = e1 * e2 * d_cc / (g * g)
    return SbipDerivatives(value, d_g, d_c, d_gg, d_gc, d_cc, d_ccg, d_cgg, d_ccgg)


def sbip_disk_cylinder(params: SBIPParams, law: PointPairLaw, g_ul, cos_alpha) -> SbipDerivatives:
    """Unregularized disk-cylinder law and its partial derivatives.

    ``cos_alpha`` is the absolute value ``|t1 . t2|``; the sign of the tangent
    product is handled by the kinematics.
    """
    g, c = np.broadcast_arrays(np.asarray(g_ul, dtype=float), np.asarray(cos_alpha, dtype=float))
    if np.any(g <= 0):
        raise SingularityError("disk-cylinder law evaluated at non-positive gap")
    return _raw(params, law, g, c)


def sbip_regularized(params: SBIPParams, law: PointPairLaw, g_ul, cos_alpha) -> SbipDerivatives:
    """Disk-cylinder law with quadratic extrapolation below ``params.g_reg``.

    Below the regularization gap the potential and its ``c``-derivatives are
    replaced by their second-order Taylor polynomial in ``g`` about ``g_reg``.
    The force is therefore linear and the stiffness constant in ``g`` there.
    """
    if params.g_reg is None:
        return sbip_disk_cylinder(params, law, g_ul, cos_alpha)
    g, c = np.broadcast_arrays(np.asarray(g_ul, dtype=float), np.asarray(cos_alpha, dtype=float))
    g_reg = params.g_reg
    below = g < g_reg
    out = _raw(params, law, np.where(below, g_reg, g), c)
    if not np.any(below):
        return out
    a = _raw(params, law, np.full_like(g, g_reg), c)
    dg = g - g_reg
    ext = SbipDerivatives(
        value=a.value + a.d_g * dg + 0.5 * a.d_gg * dg**2,
        d_g=a.d_g + a.d_gg * dg,
        d_gg=a.d_gg,
        d_c=a.d_c + a.d_gc * dg + 0.5 * a.d_cgg * dg**2,
        d_gc=a.d_gc + a.d_cgg * dg,
        d_cgg=a.d_cgg,
        d_cc=a.d_cc + a.d_ccg * dg + 0.5 * a.d_ccgg * dg**2,
        d_ccg=a.d_ccg + a.d_ccgg * dg,
        d_ccgg=a.d_ccgg,
    )
    return SbipDerivatives(
        **{f: np.where(below, getattr(ext, f), getattr(out, f)) for f in SbipDerivatives._fields}
    )


def sbip_total(params: SBIPParams, g_ul, cos_alpha) -> SbipDerivatives:
    """Sum of the (regularized if configured) laws in ``params.laws``."""
    total = None
    for law in params.laws:
        d = sbip_regularized(params, law, g_ul, cos_alpha)
        total = d if total is None else total + d
    if total is None:
        zero = np.zeros(np.broadcast(np.asarray(g_ul), np.asarray(cos_alpha)).shape)
        total = SbipDerivatives(*(zero.copy() for _ in SbipDerivatives._fields))
    return total


def sbip_equilibrium_gap(params: SBIPParams) -> float:
    """Gap at which the summed LJ disk-cylinder law is stationary in ``g``.

    The angular factor is shared by both exponents, so the result holds for
    every mutual angle: ``g_eq**6 = -5 Khat_12 / Khat_6``.
    """
    by_m = {law.m: law for law in params.laws}
    if 6 not in by_m or 12 not in by_m:
        raise DomainError("equilibrium gap needs both the m=6 and m=12 laws")
    K6 = sbip_prefactor(by_m[6], params.rho2)
    K12 = sbip_prefactor(by_m[12], params.rho2)
    ratio = -5.0 * K12 / K6
    if not ratio > 0:
        raise DomainError("LJ laws need k6 < 0 < k12")
    return ratio ** (1.0 / 6.0)
