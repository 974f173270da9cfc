"""Cubic Hermite centerline elements and a torsion-free elastic rod model.

Every node carries six degrees of freedom ``[x, y, z, tx, ty, tz]``: the
centerline position and a tangent vector.  On the element parameter
``xi in [-1, 1]`` the centerline is::

    r(xi) = Hd1 d1 + Hd2 d2 + (l_ele / 2) (Ht1 t1 + Ht2 t2)

so that ``dr/dxi(-1) = (l_ele/2) t1``.  With unit nodal tangents and
``l_ele`` equal to the arc length, the Jacobian ``|dr/dxi|`` is close to
``l_ele / 2``.  The ``l_ele/2`` factor lives in the shape functions, which are
returned in the node-major order ``[Hd1, Ht1, Hd2, Ht2]`` matching the element
DOF layout ``[d1, t1, d2, t2]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "HermiteBasis",
    "ElasticLaw",
    "BeamMesh",
    "ElementInversionError",
    "hermite_basis",
    "eval_centerline",
    "hermite_arc_length",
    "fit_element_length",
    "ElasticElements",
    "elastic_energy_residual_stiffness",
    "skew",
]


class ElementInversionError(ArithmeticError):
    """The centerline derivative vanished at a quadrature point."""


@dataclass(frozen=True)
class HermiteBasis:
    """Shape functions and their xi-derivatives, each of shape ``(..., 4)``."""

    N: np.ndarray
    dN: np.ndarray
    ddN: np.ndarray
    dddN: np.ndarray


def hermite_basis(xi, l_ele) -> HermiteBasis:
    """Cubic Hermite basis on ``[-1, 1]`` including the ``l_ele/2`` tangent factor.

    ``xi`` and ``l_ele`` broadcast against each other; the trailing axis of each
    returned array enumerates ``[Hd1, Ht1, Hd2, Ht2]``.
    """
    xi = np.asarray(xi, dtype=float)
    if np.any(np.abs(xi) > 1.0 + 1e-12):
        raise ValueError("element parameter outside [-1, 1]")
    xi, h = np.broadcast_arrays(xi, 0.5 * np.asarray(l_ele, dtype=float))
    x2 = xi * xi
    x3 = x2 * xi
    one = np.ones_like(xi)
    N = np.stack(
        [(2 - 3 * xi + x3) / 4, h * (1 - xi - x2 + x3) / 4, (2 + 3 * xi - x3) / 4, h * (-1 - xi + x2 + x3) / 4],
        axis=-1,
    )
    dN = np.stack(
        [(-3 + 3 * x2) / 4, h * (-1 - 2 * xi + 3 * x2) / 4, (3 - 3 * x2) / 4, h * (-1 + 2 * xi + 3 * x2) / 4],
        axis=-1,
    )
    ddN = np.stack([1.5 * xi, h * (-2 + 6 * xi) / 4, -1.5 * xi, h * (2 + 6 * xi) / 4], axis=-1)
    dddN = np.stack([1.5 * one, 1.5 * h, -1.5 * one, 1.5 * h], axis=-1)
    return HermiteBasis(N, dN, ddN, dddN)


def _nodal(dofs) -> np.ndarray:
    """Reshape a ``(..., 12)`` element DOF array into ``(..., 4, 3)`` nodal vectors."""
    dofs = np.asarray(dofs, dtype=float)
    return dofs.reshape(dofs.shape[:-1] + (4, 3))


def eval_centerline(dofs, l_ele: float, xi):
    """Position and first three xi-derivatives of one element at ``xi``.

    Returns four arrays of shape ``xi.shape + (3,)``.
    """
    X = _nodal(dofs)
    B = hermite_basis(xi, l_ele)
    return tuple(np.einsum("...k,kj->...j", M, X) for M in (B.N, B.dN, B.ddN, B.dddN))


def hermite_arc_length(dofs, l_ele: float, n_gauss: int = 16) -> float:
    """Arc length of an element centerline by Gauss-Legendre quadrature."""
    xg, wg = np.polynomial.legendre.leggauss(n_gauss)
    _, a, _, _ = eval_centerline(dofs, l_ele, xg)
    return float(wg @ np.linalg.norm(a, axis=-1))


def fit_element_length(x1, t1, x2, t2, tol: float = 1e-14, max_iter: int = 100) -> float:
    """Reference length ``l`` such that the Hermite curve through the given data has arc length ``l``.

    With unit nodal tangents this makes the element (nearly) arc-length
    parametrized.  For a straight element with aligned tangents the result is
    the node distance.
    """
    dofs = np.concatenate([x1, t1, x2, t2])
    l = float(np.linalg.norm(np.asarray(x2) - np.asarray(x1)))
    for _ in range(max_iter):
        l_new = hermite_arc_length(dofs, l)
        if abs(l_new - l) <= tol * l:
            return l_new
        l = l_new
    return l


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrices ``[v]x`` with ``[v]x w = v x w`` for ``v`` of shape ``(..., 3)``."""
    v = np.asarray(v)
    S = np.zeros(v.shape[:-1] + (3, 3))
    S[..., 0, 1] = -v[..., 2]
    S[..., 0, 2] = v[..., 1]
    S[..., 1, 0] = v[..., 2]
    S[..., 1, 2] = -v[..., 0]
    S[..., 2, 0] = -v[..., 1]
    S[..., 2, 1] = v[..., 0]
    return S


@dataclass(frozen=True)
class ElasticLaw:
    """Axial and bending rigidity of a fiber."""

    EA: float
    EI: float

    def __post_init__(self) -> None:
        if not (self.EA > 0 and self.EI > 0):
            raise ValueError("EA and EI must be positive")

    @classmethod
    def circular(cls, E: float, R: float) -> "ElasticLaw":
        """Rigidities of a solid circular cross-section of radius ``R``."""
        return cls(EA=E * np.pi * R**2, EI=E * np.pi * R**4 / 4.0)


@dataclass
class BeamMesh:
    """Nodes, Hermite elements and fiber connectivity.

    ``ref_dofs`` holds the reference configuration as a flat vector with six
    entries per node.  ``fibers`` lists, per fiber, its element ids in order
    along the fiber.
    """

    ref_dofs: np.ndarray
    elements: np.ndarray
    l_ele: np.ndarray
    elem_fiber: np.ndarray
    fibers: list
    radius: np.ndarray
    fiber_nodes: list = field(default_factory=list)

    @property
    def n_nodes(self) -> int:
        return self.ref_dofs.size // 6

    @property
    def n_dofs(self) -> int:
        return self.ref_dofs.size

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def n_fibers(self) -> int:
        return len(self.fibers)

    def element_dofs(self) -> np.ndarray:
        """Global DOF indices of every element, shape ``(n_el, 12)``."""
        base = 6 * self.elements[:, :, None] + np.arange(6)[None, None, :]
        return base.reshape(-1, 12)

    def free_end_flags(self) -> np.ndarray:
        """``(n_el, 2)`` flags marking element nodes that are free fiber ends."""
        counts = np.bincount(self.elements.ravel(), minlength=self.n_nodes)
        return counts[self.elements] == 1

    def positions(self, dofs: np.ndarray) -> np.ndarray:
        return np.asarray(dofs).reshape(-1, 6)[:, :3]

    def fiber_dofs(self, fiber: int) -> np.ndarray:
        nodes = self.fiber_nodes[fiber]
        return (6 * nodes[:, None] + np.arange(6)).ravel()

    @classmethod
    def from_polylines(
        cls,
        points: Sequence[np.ndarray],
        tangents: Sequence[np.ndarray],
        radii: Sequence[float],
    ) -> "BeamMesh":
        """Build a mesh of open fibers from nodal positions and unit tangents.

        Each fiber ``i`` is given by ``points[i]`` and ``tangents[i]`` of shape
        ``(n_nodes_i, 3)``; consecutive nodes form one element.
        """
        dofs, elems, lens, efib, fibers, fnodes, rad = [], [], [], [], [], [], []
        node0 = 0
        for f, (P, T, R) in enumerate(zip(points, tangents, radii)):
            P = np.asarray(P, dtype=float)
            T = np.asarray(T, dtype=float)
            if len(P) < 2 or P.shape != T.shape:
                raise ValueError("each fiber needs at least two nodes with matching tangents")
            n = len(P)
            dofs.append(np.hstack([P, T]).ravel())
            ids = []
            for i in range(n - 1):
                ids.append(len(elems))
                elems.append((node0 + i, node0 + i + 1))
                lens.append(fit_element_length(P[i], T[i], P[i + 1], T[i + 1]))
                efib.append(f)
                rad.append(R)
            fibers.append(np.array(ids))
            fnodes.append(np.arange(node0, node0 + n))
            node0 += n
        return cls(
            ref_dofs=np.concatenate(dofs),
            elements=np.array(elems, dtype=int),
            l_ele=np.array(lens),
            elem_fiber=np.array(efib, dtype=int),
            fibers=fibers,
            radius=np.array(rad, dtype=float),
            fiber_nodes=fnodes,
        )


# ---------------------------------------------------------------------------
# elastic rod


class ElasticElements:
    """Batched elastic energy, residual and stiffness of all elements of a mesh.

    Energy per element::

        int [ EA/2 eps**2 + EI/2 |kappa - kappa0|**2 ] J0 dxi

    with ``eps = |r'|/J0 - 1`` and the curvature vector
    ``kappa = (r' x r'') / |r'|**3``, where primes denote xi-derivatives and
    ``J0 = |r0'|`` is the reference Jacobian.

    ``kappa0`` is stored per quadrature point as a global vector.  The
    measure is therefore objective for straight reference shapes only; for
    curved fibers a rigid rotation changes the energy unless the reference
    curvature is rotated along (:meth:`set_fiber_rotations`).
    """

    def __init__(self, mesh: BeamMesh, laws: Sequence[ElasticLaw] | ElasticLaw, n_gauss: int = 4):
        if isinstance(laws, ElasticLaw):
            laws = [laws] * mesh.n_fibers
        self.mesh = mesh
        self.edofs = mesh.element_dofs()
        xg, wg = np.polynomial.legendre.leggauss(n_gauss)
        B = hermite_basis(xg[None, :], mesh.l_ele[:, None])
        self.dN = B.dN  # (n_el, n_gp, 4)
        self.ddN = B.ddN
        self.wg = wg
        self.EA = np.array([laws[f].EA for f in mesh.elem_fiber])
        self.EI = np.array([laws[f].EI for f in mesh.elem_fiber])
        X0 = mesh.ref_dofs[self.edofs].reshape(-1, 4, 3)
        a0 = np.einsum("egk,ekj->egj", self.dN, X0)
        b0 = np.einsum("egk,ekj->egj", self.ddN, X0)
        self.J0 = np.linalg.norm(a0, axis=-1)
        if np.any(self.J0 <= 0):
            raise ElementInversionError("degenerate reference element")
        self.kappa0 = np.cross(a0, b0) / self.J0[..., None] ** 3
        self._kappa0_ref = self.kappa0.copy()

    def set_fiber_rotations(self, rotations) -> None:
        """Express the reference curvature of each fiber in a rotated frame.

        ``rotations`` maps fiber index to a 3x3 rotation ``Q``; the stored
        ``kappa0`` of that fiber becomes ``Q kappa0_ref``.  Fibers that are
        absent keep their reference values.
        """
        k0 = self._kappa0_ref.copy()
        for f, Q in rotations.items():
            sel = self.mesh.elem_fiber == f
            k0[sel] = self._kappa0_ref[sel] @ np.asarray(Q).T
        self.kappa0 = k0

    def evaluate(self, dofs: np.ndarray, want_stiffness: bool = True):
        """Per-element ``(energy (n_el,), residual (n_el,12), stiffness (n_el,12,12))``."""
        X = np.asarray(dofs)[self.edofs].reshape(-1, 4, 3)
        return _elastic_kernel(
            X, self.dN, self.ddN, self.wg, self.J0, self.kappa0, self.EA, self.EI, want_stiffness
        )


def _elastic_kernel(X, dN, ddN, wg, J0, kappa0, EA, EI, want_stiffness=True):
    a = np.einsum("egk,ekj->egj", dN, X)
    b = np.einsum("egk,ekj->egj", ddN, X)
    n = np.linalg.norm(a, axis=-1)
    if np.any(n <= 1e-14 * J0):
        raise ElementInversionError("centerline derivative vanished")
    wJ = wg[None, :] * J0
    EA = EA[:, None]
    EI = EI[:, None]
    eps = n / J0 - 1.0
    ahat = a / n[..., None]
    c = np.cross(a, b)
    f = n**-3
    kappa = c * f[..., None]
    w = kappa - kappa0
    energy = np.sum(wJ * (0.5 * EA * eps**2 + 0.5 * EI * np.sum(w * w, axis=-1)), axis=1)

    # gradient w.r.t. a and b
    df_a = (-3.0 * n**-5)[..., None] * a
    cw = np.sum(c * w, axis=-1)
    bxw = np.cross(b, w)
    wxa = np.cross(w, a)
    ga = (EA * eps / J0)[..., None] * ahat + EI[..., None] * (f[..., None] * bxw + cw[..., None] * df_a)
    gb = EI[..., None] * f[..., None] * wxa
    g4 = (
        np.einsum("eg,egk,egj->ekj", wJ, dN, ga) + np.einsum("eg,egk,egj->ekj", wJ, ddN, gb)
    )
    residual = g4.reshape(-1, 12)
    if not want_stiffness:
        return energy, residual, None

    I3 = np.eye(3)
    # curvature Jacobians
    Ka = -f[..., None, None] * skew(b) + c[..., :, None] * df_a[..., None, :]
    Kb = f[..., None, None] * skew(a)
    aa = ahat[..., :, None] * ahat[..., None, :]
    Haa = EA[..., None, None] * (aa / (J0**2)[..., None, None] + (eps / (J0 * n))[..., None, None] * (I3 - aa))
    Haa = Haa + EI[..., None, None] * np.einsum("egki,egkj->egij", Ka, Ka)
    Hab = EI[..., None, None] * np.einsum("egki,egkj->egij", Ka, Kb)
    Hbb = EI[..., None, None] * np.einsum("egki,egkj->egij", Kb, Kb)
    # second-order terms of the curvature
    d2f = (-3.0 * n**-5)[..., None, None] * I3 + (15.0 * n**-7)[..., None, None] * (a[..., :, None] * a[..., None, :])
    Haa = Haa + EI[..., None, None] * (
        df_a[..., :, None] * bxw[..., None, :]
        + bxw[..., :, None] * df_a[..., None, :]
        + cw[..., None, None] * d2f
    )
    Hab = Hab + EI[..., None, None] * (-f[..., None, None] * skew(w) + df_a[..., :, None] * wxa[..., None, :])
    Hba = np.swapaxes(Hab, -1, -2)
    K = (
        np.einsum("eg,egk,egl,egij->ekilj", wJ, dN, dN, Haa)
        + np.einsum("eg,egk,egl,egij->ekilj", wJ, dN, ddN, Hab)
        + np.einsum("eg,egk,egl,egij->ekilj", wJ, ddN, dN, Hba)
        + np.einsum("eg,egk,egl,egij->ekilj", wJ, ddN, ddN, Hbb)
    )
    return energy, residual, K.reshape(-1, 12, 12)


def elastic_energy_residual_stiffness(dofs, l_ele: float, law: ElasticLaw, ref_dofs=None, n_gauss: int = 4):
    """Energy, 12-residual and 12x12 stiffness of a single element.

    ``ref_dofs`` defaults to ``dofs`` (stress-free evaluation).
    """
    dofs = np.asarray(dofs, dtype=float)
    ref = dofs if ref_dofs is None else np.asarray(ref_dofs, dtype=float)
    xg, wg = np.polynomial.legendre.leggauss(n_gauss)
    B = hermite_basis(xg[None, :], np.array([l_ele])[:, None])
    X0 = _nodal(ref)[None]
    a0 = np.einsum("egk,ekj->egj", B.dN, X0)
    b0 = np.einsum("egk,ekj->egj", B.ddN, X0)
    J0 = np.linalg.norm(a0, axis=-1)
    kappa0 = np.cross(a0, b0) / J0[..., None] ** 3
    E, r, K = _elastic_kernel(
        _nodal(dofs)[None], B.dN, B.ddN, wg, J0, kappa0, np.array([law.EA]), np.array([law.EI])
    )
    return float(E[0]), r[0], K[0]
