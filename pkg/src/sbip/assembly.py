"""SBIP pair evaluation, global assembly of interaction terms and broad-phase search.

The interaction energy of an element pair is a single integral along the
slave element::

    Pi_ia = int pi(g(xi1), c(xi1)) ds1

evaluated by segmented Gauss-Legendre quadrature.  At every slave Gauss point
the master element is replaced by its tangent cylinder at the closest point.
All Gauss points of all candidate pairs are processed as one vectorized batch.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from itertools import product
from typing import Optional, Sequence

import numpy as np
from scipy import sparse

from .beam import BeamMesh, hermite_basis
from .kinematics import (
    FAILED,
    INTERIOR,
    SINGULAR,
    ProjectionError,
    SingularProjectionError,
    pair_kinematics,
    project_batch,
    stiffness_from_factors,
)
from .potentials import SBIPParams, sbip_total

__all__ = [
    "QuadratureSpec",
    "PairContribution",
    "BroadPhaseConfig",
    "PairElement",
    "InvalidPairError",
    "assign_master_slave",
    "evaluate_pair",
    "evaluate_batch",
    "element_spheres",
    "build_candidate_pairs",
    "self_interaction_pairs",
    "InteractionEvaluator",
]


class InvalidPairError(ValueError):
    """An element was paired with itself."""


@dataclass(frozen=True)
class QuadratureSpec:
    """Segmented Gauss-Legendre rule along the slave element."""

    n_segments: int = 2
    n_gp_per_segment: int = 10

    def __post_init__(self) -> None:
        if self.n_segments < 1 or self.n_gp_per_segment < 1:
            raise ValueError("quadrature counts must be at least 1")

    @property
    def n_points(self) -> int:
        return self.n_segments * self.n_gp_per_segment

    def points_weights(self) -> tuple[np.ndarray, np.ndarray]:
        """Points and weights on ``[-1, 1]`` (segments of equal xi-length)."""
        x, w = np.polynomial.legendre.leggauss(self.n_gp_per_segment)
        edges = np.linspace(-1.0, 1.0, self.n_segments + 1)
        half = 0.5 * (edges[1:] - edges[:-1])
        mid = 0.5 * (edges[1:] + edges[:-1])
        pts = (mid[:, None] + half[:, None] * x[None, :]).ravel()
        wts = (half[:, None] * w[None, :]).ravel()
        return pts, wts


@dataclass
class PairContribution:
    """Energy, 24-residual (slave then master) and 24x24 stiffness of one element pair."""

    energy: float
    residual: np.ndarray
    stiffness: Optional[np.ndarray]
    xi: Optional[np.ndarray] = None


@dataclass(frozen=True)
class BroadPhaseConfig:
    """Bucket search and bounding-sphere filter settings.

    ``bucket_edge=None`` picks the smallest edge for which the 27-cell
    stencil is guaranteed to contain every pair that can pass the filter.
    """

    bucket_edge: Optional[float] = None
    filter_multiplier: float = 2.0


@dataclass
class PairElement:
    """Standalone element data for :func:`evaluate_pair`."""

    dofs: np.ndarray
    l_ele: float
    ref_dofs: Optional[np.ndarray] = None
    free_ends: tuple = (True, True)


def assign_master_slave(elem_a: int, elem_b: int, swap: bool = False) -> tuple[int, int]:
    """Return ``(slave, master)``: the smaller id is the slave (the larger one if ``swap``)."""
    if elem_a == elem_b:
        raise InvalidPairError("an element cannot interact with itself")
    lo, hi = (elem_a, elem_b) if elem_a < elem_b else (elem_b, elem_a)
    return (hi, lo) if swap else (lo, hi)


# ---------------------------------------------------------------------------
# batched evaluation


def evaluate_batch(
    X1,
    X2,
    l1,
    l2,
    N1,
    dN1,
    wJ,
    free_ends,
    params: SBIPParams,
    xi0=None,
    order: int = 2,
    spheres=None,
):
    """Evaluate ``P`` element pairs with ``G`` slave Gauss points each.

    Parameters
    ----------
    X1, X2 : (P, 4, 3) slave and master nodal vectors.
    l1, l2 : (P,) reference lengths.
    N1, dN1 : (P, G, 4) slave shape functions at the Gauss points.
    wJ : (P, G) quadrature weight times reference Jacobian of the slave.
    free_ends : (P, 2) flags of master end nodes that are free fiber ends;
        boundary projections only contribute onto such ends.
    xi0 : (P, G) warm-start parameters (NaN for cold start) or None.
    order : 0 energy only, 1 adds the residual, 2 adds the stiffness.
    spheres : optional ``(center (P, 3), radius (P,))`` master bounding
        spheres used to skip Gauss points that cannot reach the cutoff.

    Returns
    -------
    energy (P,), residual (P, 24) or None, stiffness (P, 24, 24) or None,
    xi (P, G) projected parameters (NaN where skipped), number of
    contributing Gauss points.
    """
    P, G = wJ.shape
    R1, R2 = params.R1, params.R2
    r1 = np.einsum("pgk,pkj->pgj", N1, X1).reshape(-1, 3)
    a1 = np.einsum("pgk,pkj->pgj", dN1, X1).reshape(-1, 3)
    pair_of = np.repeat(np.arange(P), G)
    xi_all = np.full(P * G, np.nan)

    cand = np.arange(P * G)
    if spheres is not None and np.isfinite(params.r_cutoff):
        center, rad = spheres
        reach = np.linalg.norm(r1 - center[pair_of], axis=1) - rad[pair_of] - R1 - R2
        cand = np.nonzero(reach <= params.r_cutoff)[0]

    energy = np.zeros(P)
    res = np.zeros((P, 24)) if order >= 1 else None
    K = np.zeros((P, 24, 24)) if order >= 2 else None
    if cand.size == 0:
        return energy, res, K, xi_all.reshape(P, G), 0

    pc = pair_of[cand]
    guess = None if xi0 is None else np.asarray(xi0, dtype=float).reshape(-1)[cand]
    xi, status, _ = project_batch(r1[cand], X2[pc], l2[pc], guess)
    bad = (status == FAILED) | (status == SINGULAR)
    if np.any(bad):
        i = np.nonzero(bad)[0][0]
        cls = SingularProjectionError if status[i] == SINGULAR else ProjectionError
        raise cls(
            "closest-point projection failed",
            last_iterate=float(xi[i]),
            location=(int(pc[i]), int(cand[i] % G)),
        )
    xi_all[cand] = xi
    end_ok = np.ones(cand.size, dtype=bool)
    lo, hi = status == -1, status == 1
    end_ok[lo] = free_ends[pc[lo], 0]
    end_ok[hi] = free_ends[pc[hi], 1]

    keep = np.nonzero(end_ok)[0]
    if keep.size == 0:
        return energy, res, K, xi_all.reshape(P, G), 0
    idx = cand[keep]
    pk = pair_of[idx]
    gi = idx % G
    frozen = status[keep] != INTERIOR
    k0 = pair_kinematics(
        r1[idx], a1[idx], N1[pk, gi], dN1[pk, gi], X2[pk], l2[pk], xi[keep], frozen, R1, R2, order=0
    )
    within = np.nonzero(k0.g <= params.r_cutoff)[0]
    if within.size == 0:
        return energy, res, K, xi_all.reshape(P, G), 0
    idx, pk, gi, frozen = idx[within], pk[within], gi[within], frozen[within]
    xk = xi[keep][within]
    k = pair_kinematics(
        r1[idx], a1[idx], N1[pk, gi], dN1[pk, gi], X2[pk], l2[pk], xk, frozen, R1, R2, order=order, blocks=False
    )
    law = sbip_total(params, k.g, k.c)
    w = wJ[pk, gi]
    np.add.at(energy, pk, w * law.value)
    if order >= 1:
        r_items = w[:, None] * (law.d_g[:, None] * k.first.w_g + law.d_c[:, None] * k.first.w_c)
        np.add.at(res, pk, r_items)
    if order >= 2:
        k_items = stiffness_from_factors(k, law.d_g, law.d_c, law.d_gg, law.d_gc, law.d_cc, w)
        # items are ordered by pair, so a segmented sum reduces them
        starts = np.r_[0, np.nonzero(np.diff(pk))[0] + 1]
        K[pk[starts]] = np.add.reduceat(k_items, starts, axis=0)
    return energy, res, K, xi_all.reshape(P, G), idx.size


def _slave_quadrature(l_ele, ref_X, quad: QuadratureSpec):
    """Slave shape functions and ``w*J0`` at the quadrature points for elements of lengths ``l_ele``."""
    pts, wts = quad.points_weights()
    B = hermite_basis(pts[None, :], np.asarray(l_ele)[:, None])
    J0 = np.linalg.norm(np.einsum("egk,ekj->egj", B.dN, ref_X), axis=-1)
    return B.N, B.dN, wts[None, :] * J0


def evaluate_pair(
    slave: PairElement,
    master: PairElement,
    params: SBIPParams,
    quad: QuadratureSpec = QuadratureSpec(),
    order: int = 2,
    xi0=None,
) -> PairContribution:
    """Energy, residual and stiffness of a single slave/master element pair."""
    X1 = np.asarray(slave.dofs, dtype=float).reshape(1, 4, 3)
    X2 = np.asarray(master.dofs, dtype=float).reshape(1, 4, 3)
    ref1 = X1 if slave.ref_dofs is None else np.asarray(slave.ref_dofs, dtype=float).reshape(1, 4, 3)
    N1, dN1, wJ = _slave_quadrature(np.array([slave.l_ele]), ref1, quad)
    E, r, K, xi, _ = evaluate_batch(
        X1,
        X2,
        np.array([slave.l_ele]),
        np.array([master.l_ele]),
        N1,
        dN1,
        wJ,
        np.array([master.free_ends], dtype=bool),
        params,
        xi0=None if xi0 is None else np.asarray(xi0)[None],
        order=order,
    )
    return PairContribution(
        energy=float(E[0]),
        residual=None if r is None else r[0],
        stiffness=None if K is None else K[0],
        xi=xi[0],
    )


# ---------------------------------------------------------------------------
# broad phase

_SPHERE_SAMPLES = np.linspace(-1.0, 1.0, 17)


def element_spheres(mesh: BeamMesh, dofs) -> tuple[np.ndarray, np.ndarray]:
    """Bounding spheres of the element centerlines (fiber radius not included)."""
    X = np.asarray(dofs)[mesh.element_dofs()].reshape(-1, 4, 3)
    B = hermite_basis(_SPHERE_SAMPLES[None, :], mesh.l_ele[:, None])
    pts = np.einsum("esk,ekj->esj", B.N, X)
    center = 0.5 * (pts[:, 0] + pts[:, -1])
    rad = np.max(np.linalg.norm(pts - center[:, None, :], axis=-1), axis=1)
    # margin for the curve between the sample points
    chord = np.linalg.norm(pts[:, -1] - pts[:, 0], axis=1)
    return center, rad + 0.01 * chord + 1e-12


def _shares_node(mesh: BeamMesh, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ea, eb = mesh.elements[a], mesh.elements[b]
    return (ea[:, :1] == eb).any(axis=1) | (ea[:, 1:] == eb).any(axis=1)


def self_interaction_pairs(mesh: BeamMesh) -> list[tuple[int, int]]:
    """All pairs of elements on the same fiber that do not share a node."""
    out = []
    for elems in mesh.fibers:
        elems = list(elems)
        for i, a in enumerate(elems):
            for b in elems[i + 1 :]:
                if not _shares_node(mesh, np.array([a]), np.array([b]))[0]:
                    out.append((min(a, b), max(a, b)))
    return out


def build_candidate_pairs(
    mesh: BeamMesh,
    dofs,
    config: BroadPhaseConfig,
    params: SBIPParams,
    include_self: bool = True,
) -> list[tuple[int, int]]:
    """Element pairs that may interact, as sorted ``(smaller id, larger id)`` tuples.

    Elements are hashed into cubic buckets by the centers of their bounding
    spheres; pairs from the 27-cell neighborhood survive if their spheres,
    inflated by the fiber radii, are at most ``filter_multiplier * r_cutoff``
    apart.  Elements sharing a node are never paired.
    """
    center, rad = element_spheres(mesh, dofs)
    rad = rad + mesh.radius
    n = len(center)
    limit = config.filter_multiplier * params.r_cutoff
    if n < 2:
        return []
    if not np.isfinite(limit):
        a, b = np.triu_indices(n, k=1)
    else:
        needed = 2.0 * rad.max() + limit
        edge = max(config.bucket_edge or 0.0, needed)
        keys = np.floor(center / edge).astype(np.int64)
        buckets: dict = {}
        for e, key in enumerate(map(tuple, keys)):
            buckets.setdefault(key, []).append(e)
        pa, pb = [], []
        offsets = list(product((-1, 0, 1), repeat=3))
        for key, members in buckets.items():
            for off in offsets:
                other = buckets.get((key[0] + off[0], key[1] + off[1], key[2] + off[2]))
                if other is None:
                    continue
                for i in members:
                    for j in other:
                        if i < j:
                            pa.append(i)
                            pb.append(j)
        if not pa:
            return []
        a, b = np.array(pa), np.array(pb)
        gap = np.linalg.norm(center[a] - center[b], axis=1) - rad[a] - rad[b]
        ok = gap <= limit
        a, b = a[ok], b[ok]
    ok = ~_shares_node(mesh, a, b)
    if not include_self:
        ok &= mesh.elem_fiber[a] != mesh.elem_fiber[b]
    a, b = a[ok], b[ok]
    order = np.lexsort((b, a))
    return list(zip(a[order].tolist(), b[order].tolist()))


# ---------------------------------------------------------------------------
# global evaluator


class InteractionEvaluator:
    """Global SBIP energy, residual and stiffness of a mesh.

    The evaluator owns the warm-start cache of projected master parameters,
    keyed by (slave, master) element pair.  ``threads > 1`` splits the pair
    batch into contiguous chunks evaluated concurrently; the reduction order
    is fixed, so results are reproducible for a given thread count.
    """

    def __init__(
        self,
        mesh: BeamMesh,
        params: SBIPParams,
        quad: QuadratureSpec = QuadratureSpec(),
        broad: BroadPhaseConfig = BroadPhaseConfig(),
        swap_master_slave: bool = False,
        include_self: bool = True,
        threads: int = 1,
        rigid_fibers: Sequence[int] = (),
    ):
        self.mesh = mesh
        self.params = params
        self.quad = quad
        self.broad = broad
        self.swap = swap_master_slave
        self.include_self = include_self
        self.threads = max(1, int(threads))
        self.rigid = set(int(f) for f in rigid_fibers)
        self.edofs = mesh.element_dofs()
        X0 = mesh.ref_dofs[self.edofs].reshape(-1, 4, 3)
        self.N1, self.dN1, self.wJ = _slave_quadrature(mesh.l_ele, X0, quad)
        self.free_ends = mesh.free_end_flags()
        self.cache: dict = {}
        self.last_pairs: list = []
        self.last_active = 0

    def reset_cache(self) -> None:
        self.cache.clear()

    def pairs(self, dofs) -> list[tuple[int, int]]:
        raw = build_candidate_pairs(self.mesh, dofs, self.broad, self.params, self.include_self)
        out = []
        for a, b in raw:
            if self.rigid and self.mesh.elem_fiber[a] in self.rigid and self.mesh.elem_fiber[b] in self.rigid:
                continue
            out.append(assign_master_slave(a, b, self.swap))
        return out

    def evaluate(self, dofs, order: int = 2, update_cache: bool = True, pairs=None):
        """Return ``(energy, residual (n_dofs,), stiffness sparse or None)``."""
        dofs = np.asarray(dofs, dtype=float)
        n_dofs = dofs.size
        if pairs is None:
            pairs = self.pairs(dofs)
        self.last_pairs = pairs
        if not pairs:
            self.last_active = 0
            K = sparse.csr_matrix((n_dofs, n_dofs)) if order >= 2 else None
            return 0.0, np.zeros(n_dofs) if order >= 1 else None, K
        s = np.array([p[0] for p in pairs])
        m = np.array([p[1] for p in pairs])
        G = self.quad.n_points
        xi0 = np.full((len(pairs), G), np.nan)
        for i, key in enumerate(pairs):
            cached = self.cache.get(key)
            if cached is not None:
                xi0[i] = cached
        X = dofs[self.edofs].reshape(-1, 4, 3)
        center, rad = element_spheres(self.mesh, dofs)
        lengths = self.mesh.l_ele

        def run(sl):
            return evaluate_batch(
                X[s[sl]], X[m[sl]], lengths[s[sl]], lengths[m[sl]],
                self.N1[s[sl]], self.dN1[s[sl]], self.wJ[s[sl]],
                self.free_ends[m[sl]], self.params, xi0[sl], order,
                spheres=(center[m[sl]], rad[m[sl]]),
            )

        if self.threads > 1 and len(pairs) >= 2 * self.threads:
            bounds = np.linspace(0, len(pairs), self.threads + 1).astype(int)
            slices = [slice(bounds[i], bounds[i + 1]) for i in range(self.threads)]
            with ThreadPoolExecutor(self.threads) as ex:
                parts = list(ex.map(run, slices))
            E = np.concatenate([p[0] for p in parts])
            r = np.concatenate([p[1] for p in parts]) if order >= 1 else None
            Kp = np.concatenate([p[2] for p in parts]) if order >= 2 else None
            xi = np.concatenate([p[3] for p in parts])
            self.last_active = sum(p[4] for p in parts)
        else:
            E, r, Kp, xi, self.last_active = run(slice(None))
        if update_cache:
            for i, key in enumerate(pairs):
                self.cache[key] = xi[i]
        idx = np.concatenate([self.edofs[s], self.edofs[m]], axis=1)
        energy = float(E.sum())
        res = None
        if order >= 1:
            res = np.zeros(n_dofs)
            np.add.at(res, idx, r)
        K = None
        if order >= 2:
            rows = np.broadcast_to(idx[:, :, None], Kp.shape).ravel()
            cols = np.broadcast_to(idx[:, None, :], Kp.shape).ravel()
            K = sparse.coo_matrix((Kp.ravel(), (rows, cols)), shape=(n_dofs, n_dofs)).tocsr()
        return energy, res, K
