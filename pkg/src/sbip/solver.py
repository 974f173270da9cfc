"""Quasi-static, displacement-controlled Newton solver with step-size control.

The discrete equilibrium ``r_int(d) + r_ia(d) = 0`` on the free DOFs is the
stationarity condition of the total potential energy ``Pi_int + Pi_ia`` (no
external loads; the loading enters through prescribed DOFs).  Each Newton
iteration uses the consistent tangent.  When the tangent of the free block is
not positive definite it is shifted until a Cholesky factorization exists,
and the update is accepted with a backtracking line search on energy or
residual.  This keeps the iteration a descent method, so a load step past a
limit point (snap into or out of contact) settles in the nearest stable state
instead of diverging.  A load step that keeps failing is finally relaxed
with a large iteration budget, which carries the state across a snap-through.
"""

from __future__ import annotations

import logging
import time as _time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import linalg, sparse

from .assembly import InteractionEvaluator
from .beam import BeamMesh, ElasticElements, ElementInversionError
from .kinematics import DegenerateKinematicsError, ProjectionError
from .potentials import SingularityError

__all__ = [
    "RigidMotion",
    "DirichletSet",
    "LoadProgram",
    "SolverConfig",
    "SolutionRecord",
    "StepResult",
    "SolverAbort",
    "Model",
    "rotation_matrix",
    "solve_step",
    "run_program",
    "reaction_forces",
]

log = logging.getLogger(__name__)

_EVAL_ERRORS = (ProjectionError, SingularityError, ElementInversionError, DegenerateKinematicsError, FloatingPointError)


def rotation_matrix(axis, angle: float) -> np.ndarray:
    """Rotation about ``axis`` by ``angle`` (radians), Rodrigues formula."""
    k = np.asarray(axis, dtype=float)
    k = k / np.linalg.norm(k)
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * (K @ K)


@dataclass
class RigidMotion:
    """Piecewise-linear rigid motion ``x -> Rot(angle(t)) (x - center) + center + u(t)``.

    ``translations`` has one row per control time of the load program and
    ``angles`` one entry per control time (radians about ``axis``).
    """

    translations: np.ndarray
    angles: Optional[np.ndarray] = None
    axis: Sequence[float] = (0.0, 0.0, 1.0)
    center: Sequence[float] = (0.0, 0.0, 0.0)

    def at(self, times: np.ndarray, t: float) -> tuple[np.ndarray, float]:
        u = np.array([np.interp(t, times, self.translations[:, i]) for i in range(3)])
        ang = 0.0 if self.angles is None else float(np.interp(t, times, self.angles))
        return u, ang


@dataclass
class DirichletSet:
    """Prescribed DOFs on a group of nodes following one rigid motion.

    ``components`` selects node-local DOFs (0-2 position, 3-5 tangent).
    """

    name: str
    nodes: np.ndarray
    components: Sequence[int]
    motion: Optional[RigidMotion] = None

    def dofs(self) -> np.ndarray:
        return (6 * np.asarray(self.nodes)[:, None] + np.asarray(self.components)[None, :]).ravel()

    def values(self, ref_dofs: np.ndarray, times: np.ndarray, t: float) -> np.ndarray:
        X = ref_dofs.reshape(-1, 6)[self.nodes]
        if self.motion is None:
            return X[:, self.components].ravel()
        u, ang = self.motion.at(times, t)
        Rm = rotation_matrix(self.motion.axis, ang)
        c = np.asarray(self.motion.center, dtype=float)
        pos = (X[:, :3] - c) @ Rm.T + c + u
        tan = X[:, 3:] @ Rm.T
        return np.hstack([pos, tan])[:, self.components].ravel()


@dataclass
class LoadProgram:
    """Control times and step-size limits of a quasi-static program."""

    times: np.ndarray
    dt: float
    dt_min: float
    dt_max: float

    def __post_init__(self) -> None:
        self.times = np.asarray(self.times, dtype=float)
        if len(self.times) < 2 or np.any(np.diff(self.times) <= 0):
            raise ValueError("control times must be strictly increasing")
        if not (0 < self.dt_min <= self.dt <= self.dt_max):
            raise ValueError("need 0 < dt_min <= dt <= dt_max")


@dataclass
class SolverConfig:
    """Newton and step-control settings.

    Convergence: ``||r_free|| <= tol * ref_force``.  After ``relax_after``
    step halvings without an intervening step-size increase (a load path
    creeping toward a limit point succeeds on ever smaller steps), the
    smallest attempted step is retried once with ``relax_iter`` iterations.  Past a limit point the
    descent iteration then travels to the next stable branch (snap-through);
    ``relax_iter = 0`` disables this.
    """

    tol: float = 1e-8
    ref_force: float = 1.0
    max_iter: int = 50
    grow_after: int = 3
    line_search: bool = True
    max_backtracks: int = 30
    predictor: str = "secant"
    relax_after: int = 4
    relax_iter: int = 2000
    verbose: bool = False


@dataclass
class SolutionRecord:
    time: float
    dofs: np.ndarray
    reactions: dict
    pi_int: float
    pi_ia: float
    iterations: int
    prescribed: dict = field(default_factory=dict)
    snap: bool = False


@dataclass
class StepResult:
    converged: bool
    dofs: np.ndarray
    iterations: int
    residual_norm: float
    pi_int: float = np.nan
    pi_ia: float = np.nan
    message: str = ""
    shifted: bool = False
    energy_drop: float = 0.0


class SolverAbort(RuntimeError):
    """Step size fell below the minimum; carries the converged records so far."""

    def __init__(self, msg: str, records: list):
        super().__init__(msg)
        self.records = records


class Model:
    """Mesh, elastic elements, optional interaction and Dirichlet sets.

    ``supports`` maps a fiber index to the name of the Dirichlet set it is
    grafted to.  The reference curvature of such a fiber follows the
    rotation of that set's rigid motion, so turning a support together with
    its curved fibers costs no bending energy.
    """

    def __init__(
        self,
        mesh: BeamMesh,
        elastic: ElasticElements,
        interaction: Optional[InteractionEvaluator],
        dirichlet: Sequence[DirichletSet],
        supports: Optional[dict] = None,
    ):
        self.mesh = mesh
        self.supports = dict(supports or {})
        self.elastic = elastic
        self.interaction = interaction
        self.dirichlet = list(dirichlet)
        fixed = np.concatenate([s.dofs() for s in self.dirichlet]) if self.dirichlet else np.array([], int)
        if len(np.unique(fixed)) != len(fixed):
            raise ValueError("a DOF is prescribed by more than one Dirichlet set")
        self.fixed = fixed.astype(int)
        mask = np.ones(mesh.n_dofs, dtype=bool)
        mask[self.fixed] = False
        self.free = np.nonzero(mask)[0]
        edofs = mesh.element_dofs()
        self._rows = np.broadcast_to(edofs[:, :, None], (len(edofs), 12, 12)).ravel()
        self._cols = np.broadcast_to(edofs[:, None, :], (len(edofs), 12, 12)).ravel()
        self._edofs = edofs

    def set_time(self, times: np.ndarray, t: float) -> None:
        """Update time-dependent model data (support rotations)."""
        if not self.supports:
            return
        by_name = {s.name: s for s in self.dirichlet}
        rot = {}
        for f, name in self.supports.items():
            motion = by_name[name].motion
            if motion is not None:
                _, ang = motion.at(times, t)
                rot[f] = rotation_matrix(motion.axis, ang)
        self.elastic.set_fiber_rotations(rot)

    def apply_dirichlet(self, dofs: np.ndarray, times: np.ndarray, t: float) -> np.ndarray:
        """Prescribed values at time ``t`` written into a copy of ``dofs``."""
        self.set_time(times, t)
        out = np.array(dofs, dtype=float, copy=True)
        for s in self.dirichlet:
            out[s.dofs()] = s.values(self.mesh.ref_dofs, times, t)
        return out

    def assemble(self, dofs: np.ndarray, order: int = 2, update_cache: bool = True):
        """Return ``(pi_int, pi_ia, residual, stiffness or None)``."""
        n = self.mesh.n_dofs
        Ee, re, Ke = self.elastic.evaluate(dofs, want_stiffness=order >= 2)
        r = np.zeros(n)
        np.add.at(r, self._edofs, re)
        K = None
        if order >= 2:
            K = sparse.coo_matrix((Ke.ravel(), (self._rows, self._cols)), shape=(n, n)).tocsr()
        pi_ia = 0.0
        if self.interaction is not None:
            pi_ia, ri, Ki = self.interaction.evaluate(dofs, order=max(order, 1), update_cache=update_cache)
            r += ri
            if order >= 2:
                K = K + Ki
        return float(Ee.sum()), pi_ia, r, K


def _factor_spd(A: np.ndarray, mu_min: float = 0.0):
    """Cholesky factor of ``A + mu I`` with the smallest tried shift ``mu >= mu_min``."""
    if mu_min == 0.0:
        try:
            return linalg.cho_factor(A, check_finite=False), 0.0
        except linalg.LinAlgError:
            pass
    scale = max(np.max(np.abs(np.diag(A))), 1e-300)
    mu = max(1e-10 * scale, mu_min)
    I = np.eye(len(A))
    while mu < 1e6 * scale:
        try:
            return linalg.cho_factor(A + mu * I, check_finite=False), mu
        except linalg.LinAlgError:
            mu *= 10.0
    raise linalg.LinAlgError("tangent could not be regularized")


def _line_search(model, d, free, step, energy, slope, rnorm, mu, config):
    """Backtracking on the energy; returns the accepted state or ``None``."""
    alpha = 1.0
    for _ in range(config.max_backtracks if config.line_search else 1):
        trial = d.copy()
        trial[free] += alpha * step
        try:
            t_int, t_ia, t_r, t_K = model.assemble(trial)
        except _EVAL_ERRORS:
            alpha *= 0.5
            continue
        e_new = t_int + t_ia
        r_new = float(np.linalg.norm(t_r[free]))
        if not config.line_search or (
            np.isfinite(r_new) and (e_new <= energy + 1e-4 * alpha * slope or (mu == 0.0 and r_new < rnorm))
        ):
            return trial, t_int, t_ia, t_r, t_K
        alpha *= 0.5
    return None


def solve_step(
    model: Model,
    dofs_start: np.ndarray,
    times: np.ndarray,
    t: float,
    config: SolverConfig,
    max_iter: Optional[int] = None,
) -> StepResult:
    """Newton iteration on the free DOFs at load time ``t`` starting from ``dofs_start``.

    The prescribed DOFs are set to their values at ``t`` before iterating.
    When the line search fails the tangent shift is raised tenfold (up to
    four times) before the step is declared failed.
    """
    max_iter = config.max_iter if max_iter is None else max_iter
    d = model.apply_dirichlet(dofs_start, times, t)
    free = model.free
    tol = config.tol * config.ref_force
    try:
        pi_int, pi_ia, r, K = model.assemble(d)
    except _EVAL_ERRORS as exc:
        return StepResult(False, d, 0, np.inf, message=f"evaluation failed: {exc}")
    e_start = pi_int + pi_ia
    shifted = False
    rnorm = np.inf
    for it in range(1, max_iter + 1):
        rf = r[free]
        rnorm = float(np.linalg.norm(rf))
        if not np.isfinite(rnorm):
            return StepResult(False, d, it, rnorm, message="non-finite residual")
        if config.verbose:
            log.info("  iter %d |r|=%.3e", it, rnorm)
        if rnorm <= tol:
            return StepResult(
                True, d, it, rnorm, pi_int, pi_ia, shifted=shifted, energy_drop=e_start - pi_int - pi_ia
            )
        if it == max_iter:
            break
        Kff = K[free][:, free].toarray()
        energy = pi_int + pi_ia
        mu_min = 0.0
        accepted = None
        for _ in range(5):
            try:
                fac, mu = _factor_spd(Kff, mu_min)
            except linalg.LinAlgError:
                cond = np.linalg.cond(Kff)
                return StepResult(False, d, it, rnorm, message=f"singular tangent (cond {cond:.2e})")
            step = -linalg.cho_solve(fac, rf, check_finite=False)
            accepted = _line_search(model, d, free, step, energy, float(rf @ step), rnorm, mu, config)
            if accepted is not None or not config.line_search:
                break
            scale = max(np.max(np.abs(np.diag(Kff))), 1e-300)
            mu_min = max(10.0 * mu, 1e-8 * scale)
        shifted = shifted or mu > 0
        if accepted is None:
            return StepResult(False, d, it, rnorm, message="line search failed")
        d, pi_int, pi_ia, r, K = accepted
    return StepResult(
        False, d, max_iter, rnorm, message="max iterations exceeded", energy_drop=e_start - pi_int - pi_ia
    )


def reaction_forces(model: Model, dofs: np.ndarray, dset: DirichletSet, residual: Optional[np.ndarray] = None):
    """Sum of position reactions (3-vector) and per-node reactions ``(n_nodes, 6)`` of a set.

    The reaction is the out-of-balance force ``dPi/dd`` at the prescribed DOFs,
    i.e. the force the support exerts to hold the prescribed values.
    """
    if residual is None:
        residual = model.assemble(dofs, order=1, update_cache=False)[2]
    per_node = residual.reshape(-1, 6)[dset.nodes]
    mask = np.zeros(6, dtype=bool)
    mask[list(dset.components)] = True
    per_node = np.where(mask[None, :], per_node, 0.0)
    return per_node[:, :3].sum(axis=0), per_node


def _record(model: Model, res: StepResult, t: float, times: np.ndarray, snap: bool = False) -> SolutionRecord:
    r = model.assemble(res.dofs, order=1, update_cache=False)[2]
    reactions = {s.name: reaction_forces(model, res.dofs, s, r)[0] for s in model.dirichlet}
    prescribed = {}
    for s in model.dirichlet:
        if s.motion is not None:
            u, ang = s.motion.at(times, t)
            prescribed[s.name] = (u, ang)
    return SolutionRecord(
        time=t,
        dofs=res.dofs.copy(),
        reactions=reactions,
        pi_int=res.pi_int,
        pi_ia=res.pi_ia,
        iterations=res.iterations,
        prescribed=prescribed,
        snap=snap,
    )


def run_program(
    model: Model,
    program: LoadProgram,
    config: SolverConfig = SolverConfig(),
    dofs0: Optional[np.ndarray] = None,
    callback: Optional[Callable[[SolutionRecord], None]] = None,
) -> list[SolutionRecord]:
    """March the load program with step halving on failure and doubling after successes.

    The first record is the equilibrated state at the first control time.
    Raises :class:`SolverAbort` (carrying all converged records) when the step
    size drops below ``program.dt_min``.
    """
    times = program.times
    d = model.mesh.ref_dofs.copy() if dofs0 is None else np.asarray(dofs0, dtype=float).copy()
    t = float(times[0])
    records: list[SolutionRecord] = []
    res = solve_step(model, d, times, t, config)
    if not res.converged:
        raise SolverAbort(f"initial equilibration failed: {res.message}", records)
    rec = _record(model, res, t, times)
    records.append(rec)
    if callback:
        callback(rec)
    d = res.dofs
    d_prev, t_prev = None, None
    dt = program.dt
    successes = 0
    failures = 0
    t_end = float(times[-1])
    eps = 1e-12 * max(1.0, abs(t_end))
    while t < t_end - eps:
        nxt = times[times > t + eps]
        t_new = min(t + dt, float(nxt[0]))
        if t_end - t_new < eps:
            t_new = t_end
        start = d
        if config.predictor == "secant" and d_prev is not None and t - t_prev > 0:
            start = d + (t_new - t) / (t - t_prev) * (d - d_prev)
        tic = _time.perf_counter()
        res = solve_step(model, start, times, t_new, config)
        if not res.converged and start is not d:
            res = solve_step(model, d, times, t_new, config)
        snap = False
        if not res.converged and config.relax_iter > 0 and failures + 1 >= config.relax_after:
            log.info("relaxing at t=%.6g after %d failed attempts (%s)", t_new, failures + 1, res.message)
            res = solve_step(model, d, times, t_new, config, max_iter=config.relax_iter)
            snap = res.converged
            if not res.converged:
                raise SolverAbort(f"relaxation failed at t={t_new:.6g}: {res.message}", records)
        if res.converged:
            d_prev, t_prev = (None, None) if snap else (d, t)
            d, t = res.dofs, t_new
            rec = _record(model, res, t, times, snap=snap)
            records.append(rec)
            if callback:
                callback(rec)
            log.debug("t=%.6g iters=%d (%.2fs)", t, res.iterations, _time.perf_counter() - tic)
            if snap:
                dt, successes, failures = program.dt, 0, 0
                continue
            successes += 1
            if successes >= config.grow_after:
                dt = min(2.0 * dt, program.dt_max)
                successes, failures = 0, 0
        else:
            dt *= 0.5
            successes = 0
            failures += 1
            log.debug("step to t=%.6g failed (%s); dt -> %.3g", t_new, res.message, dt)
            if dt < program.dt_min:
                raise SolverAbort(
                    f"step size below minimum at t={t:.6g}: {res.message}", records
                )
    return records
