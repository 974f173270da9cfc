"""Scenario definitions, mesh generation and run orchestration.

A scenario is a plain JSON object (see :func:`default_scenario`) describing
one of three studies:

``potential_sweep``
    tables of the SBIP potential against the point/half-space reference
    over gap and crossing angle;
``peeling``
    two initially straight, adhering fibers pulled apart at their ends;
``helix_surfaces``
    two opposing plates, each grafted with lying helical fibers, pressed
    together and then pulled apart, optionally with a twist in between.

All quantities are in one consistent unit system; no unit conversion is done.
"""

from __future__ import annotations

import copy
import csv
import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from . import __version__
from .assembly import BroadPhaseConfig, InteractionEvaluator, QuadratureSpec
from .beam import BeamMesh, ElasticElements, ElasticLaw, eval_centerline
from .potentials import DomainError, PointPairLaw, SBIPParams, sbip_total
from .solver import (
    DirichletSet,
    LoadProgram,
    Model,
    RigidMotion,
    SolutionRecord,
    SolverAbort,
    SolverConfig,
    run_program,
)
from .verify import (
    lj_prefactors_from_parallel_equilibrium,
    nondimensional_groups,
    potential_sweep,
    sbip_parallel_equilibrium,
)

log = logging.getLogger(__name__)

KINDS = ("potential_sweep", "peeling", "helix_surfaces")


class ConfigError(ValueError):
    """Invalid or inconsistent scenario configuration."""


# ---------------------------------------------------------------------------
# configuration objects


@dataclass
class MaterialSpec:
    """Fiber radius and Young's modulus; ``EA``/``EI`` override the circular-section values."""

    radius: float = 0.02
    E: float = 1.0e5
    EA: Optional[float] = None
    EI: Optional[float] = None
    density: float = 1.0

    def law(self) -> ElasticLaw:
        base = ElasticLaw.circular(self.E, self.radius)
        return ElasticLaw(self.EA if self.EA is not None else base.EA, self.EI if self.EI is not None else base.EI)


@dataclass
class InteractionSpec:
    """LJ interaction, given either by ``(g_eq, f_min)`` or by ``(k6, k12)``.

    ``g_reg=None`` switches the regularization off.  ``enabled=False`` runs
    the structure without any interaction.
    """

    enabled: bool = True
    g_eq: Optional[float] = 1.0e-3
    f_min: Optional[float] = -1.0
    k6: Optional[float] = None
    k12: Optional[float] = None
    g_reg: Optional[float] = 8.0e-4
    r_cutoff: Optional[float] = 0.1
    filter_multiplier: float = 2.0


@dataclass
class DiscretizationSpec:
    elements_per_fiber: int = 64
    n_segments: int = 2
    n_gp_per_segment: int = 10
    n_gauss_elastic: int = 4


@dataclass
class PeelingSpec:
    """Two straight fibers along ``y`` with axis gap ``2R + g_eq``.

    The right fiber's ends are pulled in ``+x`` by ``u_end_over_length * length``.
    ``planar`` suppresses out-of-plane motion (see the README).
    ``rigid_fibers`` lists fibers held in their reference shape.
    """

    length: float = 5.0
    u_end_over_length: float = 0.9
    planar: bool = True
    rigid_fibers: list = field(default_factory=list)


@dataclass
class HelixSpec:
    """Lying helices grafted at both ends onto two parallel plates.

    Each plate carries ``helices_per_plate`` helices of diameter ``diameter``,
    pitch ``pitch`` and ``loops`` turns with axes along ``x``.  The top
    helices are mirror images of the bottom ones, so the loop apexes face
    each other with parallel tangents.  ``initial_separation`` is the
    surface gap between facing apexes at the start (default: the cutoff).
    ``mode`` is ``"pull"`` or ``"twist_pull"``.
    """

    diameter: float = 1.0
    pitch: float = 1.0
    loops: int = 2
    helices_per_plate: int = 2
    axis_spacing: float = 2.0
    initial_separation: Optional[float] = None
    mode: str = "pull"
    twist_deg: float = 75.0
    pull_factor: float = 2.0


@dataclass
class SweepSpec:
    gap_min: float = 1.0e-4
    gap_max: float = 1.0
    n_gaps: int = 9
    angles_deg: list = field(default_factory=lambda: [float(a) for a in range(0, 91, 10)])
    slave_length_over_R: float = 20.0
    reference_order: int = 6


@dataclass
class ProgramSpec:
    dt: float = 2.0e-5
    dt_min: float = 1.0e-9
    dt_max: float = 2.0e-3


@dataclass
class SolverSpec:
    tol: float = 1.0e-8
    max_iter: int = 50
    grow_after: int = 3
    relax_after: int = 4
    relax_iter: int = 2000
    threads: int = 1


@dataclass
class OutputSpec:
    geometry_every: int = 1
    write_geometry: bool = True


@dataclass
class Scenario:
    kind: str = "peeling"
    name: str = "peeling"
    seed: int = 0
    swap_master_slave: bool = False
    material: MaterialSpec = field(default_factory=MaterialSpec)
    interaction: InteractionSpec = field(default_factory=InteractionSpec)
    discretization: DiscretizationSpec = field(default_factory=DiscretizationSpec)
    peeling: PeelingSpec = field(default_factory=PeelingSpec)
    helix: HelixSpec = field(default_factory=HelixSpec)
    sweep: SweepSpec = field(default_factory=SweepSpec)
    program: ProgramSpec = field(default_factory=ProgramSpec)
    solver: SolverSpec = field(default_factory=SolverSpec)
    output: OutputSpec = field(default_factory=OutputSpec)


def default_scenario(kind: str = "peeling") -> Scenario:
    """Default scenario of the given kind."""
    if kind not in KINDS:
        raise ConfigError(f"unknown scenario kind {kind!r}; expected one of {KINDS}")
    if kind == "peeling":
        return Scenario(kind=kind, name=kind)
    if kind == "potential_sweep":
        return Scenario(
            kind=kind,
            name=kind,
            material=MaterialSpec(radius=1.0),
            interaction=InteractionSpec(g_eq=None, f_min=None, k6=-1.0, k12=None, g_reg=None, r_cutoff=None),
        )
    R = 0.05
    return Scenario(
        kind=kind,
        name="helix_pull",
        material=MaterialSpec(radius=R, E=1.0e4),
        interaction=InteractionSpec(g_eq=0.05 * R, f_min=-0.5, g_reg=0.04 * R, r_cutoff=5 * R),
        discretization=DiscretizationSpec(elements_per_fiber=48),
        program=ProgramSpec(dt=1.0e-3, dt_min=1.0e-10, dt_max=2.0e-2),
    )


# ---------------------------------------------------------------------------
# JSON round trip and overrides


def scenario_to_dict(scn: Scenario) -> dict:
    return dataclasses.asdict(scn)


def _build(cls, data: Any, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'scenario'} must be an object")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(names)
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in {path or 'scenario'}")
    kwargs = {}
    for key, value in data.items():
        sub = _SECTIONS.get(key) if cls is Scenario else None
        kwargs[key] = _build(sub, value, key) if sub is not None else copy.deepcopy(value)
    return cls(**kwargs)


_SECTIONS = {
    "material": MaterialSpec,
    "interaction": InteractionSpec,
    "discretization": DiscretizationSpec,
    "peeling": PeelingSpec,
    "helix": HelixSpec,
    "sweep": SweepSpec,
    "program": ProgramSpec,
    "solver": SolverSpec,
    "output": OutputSpec,
}


def scenario_from_dict(data: dict) -> Scenario:
    """Build a scenario; missing sections and keys take the defaults of its kind."""
    if not isinstance(data, dict):
        raise ConfigError("scenario must be a JSON object")
    base = scenario_to_dict(default_scenario(data.get("kind", "peeling")))
    merged = _merge(base, data)
    scn = _build(Scenario, merged, "")
    validate(scn)
    return scn


def _merge(base: dict, new: dict, path: str = "") -> dict:
    out = dict(base)
    for key, value in new.items():
        if key not in out:
            raise ConfigError(f"unknown key {path + key!r}")
        if isinstance(out[key], dict) and isinstance(value, dict):
            out[key] = _merge(out[key], value, path + key + ".")
        else:
            out[key] = value
    return out


def load_scenario(path) -> Scenario:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read scenario file {path}: {exc}") from exc
    return scenario_from_dict(data)


def dump_scenario(scn: Scenario, path=None) -> str:
    text = json.dumps(scenario_to_dict(scn), indent=2, sort_keys=True)
    if path is not None:
        Path(path).write_text(text + "\n")
    return text


def apply_overrides(scn: Scenario, overrides: Sequence[str]) -> Scenario:
    """Apply ``section.key=value`` overrides; values are parsed as JSON when possible."""
    data = scenario_to_dict(scn)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        parts = key.strip().split(".")
        node = data
        for p in parts[:-1]:
            if not isinstance(node.get(p), dict):
                raise ConfigError(f"unknown override section {key!r}")
            node = node[p]
        if parts[-1] not in node:
            raise ConfigError(f"unknown override key {key!r}")
        node[parts[-1]] = value
    return scenario_from_dict(data)


def validate(scn: Scenario) -> None:
    """Raise :class:`ConfigError` for inconsistent or degenerate settings."""
    try:
        _validate(scn)
    except TypeError as exc:
        raise ConfigError(f"value of the wrong type: {exc}") from exc


def _validate(scn: Scenario) -> None:
    if scn.kind not in KINDS:
        raise ConfigError(f"unknown scenario kind {scn.kind!r}")
    m, ia, dz = scn.material, scn.interaction, scn.discretization
    if not (m.radius > 0 and m.E > 0 and m.density > 0):
        raise ConfigError("radius, E and density must be positive")
    for name in ("EA", "EI"):
        v = getattr(m, name)
        if v is not None and not v > 0:
            raise ConfigError(f"{name} must be positive")
    if int(dz.elements_per_fiber) != dz.elements_per_fiber or dz.elements_per_fiber < 2:
        raise ConfigError("elements_per_fiber must be an integer >= 2")
    if dz.n_segments < 1 or dz.n_gp_per_segment < 1 or dz.n_gauss_elastic < 1:
        raise ConfigError("quadrature counts must be at least 1")
    if scn.kind != "potential_sweep" and ia.enabled:
        by_eq = ia.g_eq is not None and ia.f_min is not None
        by_k = ia.k6 is not None and ia.k12 is not None
        if by_eq == by_k:
            raise ConfigError("give exactly one of (g_eq, f_min) or (k6, k12)")
        if by_eq and not (ia.g_eq > 0 and ia.f_min < 0):
            raise ConfigError("need g_eq > 0 and f_min < 0")
        if by_k and not (ia.k6 < 0 < ia.k12):
            raise ConfigError("need k6 < 0 < k12")
        if ia.r_cutoff is not None and not ia.r_cutoff > 0:
            raise ConfigError("r_cutoff must be positive")
    if scn.kind == "potential_sweep":
        s = scn.sweep
        if not (0 < s.gap_min <= s.gap_max) or s.n_gaps < 1:
            raise ConfigError("need 0 < gap_min <= gap_max and n_gaps >= 1")
        if ia.k6 is None or not ia.k6 < 0:
            raise ConfigError("the sweep needs an attractive k6 < 0")
        if any(not 0 <= a <= 90 for a in s.angles_deg):
            raise ConfigError("angles must lie in [0, 90] degrees")
    if scn.kind == "peeling":
        p = scn.peeling
        if not (p.length > 0 and p.u_end_over_length > 0):
            raise ConfigError("fiber length and end displacement must be positive")
        if any(f not in (0, 1) for f in p.rigid_fibers) or len(set(p.rigid_fibers)) > 1:
            raise ConfigError("at most one of the two fibers (0 or 1) can be rigid")
    if scn.kind == "helix_surfaces":
        h = scn.helix
        if not (h.diameter > 0 and h.pitch > 0 and h.axis_spacing > 0):
            raise ConfigError("helix diameter, pitch and axis spacing must be positive")
        if int(h.loops) != h.loops or h.loops < 1 or int(h.helices_per_plate) != h.helices_per_plate:
            raise ConfigError("loops and helices_per_plate must be positive integers")
        if h.helices_per_plate < 1:
            raise ConfigError("need at least one helix per plate")
        if h.helices_per_plate > 1 and h.axis_spacing <= h.diameter + 2 * m.radius:
            raise ConfigError("neighbouring helices overlap")
        if h.mode not in ("pull", "twist_pull"):
            raise ConfigError("helix mode must be 'pull' or 'twist_pull'")
        if h.pull_factor <= 1:
            raise ConfigError("pull_factor must exceed 1 so the plates separate")
    pr = scn.program
    if not (0 < pr.dt_min <= pr.dt <= pr.dt_max):
        raise ConfigError("need 0 < dt_min <= dt <= dt_max")
    if scn.output.geometry_every < 1:
        raise ConfigError("geometry_every must be at least 1")


# ---------------------------------------------------------------------------
# interaction parameters


def lj_prefactors(scn: Scenario) -> tuple[float, float]:
    """``(k6, k12)`` of the scenario, inverting ``(g_eq, f_min)`` when needed."""
    ia, R, rho = scn.interaction, scn.material.radius, scn.material.density
    if ia.k6 is not None and ia.k12 is not None:
        return float(ia.k6), float(ia.k12)
    return lj_prefactors_from_parallel_equilibrium(ia.g_eq, ia.f_min, rho, rho, R, R)


def interaction_params(scn: Scenario) -> Optional[SBIPParams]:
    ia = scn.interaction
    if not ia.enabled:
        return None
    k6, k12 = lj_prefactors(scn)
    R, rho = scn.material.radius, scn.material.density
    try:
        return SBIPParams(
            R,
            R,
            rho,
            rho,
            [PointPairLaw(6, k6), PointPairLaw(12, k12)],
            g_reg=ia.g_reg,
            r_cutoff=np.inf if ia.r_cutoff is None else ia.r_cutoff,
        )
    except DomainError as exc:
        raise ConfigError(str(exc)) from exc


def equilibrium_gap(scn: Scenario) -> float:
    ia = scn.interaction
    if ia.g_eq is not None and ia.k6 is None:
        return float(ia.g_eq)
    R, rho = scn.material.radius, scn.material.density
    return sbip_parallel_equilibrium(*lj_prefactors(scn), rho, rho, R, R)[0]


# ---------------------------------------------------------------------------
# geometry


def straight_fiber(start, end, n_elements: int) -> tuple[np.ndarray, np.ndarray]:
    """Uniform nodes and exact tangents of a straight fiber."""
    start, end = np.asarray(start, float), np.asarray(end, float)
    s = np.linspace(0.0, 1.0, n_elements + 1)[:, None]
    P = start + s * (end - start)
    t = (end - start) / np.linalg.norm(end - start)
    return P, np.tile(t, (n_elements + 1, 1))


def helix_polyline(diameter: float, pitch: float, loops: float, n_elements: int):
    """Nodes and unit tangents of a helix about the ``z`` axis starting at ``(R_h, 0, 0)``.

    Nodes are equally spaced in the helix angle, which for a helix is equal
    spacing in arc length.
    """
    Rh = 0.5 * diameter
    phi = np.linspace(0.0, 2 * np.pi * loops, n_elements + 1)
    c = pitch / (2 * np.pi)
    P = np.stack([Rh * np.cos(phi), Rh * np.sin(phi), c * phi], axis=1)
    T = np.stack([-Rh * np.sin(phi), Rh * np.cos(phi), np.full_like(phi, c)], axis=1)
    return P, T / np.linalg.norm(T, axis=1)[:, None]


@dataclass
class MeshLayout:
    """Mesh plus the node groups the boundary conditions refer to."""

    mesh: BeamMesh
    groups: dict
    plate_height: float = 0.0


def _helix_surfaces_layout(scn: Scenario) -> MeshLayout:
    h, R = scn.helix, scn.material.radius
    ne = int(scn.discretization.elements_per_fiber)
    Rh = 0.5 * h.diameter
    s0 = _initial_separation(scn)
    H = 4 * Rh + 2 * R + s0
    Ps, Ts = helix_polyline(h.diameter, h.pitch, h.loops, ne)
    # lay the helix down: its axis becomes x and the start point touches z = 0
    rot = np.array([[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 0.0]])
    P0 = Ps @ rot.T + np.array([-0.5 * h.loops * h.pitch, 0.0, Rh])
    T0 = Ts @ rot.T
    offsets = (np.arange(h.helices_per_plate) - 0.5 * (h.helices_per_plate - 1)) * h.axis_spacing
    points, tangents = [], []
    for z_mirror in (False, True):
        for y in offsets:
            P = P0 + np.array([0.0, y, 0.0])
            T = T0.copy()
            if z_mirror:
                P[:, 2] = H - P[:, 2]
                T[:, 2] = -T[:, 2]
            points.append(P)
            tangents.append(T)
    mesh = BeamMesh.from_polylines(points, tangents, [R] * len(points))
    nh = h.helices_per_plate
    ends = lambda fibers: np.array([n for f in fibers for n in (mesh.fiber_nodes[f][0], mesh.fiber_nodes[f][-1])])  # noqa: E731
    return MeshLayout(mesh, {"bottom": ends(range(nh)), "top": ends(range(nh, 2 * nh))}, H)


def _initial_separation(scn: Scenario) -> float:
    h, ia = scn.helix, scn.interaction
    if h.initial_separation is not None:
        return float(h.initial_separation)
    if ia.r_cutoff is not None:
        return float(ia.r_cutoff)
    return 5.0 * scn.material.radius


def _peeling_layout(scn: Scenario) -> MeshLayout:
    p, R = scn.peeling, scn.material.radius
    ne = int(scn.discretization.elements_per_fiber)
    g0 = equilibrium_gap(scn) if scn.interaction.enabled else 0.05 * R
    x = R + 0.5 * g0
    half = 0.5 * p.length
    fibers = [straight_fiber([-x, -half, 0], [-x, half, 0], ne), straight_fiber([x, -half, 0], [x, half, 0], ne)]
    mesh = BeamMesh.from_polylines([f[0] for f in fibers], [f[1] for f in fibers], [R, R])
    return MeshLayout(mesh, {})


def generate_mesh(scn: Scenario) -> MeshLayout:
    """Reference mesh and node groups of a peeling or helix scenario."""
    validate(scn)
    if scn.kind == "peeling":
        return _peeling_layout(scn)
    if scn.kind == "helix_surfaces":
        return _helix_surfaces_layout(scn)
    raise ConfigError("potential_sweep scenarios have no mesh")


# ---------------------------------------------------------------------------
# boundary conditions and model


@dataclass
class BuiltModel:
    model: Model
    program: LoadProgram
    config: SolverConfig
    layout: MeshLayout
    params: Optional[SBIPParams]
    force_sets: list
    force_ref: float
    displacement_ref: float


def _peeling_dirichlet(scn: Scenario, mesh: BeamMesh, times: np.ndarray) -> list[DirichletSet]:
    p = scn.peeling
    u_end = p.u_end_over_length * p.length
    motion = RigidMotion(np.array([[0.0, 0.0, 0.0], [u_end, 0.0, 0.0]]))
    ne = int(scn.discretization.elements_per_fiber)
    mid = ne // 2
    rigid = set(p.rigid_fibers)
    sets = []
    for f, (side, mv) in enumerate((("l", None), ("r", motion))):
        nodes = mesh.fiber_nodes[f]
        if f in rigid:
            sets.append(DirichletSet(f"rigid_{f}", np.asarray(nodes), list(range(6)), mv))
            continue
        sets.append(DirichletSet(f"b{side}", [nodes[0]], [0, 2], mv))
        sets.append(DirichletSet(f"t{side}", [nodes[-1]], [0, 2], mv))
        sets.append(DirichletSet(f"mid_{f}", [nodes[mid]], [1] + ([2, 5] if p.planar else [])))
        if p.planar:
            sets.append(DirichletSet(f"planar_end_{f}", [nodes[0], nodes[-1]], [5]))
            inner = np.r_[nodes[1:mid], nodes[mid + 1 : -1]]
            sets.append(DirichletSet(f"planar_{f}", inner, [2, 5]))
    return sets


def _helix_motion(scn: Scenario, times_u: np.ndarray) -> tuple[np.ndarray, RigidMotion]:
    h = scn.helix
    u = _initial_separation(scn) - equilibrium_gap(scn)
    if h.mode == "pull":
        times = np.array([0.0, 1.0, 2.0, 2.0 + 1.0 + h.pull_factor])
        uz = np.array([0.0, -u, -u, h.pull_factor * u])
        ang = np.zeros(4)
    else:
        times = np.array([0.0, 1.0, 2.0, 4.0, 4.0 + 1.0 + h.pull_factor])
        uz = np.array([0.0, -u, -u, -u, h.pull_factor * u])
        ang = np.radians([0.0, 0.0, 0.0, h.twist_deg, h.twist_deg])
    trans = np.zeros((len(times), 3))
    trans[:, 2] = uz
    return times, RigidMotion(trans, ang, axis=(0.0, 0.0, 1.0), center=(0.0, 0.0, 0.0))


def build_model(scn: Scenario, threads: Optional[int] = None) -> BuiltModel:
    """Mesh, elastic and interaction evaluators, Dirichlet sets and load program."""
    validate(scn)
    layout = generate_mesh(scn)
    mesh = layout.mesh
    law = scn.material.law()
    dz = scn.discretization
    elastic = ElasticElements(mesh, law, n_gauss=dz.n_gauss_elastic)
    params = interaction_params(scn)
    rigid = list(scn.peeling.rigid_fibers) if scn.kind == "peeling" else []
    interaction = None
    if params is not None:
        interaction = InteractionEvaluator(
            mesh,
            params,
            quad=QuadratureSpec(dz.n_segments, dz.n_gp_per_segment),
            broad=BroadPhaseConfig(filter_multiplier=scn.interaction.filter_multiplier),
            swap_master_slave=scn.swap_master_slave,
            threads=scn.solver.threads if threads is None else threads,
            rigid_fibers=rigid,
        )
    if scn.kind == "peeling":
        times = np.array([0.0, 1.0])
        sets = _peeling_dirichlet(scn, mesh, times)
        L = scn.peeling.length
        force_ref = 12.0 * law.EI / L**2
        force_sets = [s.name for s in sets if s.motion is not None]
        disp_ref = L
        supports = {}
    else:
        times, motion = _helix_motion(scn, None)
        sets = [
            DirichletSet("bottom", layout.groups["bottom"], list(range(6))),
            DirichletSet("top", layout.groups["top"], list(range(6)), motion),
        ]
        force_sets = ["top"]
        nh = scn.helix.helices_per_plate
        supports = {f: ("bottom" if f < nh else "top") for f in range(2 * nh)}
        L = float(np.sum(mesh.l_ele[mesh.elem_fiber == 0]))
        force_ref = 12.0 * law.EI / L**2
        disp_ref = 1.0
    pr, sv = scn.program, scn.solver
    program = LoadProgram(times, pr.dt, pr.dt_min, pr.dt_max)
    config = SolverConfig(
        tol=sv.tol,
        ref_force=force_ref,
        max_iter=sv.max_iter,
        grow_after=sv.grow_after,
        relax_after=sv.relax_after,
        relax_iter=sv.relax_iter,
    )
    model = Model(mesh, elastic, interaction, sets, supports)
    return BuiltModel(model, program, config, layout, params, force_sets, force_ref, disp_ref)


# ---------------------------------------------------------------------------
# running


@dataclass
class RunResult:
    status: int
    records: list
    out_dir: Optional[Path]
    message: str = ""
    built: Optional[BuiltModel] = None
    elapsed: float = 0.0

    @property
    def total_iterations(self) -> int:
        return int(sum(r.iterations for r in self.records))

    def force(self, component: int = 0) -> np.ndarray:
        """Sum of reaction components over the moving Dirichlet sets per record."""
        names = self.built.force_sets
        return np.array([sum(r.reactions[n][component] for n in names) for r in self.records])

    def prescribed(self, component: int = 0) -> np.ndarray:
        name = self.built.force_sets[0]
        return np.array([r.prescribed[name][0][component] for r in self.records])


EXIT_OK, EXIT_CONFIG, EXIT_ABORT = 0, 2, 3


def _results_header(built: BuiltModel) -> list[str]:
    cols = ["step", "time"]
    for s in built.model.dirichlet:
        if s.motion is not None:
            cols += [f"{s.name}_u_x", f"{s.name}_u_y", f"{s.name}_u_z", f"{s.name}_psi_deg"]
    for s in built.model.dirichlet:
        cols += [f"{s.name}_F_x", f"{s.name}_F_y", f"{s.name}_F_z"]
    return cols + ["pi_int", "pi_ia", "iterations", "snap"]


def _results_row(built: BuiltModel, step: int, rec: SolutionRecord) -> list:
    row: list = [step, repr(rec.time)]
    for s in built.model.dirichlet:
        if s.motion is not None:
            u, ang = rec.prescribed[s.name]
            row += [repr(float(v)) for v in u] + [repr(float(np.degrees(ang)))]
    for s in built.model.dirichlet:
        row += [repr(float(v)) for v in rec.reactions[s.name]]
    return row + [repr(rec.pi_int), repr(rec.pi_ia), rec.iterations, int(rec.snap)]


def write_geometry(path: Path, mesh: BeamMesh, dofs: np.ndarray) -> None:
    """One row per node: ``fiber_id, node_id, x, y, z``."""
    X = mesh.positions(dofs)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["fiber_id", "node_id", "x", "y", "z"])
        for f, nodes in enumerate(mesh.fiber_nodes):
            for n in nodes:
                w.writerow([f, int(n)] + [repr(float(v)) for v in X[n]])


def read_geometry(path) -> np.ndarray:
    """Rows of a geometry snapshot as an ``(n, 5)`` float array."""
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


def metadata(scn: Scenario, built: Optional[BuiltModel] = None) -> dict:
    meta: dict = {
        "code_version": __version__,
        "seed": scn.seed,
        "scenario": scenario_to_dict(scn),
        "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    if built is not None and built.params is not None:
        k6, k12 = lj_prefactors(scn)
        meta["k6"], meta["k12"] = k6, k12
        meta["g_eq"] = equilibrium_gap(scn)
        L = scn.peeling.length if scn.kind == "peeling" else built.displacement_ref
        meta["nondimensional_groups"] = dataclasses.asdict(
            nondimensional_groups(L, scn.material.radius, scn.material.E, scn.material.density, k6, k12)
        )
    if built is not None:
        meta["force_reference"] = built.force_ref
        meta["n_nodes"] = built.layout.mesh.n_nodes
        meta["n_elements"] = built.layout.mesh.n_elements
        meta["dirichlet_sets"] = {s.name: [int(n) for n in s.nodes] for s in built.model.dirichlet}
    return meta


def run_sweep(scn: Scenario, out_dir=None) -> list[dict]:
    """Potential sweep table; written to ``potential_sweep.csv`` when ``out_dir`` is given."""
    s, m = scn.sweep, scn.material
    gaps = np.geomspace(s.gap_min, s.gap_max, s.n_gaps)
    rows = potential_sweep(
        gaps, s.angles_deg, R=m.radius, k6=scn.interaction.k6, rho=m.density,
        slave_length_over_R=s.slave_length_over_R, order=s.reference_order,
    )
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_sweep_csv(out / "potential_sweep.csv", rows)
        (out / "metadata.json").write_text(json.dumps(metadata(scn), indent=2) + "\n")
    return rows


def write_sweep_csv(path, rows: list[dict]) -> None:
    keys = ["g_over_R", "alpha_deg", "value_sbip", "value_reference", "rel_dev"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(keys)
        for r in rows:
            w.writerow([repr(float(r[k])) for k in keys])


def run(scn: Scenario, out_dir=None, threads: Optional[int] = None, callback=None) -> RunResult:
    """Execute a scenario and write its artifacts to ``out_dir`` (if given).

    Returns a :class:`RunResult` whose ``status`` is 0 on success and 3 when
    the solver aborted; on abort ``error.json`` describes the failure and
    the converged part of the history is still written.
    """
    validate(scn)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    if scn.kind == "potential_sweep":
        run_sweep(scn, out)
        return RunResult(EXIT_OK, [], out)
    built = build_model(scn, threads)
    if out is not None:
        (out / "metadata.json").write_text(json.dumps(metadata(scn, built), indent=2) + "\n")
        fh = open(out / "results.csv", "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(_results_header(built))
    records: list = []
    mesh = built.layout.mesh

    def on_record(rec: SolutionRecord) -> None:
        step = len(records)
        records.append(rec)
        if out is not None:
            writer.writerow(_results_row(built, step, rec))
            fh.flush()
            if scn.output.write_geometry and step % scn.output.geometry_every == 0:
                write_geometry(out / f"geometry_{step:04d}.csv", mesh, rec.dofs)
        if callback is not None:
            callback(rec)

    tic = time.perf_counter()
    status, message = EXIT_OK, ""
    try:
        run_program(built.model, built.program, built.config, callback=on_record)
    except SolverAbort as exc:
        status, message = EXIT_ABORT, str(exc)
        log.warning("solver abort: %s", exc)
    finally:
        if out is not None:
            fh.close()
    elapsed = time.perf_counter() - tic
    if out is not None and status != EXIT_OK:
        last = records[-1].time if records else None
        report = {"status": "solver_abort", "message": message, "last_converged_time": last, "steps": len(records)}
        (out / "error.json").write_text(json.dumps(report, indent=2) + "\n")
    return RunResult(status, records, out, message, built, elapsed)


# ---------------------------------------------------------------------------
# master/slave assignment experiment


@dataclass
class SwapReport:
    max_rel_difference: float
    force: np.ndarray
    force_swapped: np.ndarray
    displacement: np.ndarray
    runs: tuple


def master_slave_swap_experiment(scn: Scenario, component: int = 0) -> SwapReport:
    """Run a two-fiber scenario with both master/slave assignments.

    Reports ``max |F - F_swapped| / max |F|`` over the common load steps.
    """
    if scn.kind != "peeling":
        raise ConfigError("the swap experiment needs a two-fiber scenario")
    a = dataclasses.replace(scn, swap_master_slave=False)
    b = dataclasses.replace(scn, swap_master_slave=True)
    ra, rb = run(a), run(b)
    for r in (ra, rb):
        if r.status != EXIT_OK:
            raise SolverAbort(r.message, r.records)
    Fa, Fb = ra.force(component), rb.force(component)
    ta = np.array([r.time for r in ra.records])
    tb = np.array([r.time for r in rb.records])
    common, ia, ib = np.intersect1d(ta, tb, return_indices=True)
    scale = max(np.max(np.abs(Fa)), 1e-300)
    diff = float(np.max(np.abs(Fa[ia] - Fb[ib])) / scale) if len(common) else np.inf
    return SwapReport(diff, Fa[ia], Fb[ib], ra.prescribed(component)[ia], (ra, rb))


# ---------------------------------------------------------------------------
# peeling post-processing


def sample_fiber(mesh: BeamMesh, dofs: np.ndarray, fiber: int, per_element: int = 16) -> np.ndarray:
    """Points on the deformed centerline of one fiber, ``per_element`` per element plus the last node."""
    X = np.asarray(dofs).reshape(-1, 6)
    xi = np.linspace(-1.0, 1.0, per_element + 1)[:-1]
    pts = []
    for e in np.flatnonzero(mesh.elem_fiber == fiber):
        d = X[mesh.elements[e]].ravel()
        pts.append(eval_centerline(d, mesh.l_ele[e], xi)[0])
    pts.append(X[mesh.fiber_nodes[fiber][-1], :3][None])
    return np.vstack(pts)


def centerline_distances(points: np.ndarray, polyline: np.ndarray, k: int = 4) -> np.ndarray:
    """Distance from each point to a densely sampled polyline (point-to-segment)."""
    tree = cKDTree(polyline)
    _, idx = tree.query(points, k=min(k, len(polyline)))
    idx = np.atleast_2d(idx)
    best = np.full(len(points), np.inf)
    for j in range(idx.shape[1]):
        for step in (-1, 1):
            a = idx[:, j]
            b = np.clip(a + step, 0, len(polyline) - 1)
            A, B = polyline[a], polyline[b]
            AB = B - A
            den = np.maximum(np.einsum("ij,ij->i", AB, AB), 1e-300)
            t = np.clip(np.einsum("ij,ij->i", points - A, AB) / den, 0.0, 1.0)
            d = np.linalg.norm(points - (A + t[:, None] * AB), axis=1)
            best = np.minimum(best, d)
    return best


def line_force_profile(built: BuiltModel, dofs: np.ndarray, per_element: int = 16):
    """Surface gaps along fiber 1 and the parallel-law line force ``-dpi/dg`` there.

    The line force uses the per-length law of parallel fibers, which is the
    local state of nearly parallel fibers in the adhesion zone.
    """
    mesh = built.layout.mesh
    master = sample_fiber(mesh, dofs, 0, 4 * per_element)
    slave = sample_fiber(mesh, dofs, 1, per_element)
    R0, R1 = mesh.radius[mesh.fibers[0][0]], mesh.radius[mesh.fibers[1][0]]
    gaps = centerline_distances(slave, master) - (R0 + R1)
    force = np.zeros_like(gaps)
    if built.params is not None:
        near = gaps < (built.params.r_cutoff if np.isfinite(built.params.r_cutoff) else np.inf)
        force[near] = -sbip_total(built.params, gaps[near], np.ones(near.sum())).d_g
    return gaps, force


def peeling_summary(result: RunResult) -> dict:
    """Key quantities of a peeling run in units of the fiber length and ``12 EI / L**2``.

    ``peak_line_force_ratio`` is the largest attractive line force along the
    fibers at the force-peak step divided by ``|f_min|``; ``midspan_gap`` is
    the converged surface gap at midspan at that step; ``separation_u_over_l``
    is the first end displacement at which no interaction energy remains.
    """
    built = result.built
    recs = result.records
    if not recs:
        return {}
    L = built.displacement_ref
    F = result.force(0)
    u = result.prescribed(0) / L
    i = int(np.argmax(F))
    mesh = built.layout.mesh
    ne = int(np.sum(mesh.elem_fiber == 0))
    X = mesh.positions(recs[i].dofs)
    mid0, mid1 = mesh.fiber_nodes[0][ne // 2], mesh.fiber_nodes[1][ne // 2]
    midspan_gap = float(np.linalg.norm(X[mid1] - X[mid0]) - mesh.radius[mesh.fibers[0][0]] - mesh.radius[mesh.fibers[1][0]])
    gaps, force = line_force_profile(built, recs[i].dofs)
    sep = [k for k, r in enumerate(recs) if r.time > 0 and r.pi_ia == 0.0]
    out = {
        "peak_force_over_ref": float(F[i] / built.force_ref),
        "peak_u_over_l": float(u[i]),
        "midspan_gap": midspan_gap,
        "peak_line_force": float(-force.min()) if len(force) else 0.0,
        "separation_u_over_l": float(u[sep[0]]) if sep else None,
        "snap_steps": int(sum(r.snap for r in recs)),
        "steps": len(recs),
        "newton_iterations": result.total_iterations,
        "elapsed_s": round(result.elapsed, 2),
    }
    return out
