"""Three-parameter mountain-pass search over families B_R -> M_t.

A family assigns a surface of volume t to every sample of a shell-sampled
ball B_R; the boundary shell carries the round spheres omega_{p,t}, which
are never modified.  Deformation lowers the highest interior members by
projected descent while a neighbour-distance cap keeps the family
discretely continuous.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from hbubble.analytic import sphere_map
from hbubble.errors import ConfigError, HBubbleError
from hbubble.fields import ScalarField
from hbubble.functionals import SurfaceMap, barycenter, energy, retract_to_volume
from hbubble.mesh import SphereMesh, icosphere_outward
from hbubble.optimize import DescentOptions, descent_step

logger = logging.getLogger(__name__)


@dataclass
class BallGrid:
    R: float
    samples: np.ndarray
    boundary_flags: np.ndarray
    boundary_triangles: np.ndarray
    neighbors: list

    @property
    def boundary_indices(self) -> np.ndarray:
        return np.flatnonzero(self.boundary_flags)

    @property
    def interior_indices(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary_flags)

    def __len__(self):
        return len(self.samples)


def build_ball_grid(R: float, resolution: int, direction_level: int = 1) -> BallGrid:
    """Centre plus ``resolution`` concentric shells sharing the directions of
    an icosphere; the outermost shell (|p| = R) is the boundary.

    ``boundary_triangles`` index into ``samples`` and are oriented with
    outward normals.
    """
    if R <= 0:
        raise ConfigError("R must be positive")
    if resolution < 2:
        raise ConfigError(f"ball resolution must be >= 2, got {resolution}")
    dirs, faces = icosphere_outward(direction_level)
    nd = len(dirs)
    radii = R * np.arange(1, resolution + 1) / resolution
    samples = np.vstack([np.zeros((1, 3))] + [r * dirs for r in radii])
    samples[-nd:] = R * dirs / np.linalg.norm(dirs, axis=1)[:, None]
    flags = np.zeros(len(samples), dtype=bool)
    flags[-nd:] = True

    edges = np.unique(np.sort(np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]]), axis=1), axis=0)
    nbrs = [set() for _ in range(len(samples))]

    def link(a, b):
        nbrs[a].add(b)
        nbrs[b].add(a)

    for k in range(resolution):
        off = 1 + k * nd
        for a, b in edges:
            link(off + a, off + b)
        for i in range(nd):
            link(off + i, 0 if k == 0 else off - nd + i)
    boundary_triangles = faces + 1 + (resolution - 1) * nd
    return BallGrid(
        R=float(R),
        samples=samples,
        boundary_flags=flags,
        boundary_triangles=boundary_triangles,
        neighbors=[np.array(sorted(s), dtype=np.int64) for s in nbrs],
    )


def _hilbert_distance(mesh: SphereMesh, a: np.ndarray, b: np.ndarray) -> float:
    d = a - b
    m = mesh.mean_weights @ d
    return math.sqrt(max(float(np.einsum("ij,ij->", d, mesh.stiffness @ d)) + float(m @ m), 0.0))


@dataclass
class Family:
    grid: BallGrid
    mesh: SphereMesh
    t: float
    members: np.ndarray
    continuity_cap: float
    energies: np.ndarray | None = None
    steps: np.ndarray | None = None
    flags: dict = dc_field(default_factory=dict)

    def member(self, i: int) -> SurfaceMap:
        return SurfaceMap(self.mesh, self.members[i])

    def distance(self, i: int, j: int) -> float:
        return _hilbert_distance(self.mesh, self.members[i], self.members[j])

    def max_neighbor_distance(self) -> float:
        return max(
            (self.distance(i, j) for i, nb in enumerate(self.grid.neighbors) for j in nb if j > i),
            default=0.0,
        )

    def update_energies(self, field: ScalarField, quad_order: int = 32, indices=None) -> np.ndarray:
        if self.energies is None:
            self.energies = np.empty(len(self.members))
            indices = range(len(self.members))
        elif indices is None:
            indices = range(len(self.members))
        for i in indices:
            self.energies[i] = energy(self.member(i), field, quad_order)
        return self.energies

    def barycenters(self, indices=None) -> np.ndarray:
        idx = range(len(self.members)) if indices is None else indices
        return np.array([barycenter(self.member(i), self.t) for i in idx])


def init_family(grid: BallGrid, mesh: SphereMesh, t: float, cap_factor: float = 2.0) -> Family:
    """The sphere family p -> omega_{p,t}, each member retracted to volume t."""
    members = np.stack([retract_to_volume(sphere_map(mesh, p, t), t).values for p in grid.samples])
    fam = Family(grid=grid, mesh=mesh, t=t, members=members, continuity_cap=0.0)
    fam.continuity_cap = cap_factor * fam.max_neighbor_distance()
    return fam


def estimate_levels(family: Family, field: ScalarField, quad_order: int = 32):
    """(c0_est, c_running): max energy over the boundary and over all members."""
    if family.energies is None:
        family.update_energies(field, quad_order)
    e = family.energies
    return float(e[family.grid.boundary_flags].max()), float(e.max())


def _enforce_continuity(family: Family, moved, max_passes: int = 5) -> set:
    """Pull moved interior members toward neighbours farther than the cap."""
    cap = family.continuity_cap
    bflags = family.grid.boundary_flags
    changed = set()
    for _ in range(max_passes):
        violated = False
        for i in moved:
            if bflags[i]:
                continue
            for j in family.grid.neighbors[i]:
                d = family.distance(i, j)
                if d > cap * (1 + 1e-12):
                    violated = True
                    pulled = family.members[j] + (family.members[i] - family.members[j]) * (cap / d)
                    try:
                        family.members[i] = retract_to_volume(SurfaceMap(family.mesh, pulled), family.t).values
                    except HBubbleError:
                        family.flags.setdefault("continuity_failed", []).append(int(i))
                        continue
                    changed.add(i)
        if not violated:
            break
    return changed


def deform_family(
    family: Family,
    field: ScalarField,
    opts: DescentOptions | None = None,
    sweeps: int = 1,
    top_fraction: float = 0.1,
):
    """Lower sup E over the family by descent on its highest interior members.

    Each sweep takes one projected, retracted Armijo step on the top
    ``top_fraction`` of interior members by energy, then restores the
    neighbour-distance cap.  Returns ``(family, c_history)`` with the
    maximum energy after every sweep.
    """
    opts = opts or DescentOptions()
    if sweeps < 1:
        raise ConfigError("sweeps must be positive")
    if family.energies is None:
        family.update_energies(field, opts.quad_order)
    if family.steps is None:
        family.steps = np.full(len(family.members), opts.step0)
    interior = family.grid.interior_indices
    n_sel = max(1, int(math.ceil(top_fraction * len(interior))))
    history = []
    for sweep in range(sweeps):
        order = interior[np.argsort(-family.energies[interior], kind="stable")]
        selected = order[:n_sel]
        moved = []
        for i in selected:
            backup = family.members[i].copy()
            try:
                new, E_new, step, ok = descent_step(family.member(i), field, family.t, family.steps[i], opts)
            except HBubbleError as exc:
                family.members[i] = backup
                family.flags.setdefault("rolled_back", []).append((sweep, int(i), str(exc)))
                continue
            family.steps[i] = step
            if ok:
                family.members[i] = new.values
                family.energies[i] = E_new
                moved.append(int(i))
            else:
                family.flags.setdefault("stalled", []).append((sweep, int(i)))
        changed = _enforce_continuity(family, moved)
        family.update_energies(field, opts.quad_order, indices=sorted(changed))
        history.append(float(family.energies.max()))
    return family, history


# --------------------------------------------------------------------------
# degree theory


@dataclass
class DegreeResult:
    degree: int | None
    admissible: bool
    raw: float
    min_distance: float


def _solid_angles(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    num = np.einsum("ij,ij->i", a, np.cross(b, c))
    den = 1.0 + np.einsum("ij,ij->i", a, b) + np.einsum("ij,ij->i", b, c) + np.einsum("ij,ij->i", c, a)
    return 2.0 * np.arctan2(num, den)


def degree(values, triangles, p0, admissibility_tol: float = 1e-6, rounding_gap: float = 0.2) -> DegreeResult:
    """Brouwer degree of g relative to p0 from samples of g on the boundary.

    ``values[i]`` is g at boundary vertex i of the outward-oriented closed
    triangulation ``triangles``.  The degree is the total signed solid angle
    of the image triangles seen from p0 divided by 4 pi.  It is withheld
    (``degree=None``) when g comes within ``admissibility_tol`` of p0 or the
    sum is farther than ``rounding_gap`` from an integer.
    """
    g = np.asarray(values, dtype=float) - np.asarray(p0, dtype=float)
    dist = np.linalg.norm(g, axis=1)
    min_d = float(dist.min())
    if min_d <= admissibility_tol:
        return DegreeResult(None, False, math.nan, min_d)
    unit = g / dist[:, None]
    tri = np.asarray(triangles)
    raw = float(_solid_angles(unit[tri[:, 0]], unit[tri[:, 1]], unit[tri[:, 2]]).sum() / (4.0 * math.pi))
    k = int(round(raw))
    if abs(raw - k) > rounding_gap:
        return DegreeResult(None, False, raw, min_d)
    return DegreeResult(k, True, raw, min_d)


def _local_boundary(grid: BallGrid):
    idx = grid.boundary_indices
    local = np.full(len(grid), -1)
    local[idx] = np.arange(len(idx))
    return idx, local[grid.boundary_triangles]


def family_degree(family: Family, p0, **kwargs) -> DegreeResult:
    """Degree of p -> B_t(family(p)) on the boundary of B_R relative to p0."""
    idx, tris = _local_boundary(family.grid)
    return degree(family.barycenters(idx), tris, p0, **kwargs)


def homotopy_check(family: Family, p0, s_steps: int = 20, admissibility_tol: float = 1e-6) -> bool:
    """Whether h(s, p) = s p + (1 - s) B_t(family(p)) avoids p0 on the boundary.

    Checked on the boundary samples for s on a uniform grid of ``s_steps``
    intervals in [0, 1].
    """
    p0 = np.asarray(p0, dtype=float)
    if np.linalg.norm(p0) >= 1:
        raise ConfigError("|p0| must be below 1")
    idx = family.grid.boundary_indices
    p = family.grid.samples[idx]
    b = family.barycenters(idx)
    s = np.linspace(0.0, 1.0, s_steps + 1)[:, None, None]
    h = s * p[None] + (1.0 - s) * b[None]
    return bool(np.linalg.norm(h - p0, axis=-1).min() > admissibility_tol)


def family_summary(family: Family, field: ScalarField, p0=(0.1, 0.0, 0.0)) -> dict:
    c0, c = estimate_levels(family, field)
    deg = family_degree(family, p0)
    top = int(np.argmax(family.energies))
    return {
        "t": family.t,
        "R": family.grid.R,
        "n_members": len(family.members),
        "n_boundary": int(family.grid.boundary_flags.sum()),
        "c0_est": c0,
        "c_running": c,
        "argmax_member": top,
        "argmax_sample": [float(x) for x in family.grid.samples[top]],
        "continuity_cap": family.continuity_cap,
        "degree": deg.degree,
        "degree_admissible": deg.admissible,
        "homotopy_admissible": homotopy_check(family, p0),
        "flags": {k: len(v) for k, v in family.flags.items()},
    }
