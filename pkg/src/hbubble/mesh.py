"""Triangulated unit sphere used as the parameter domain.

Triangles are ordered so that (x1 - x0) x (x2 - x0) points *into* the
sphere.  With this orientation the identity embedding of the mesh is the
discrete counterpart of the inverse stereographic map
omega(z) = (mu x, mu y, 1 - mu): it has algebraic volume -4 pi / 3 and
u_x ^ u_y = -u.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from hbubble.errors import ConfigError, HBubbleError

MAX_LEVEL = 8


def _icosahedron():
    t = (1.0 + 5.0**0.5) / 2.0
    verts = np.array(
        [
            [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
            [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
            [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
        ],
        dtype=float,
    )
    faces = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ],
        dtype=np.int64,
    )
    return verts / np.linalg.norm(verts, axis=1)[:, None], faces


def _subdivide(verts: np.ndarray, faces: np.ndarray):
    edges = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    key = np.sort(edges, axis=1)
    uniq, inv = np.unique(key, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    mid = verts[uniq[:, 0]] + verts[uniq[:, 1]]
    mid /= np.linalg.norm(mid, axis=1)[:, None]
    nv = len(verts)
    m = len(faces)
    ab, bc, ca = (inv[:m] + nv, inv[m : 2 * m] + nv, inv[2 * m :] + nv)
    a, b, c = faces.T
    new_faces = np.concatenate(
        [
            np.column_stack([a, ab, ca]),
            np.column_stack([b, bc, ab]),
            np.column_stack([c, ca, bc]),
            np.column_stack([ab, bc, ca]),
        ]
    )
    return np.vstack([verts, mid]), new_faces


def icosphere_outward(level: int):
    """Vertices and outward-oriented faces of a subdivided icosahedron."""
    v, f = _icosahedron()
    for _ in range(level):
        v, f = _subdivide(v, f)
    n = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
    flip = np.einsum("ij,ij->i", n, v[f].mean(axis=1)) < 0
    f[flip] = f[flip][:, [0, 2, 1]]
    return v, f


def stereographic(points: np.ndarray):
    """Chart coordinates z with omega(z) = point; NaN at the North Pole."""
    x, y, z = points.T
    denom = 1.0 - z
    pole = denom < 1e-14
    safe = np.where(pole, 1.0, denom)
    coords = np.column_stack([x / safe, y / safe])
    coords[pole] = np.nan
    return coords, pole


def inverse_stereographic(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    mu = 2.0 / (1.0 + np.sum(z**2, axis=-1))
    return np.stack([mu * z[..., 0], mu * z[..., 1], 1.0 - mu], axis=-1)


class SphereMesh:
    """Immutable triangulated S^2 with P1 finite-element operators."""

    def __init__(self, vertices: np.ndarray, triangles: np.ndarray):
        self.vertices = np.ascontiguousarray(vertices, dtype=float)
        self.triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        self.vertices.setflags(write=False)
        self.triangles.setflags(write=False)
        self.stereo_coords, self.pole_mask = stereographic(self.vertices)
        self.mu = 1.0 - self.vertices[:, 2]

        x = self.vertices[self.triangles]
        e1 = x[:, 1] - x[:, 0]
        e2 = x[:, 2] - x[:, 0]
        cross = np.cross(e1, e2)
        double_area = np.linalg.norm(cross, axis=1)
        self.tri_areas = 0.5 * double_area
        normal = cross / double_area[:, None]
        f1 = e1 / np.linalg.norm(e1, axis=1)[:, None]
        f2 = np.cross(normal, f1)
        self.tri_frames = np.stack([f1, f2], axis=1)
        self.tri_normals = normal
        # grad of hat function k on triangle T: n x (opposite edge) / (2 A)
        opp = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
        self.grad_basis = np.cross(normal[:, None, :], opp) / double_area[:, None, None]
        # the same in frame coordinates: (M, 3 vertices, 2 directions)
        self.grad_basis_2d = np.einsum("tkd,tjd->tkj", self.grad_basis, self.tri_frames)

        masses = np.zeros(len(self.vertices))
        np.add.at(masses, self.triangles.ravel(), np.repeat(self.tri_areas / 3.0, 3))
        self.vertex_masses = masses
        self.total_mass = float(masses.sum())
        for arr in (self.tri_areas, self.tri_frames, self.grad_basis, self.grad_basis_2d, self.vertex_masses, self.mu):
            arr.setflags(write=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @cached_property
    def stiffness(self) -> sp.csr_matrix:
        """Cotangent stiffness: u^T L u = sum_T area_T |grad u|^2 = 2 D(u)."""
        local = np.einsum("tid,tjd,t->tij", self.grad_basis, self.grad_basis, self.tri_areas)
        rows = np.repeat(self.triangles, 3, axis=1).ravel()
        cols = np.tile(self.triangles, (1, 3)).ravel()
        n = self.n_vertices
        return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))

    @cached_property
    def mean_weights(self) -> np.ndarray:
        """w with mean(u) = w @ u; the discrete (1/4 pi) int u mu^2."""
        return self.vertex_masses / self.total_mass

    @cached_property
    def _pinned_solver(self):
        # L restricted to vertices 1..n-1 is SPD on a connected mesh
        sub = self.stiffness[1:, 1:].tocsc()
        return sp.linalg.factorized(sub)

    def solve_hilbert(self, rhs: np.ndarray) -> np.ndarray:
        """Solve (L + w w^T) x = rhs columnwise, i.e. the Riesz map of the
        discrete H^1 inner product <a, b> = a^T L b + mean(a) . mean(b)."""
        rhs = np.asarray(rhs, dtype=float)
        w = self.mean_weights
        out = np.empty_like(rhs)
        for j in range(rhs.shape[1]):
            a = rhs[:, j].sum()
            g = rhs[:, j] - a * w
            y = np.zeros(self.n_vertices)
            y[1:] = self._pinned_solver(g[1:])
            out[:, j] = y + (a - w @ y)
        return out

    @cached_property
    def edges(self) -> np.ndarray:
        e = np.concatenate([self.triangles[:, [0, 1]], self.triangles[:, [1, 2]], self.triangles[:, [2, 0]]])
        return np.unique(np.sort(e, axis=1), axis=0)

    @property
    def euler_characteristic(self) -> int:
        return self.n_vertices - len(self.edges) + self.n_triangles

    @cached_property
    def _centroid_tree(self) -> cKDTree:
        c = self.vertices[self.triangles].mean(axis=1)
        return cKDTree(c / np.linalg.norm(c, axis=1)[:, None])

    def locate(self, points: np.ndarray):
        """Triangle index and barycentric weights of the central projection of
        unit vectors onto the polyhedral surface."""
        points = np.asarray(points, dtype=float)
        n = len(points)
        tri_idx = np.full(n, -1, dtype=np.int64)
        bary = np.zeros((n, 3))
        k = min(12, self.n_triangles)
        _, cand = self._centroid_tree.query(points, k=k)
        todo = np.arange(n)
        for col in range(k):
            if todo.size == 0:
                break
            t = cand[todo, col]
            ok, b = self._barycentric(points[todo], t)
            tri_idx[todo[ok]] = t[ok]
            bary[todo[ok]] = b[ok]
            todo = todo[~ok]
        for i in todo:
            ok, b = self._barycentric(np.repeat(points[i : i + 1], self.n_triangles, 0), np.arange(self.n_triangles))
            hits = np.flatnonzero(ok)
            if hits.size == 0:
                raise HBubbleError(f"point location failed for {points[i]}")
            tri_idx[i] = hits[0]
            bary[i] = b[hits[0]]
        return tri_idx, bary

    def _barycentric(self, q: np.ndarray, t: np.ndarray, tol: float = 1e-12):
        x = self.vertices[self.triangles[t]]
        n = self.tri_normals[t]
        denom = np.einsum("ij,ij->i", n, q)
        lam = np.einsum("ij,ij->i", n, x[:, 0]) / np.where(denom == 0, np.nan, denom)
        hit = lam[:, None] * q
        e1, e2, d = x[:, 1] - x[:, 0], x[:, 2] - x[:, 0], hit - x[:, 0]
        d11 = np.einsum("ij,ij->i", e1, e1)
        d12 = np.einsum("ij,ij->i", e1, e2)
        d22 = np.einsum("ij,ij->i", e2, e2)
        b1 = np.einsum("ij,ij->i", d, e1)
        b2 = np.einsum("ij,ij->i", d, e2)
        det = d11 * d22 - d12 * d12
        l1 = (d22 * b1 - d12 * b2) / det
        l2 = (d11 * b2 - d12 * b1) / det
        b = np.column_stack([1.0 - l1 - l2, l1, l2])
        ok = (lam > 0) & np.all(b >= -tol, axis=1)
        return ok, b


def build_icosphere(level: int) -> SphereMesh:
    """Icosahedron subdivided ``level`` times; 10 * 4**level + 2 vertices."""
    if not isinstance(level, (int, np.integer)) or level < 0:
        raise ConfigError(f"mesh level must be a nonnegative integer, got {level!r}")
    if level > MAX_LEVEL:
        raise ConfigError(f"mesh level {level} exceeds the memory guard {MAX_LEVEL}")
    v, f = icosphere_outward(int(level))
    return SphereMesh(v, f[:, [0, 2, 1]])


@dataclass(frozen=True)
class MobiusTransform:
    """Rotation followed by the chart dilation z -> dilation * z."""

    rotation: np.ndarray = None
    dilation: float = 1.0

    def __post_init__(self):
        rot = np.eye(3) if self.rotation is None else np.asarray(self.rotation, dtype=float)
        if rot.shape != (3, 3) or not np.allclose(rot @ rot.T, np.eye(3), atol=1e-10) or np.linalg.det(rot) <= 0:
            raise ConfigError("rotation must be a proper orthogonal 3x3 matrix")
        if not self.dilation > 0:
            raise ConfigError("dilation must be positive")
        object.__setattr__(self, "rotation", rot)

    @property
    def is_identity(self) -> bool:
        return self.dilation == 1.0 and np.array_equal(self.rotation, np.eye(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        y = np.asarray(points, dtype=float) @ self.rotation.T
        if self.dilation == 1.0:
            return y
        z, pole = stereographic(y)
        out = inverse_stereographic(self.dilation * np.nan_to_num(z))
        out[pole] = y[pole]
        return out


def mobius_reparametrize(u, g: MobiusTransform):
    """u o g resampled on the same mesh by barycentric interpolation."""
    from hbubble.functionals import SurfaceMap

    mesh = u.mesh
    if g.is_identity:
        return SurfaceMap(mesh, u.values.copy())
    target = g.apply(mesh.vertices)
    tri, bary = mesh.locate(target)
    vals = np.einsum("ik,ikj->ij", bary, u.values[mesh.triangles[tri]])
    return SurfaceMap(mesh, vals)
