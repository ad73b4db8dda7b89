"""Discrete D, A, V, Q, E, F_K, their exact gradients and derived quantities.

A map u is stored per vertex and interpolated linearly on each triangle.
Per triangle with image vertices u0, u1, u2 we use

    area_T * (u_x ^ u_y) = 1/2 (u1 - u0) x (u2 - u0) =: n_T

so that A = sum |n_T|, V = 1/3 sum ubar_T . n_T and Q = sum Q_K(ubar_T) . n_T
with ubar_T the centroid of the image triangle.  D = 1/2 u^T L u.
Gradients are exact derivatives of these formulas, returned as per-vertex
covectors of shape (n_vertices, 3).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from hbubble.errors import ConfigError, DegenerateConstraintError, RetractionError, SolverError
from hbubble.fields import ScalarField, qk_eval, qk_jacobian
from hbubble.mesh import SphereMesh

ISOPERIMETRIC_S = (36.0 * np.pi) ** (1.0 / 3.0)
DEGENERATE_AREA = 1e-14


class SurfaceMap:
    """Per-vertex values of u: S^2 -> R^3 on a fixed mesh."""

    __slots__ = ("mesh", "values")

    def __init__(self, mesh: SphereMesh, values):
        values = np.asarray(values, dtype=float)
        if values.shape != (mesh.n_vertices, 3):
            raise ConfigError(f"values must have shape ({mesh.n_vertices}, 3), got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ConfigError("surface map has non-finite values")
        self.mesh = mesh
        self.values = values

    @classmethod
    def identity(cls, mesh: SphereMesh) -> "SurfaceMap":
        return cls(mesh, mesh.vertices.copy())

    @classmethod
    def constant(cls, mesh: SphereMesh, c) -> "SurfaceMap":
        return cls(mesh, np.broadcast_to(np.asarray(c, dtype=float), (mesh.n_vertices, 3)).copy())

    def with_values(self, values) -> "SurfaceMap":
        return SurfaceMap(self.mesh, values)

    def __add__(self, other):
        other = other.values if isinstance(other, SurfaceMap) else other
        return self.with_values(self.values + other)

    def __sub__(self, other):
        other = other.values if isinstance(other, SurfaceMap) else other
        return self.with_values(self.values - other)

    def __mul__(self, s: float):
        return self.with_values(self.values * s)

    __rmul__ = __mul__

    def __repr__(self):
        return f"SurfaceMap(n_vertices={self.mesh.n_vertices})"


@dataclass
class FunctionalReport:
    D: float
    A: float
    V: float
    Q: float
    E: float
    F: float
    mean: tuple

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _image_triangles(u: SurfaceMap):
    x = u.values[u.mesh.triangles]
    return x, 0.5 * np.cross(x[:, 1] - x[:, 0], x[:, 2] - x[:, 0]), x.mean(axis=1)


def _scatter(mesh: SphereMesh, per_corner: np.ndarray) -> np.ndarray:
    """Sum (M, 3 corners, 3) contributions onto vertices."""
    out = np.zeros((mesh.n_vertices, 3))
    for k in range(3):
        np.add.at(out, mesh.triangles[:, k], per_corner[:, k])
    return out


def dirichlet(u: SurfaceMap) -> float:
    return 0.5 * float(np.einsum("ij,ij->", u.values, u.mesh.stiffness @ u.values))


def area(u: SurfaceMap) -> float:
    _, n, _ = _image_triangles(u)
    a = np.linalg.norm(n, axis=1)
    return float(a[a >= DEGENERATE_AREA].sum())


def volume(u: SurfaceMap) -> float:
    _, n, c = _image_triangles(u)
    return float(np.einsum("ij,ij->", c, n) / 3.0)


def weighted_volume(u: SurfaceMap, field: ScalarField, quad_order: int = 32) -> float:
    _, n, c = _image_triangles(u)
    return float(np.einsum("ij,ij->", qk_eval(field, c, quad_order), n))


def mean(u: SurfaceMap) -> np.ndarray:
    return u.mesh.mean_weights @ u.values


def evaluate(u: SurfaceMap, field: ScalarField, quad_order: int = 32) -> FunctionalReport:
    _, n, c = _image_triangles(u)
    a = np.linalg.norm(n, axis=1)
    D = dirichlet(u)
    A = float(a[a >= DEGENERATE_AREA].sum())
    V = float(np.einsum("ij,ij->", c, n) / 3.0)
    Q = float(np.einsum("ij,ij->", qk_eval(field, c, quad_order), n))
    return FunctionalReport(D=D, A=A, V=V, Q=Q, E=D + Q, F=A + Q, mean=tuple(float(x) for x in mean(u)))


def energy(u: SurfaceMap, field: ScalarField, quad_order: int = 32) -> float:
    """E = D + Q without the bookkeeping of :func:`evaluate`."""
    return dirichlet(u) + weighted_volume(u, field, quad_order)


def _cross_pull(x: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Corner covectors of q . n_T with respect to the image vertices."""
    # d n_T = 1/2 [ (u2-u1) x . ] at corner 0, cyclic
    e0 = x[:, 2] - x[:, 1]
    e1 = x[:, 0] - x[:, 2]
    e2 = x[:, 1] - x[:, 0]
    # q . (1/2 e x d) = d . (1/2 q x e)
    return 0.5 * np.stack([np.cross(q, e0), np.cross(q, e1), np.cross(q, e2)], axis=1)


def gradient(u: SurfaceMap, field: ScalarField | None = None, which: str = "E", quad_order: int = 32) -> np.ndarray:
    """Covector of the exact derivative of a discrete functional.

    ``which`` is one of ``"D"``, ``"V"``, ``"Q"``, ``"E"``.  The pairing with a
    direction phi is ``np.sum(g * phi.values)``.
    """
    mesh = u.mesh
    if which == "D":
        return mesh.stiffness @ u.values
    x, n, c = _image_triangles(u)
    if which == "V":
        # V = sum det(u0, u1, u2) / 6
        corners = np.stack(
            [np.cross(x[:, 1], x[:, 2]), np.cross(x[:, 2], x[:, 0]), np.cross(x[:, 0], x[:, 1])], axis=1
        )
        return _scatter(mesh, corners / 6.0)
    if which in ("Q", "E"):
        if field is None:
            raise ConfigError("a field is needed for the Q and E gradients")
        q = qk_eval(field, c, quad_order)
        jac = qk_jacobian(field, c, quad_order)
        centroid_part = np.einsum("tij,ti->tj", jac, n) / 3.0
        corners = _cross_pull(x, q) + centroid_part[:, None, :]
        g = _scatter(mesh, corners)
        if which == "E":
            g = g + mesh.stiffness @ u.values
        return g
    raise ConfigError(f"unknown functional {which!r}")


def pair(covector: np.ndarray, direction) -> float:
    d = direction.values if isinstance(direction, SurfaceMap) else direction
    return float(np.sum(covector * d))


def _same_mesh(a: SurfaceMap, b: SurfaceMap):
    if a.mesh is not b.mesh:
        raise ConfigError("surface maps live on different meshes")


def hilbert_inner(a: SurfaceMap, b: SurfaceMap) -> float:
    """<a, b> = int grad a . grad b + mean(a) . mean(b)."""
    _same_mesh(a, b)
    L = a.mesh.stiffness
    return float(np.einsum("ij,ij->", a.values, L @ b.values) + mean(a) @ mean(b))


def hilbert_norm(u: SurfaceMap) -> float:
    return hilbert_inner(u, u) ** 0.5


def riesz(mesh: SphereMesh, covector: np.ndarray, check: bool = True) -> SurfaceMap:
    """Representative w of a covector: <w, phi> = covector[phi] for all phi."""
    w = mesh.solve_hilbert(covector)
    if check:
        res = mesh.stiffness @ w + np.outer(mesh.mean_weights, mesh.mean_weights @ w) - covector
        scale = max(1.0, float(np.abs(covector).max()))
        err = float(np.abs(res).max())
        if not np.isfinite(err) or err > 1e-8 * scale:
            raise SolverError(f"Riesz solve residual {err:.3e}", residual=err)
    return SurfaceMap(mesh, w)


def dual_norm(mesh: SphereMesh, covector: np.ndarray) -> float:
    w = riesz(mesh, covector)
    return max(float(np.sum(covector * w.values)), 0.0) ** 0.5


def retract_to_volume(u: SurfaceMap, t: float) -> SurfaceMap:
    """Rescale u by (t / V(u))^(1/3) so that V = t exactly."""
    if t == 0:
        raise ConfigError("target volume must be nonzero")
    v = volume(u)
    if not np.isfinite(v) or abs(v) < 1e-10 * abs(t) or np.sign(v) != np.sign(t):
        raise RetractionError(f"cannot retract volume {v:.3e} to {t:.3e}")
    if v == t:
        return u
    return u.with_values(np.cbrt(t / v) * u.values)


def wente_solve(u: SurfaceMap) -> SurfaceMap:
    """Discrete solution v of -Lap v = u_x ^ u_y with zero mean.

    Equals the Riesz representative of V'(u); V' annihilates constants, so
    the mean of the solution vanishes.
    """
    return riesz(u.mesh, gradient(u, which="V"))


def grad_l2(u: SurfaceMap) -> float:
    """||grad u||_2 = sqrt(2 D(u))."""
    return (2.0 * dirichlet(u)) ** 0.5


def wente_ratio(u: SurfaceMap) -> float:
    """(||grad v||_2 + ||v||_inf) / ||grad u||_2^2 for the Wente solution v."""
    v = wente_solve(u)
    den = 2.0 * dirichlet(u)
    if den == 0:
        return 0.0
    return (grad_l2(v) + float(np.abs(v.values).max())) / den


def lagrange_lambda(u: SurfaceMap, field: ScalarField, quad_order: int = 32) -> float:
    """lambda = E'(u)[v] / ||v||^2 with v the Wente solution."""
    gV = gradient(u, which="V")
    v = riesz(u.mesh, gV)
    vv = pair(gV, v)
    if vv < 1e-24:
        raise DegenerateConstraintError("volume gradient vanishes; multiplier undefined")
    return pair(gradient(u, field, "E", quad_order), v) / vv


def residual_covector(u: SurfaceMap, field: ScalarField, lam: float, quad_order: int = 32) -> np.ndarray:
    return gradient(u, field, "E", quad_order) - lam * gradient(u, which="V")


def ps_residual(u: SurfaceMap, field: ScalarField, lam: float, quad_order: int = 32) -> float:
    """Dual norm of E'(u) - lambda V'(u)."""
    return dual_norm(u.mesh, residual_covector(u, field, lam, quad_order))


def barycenter(u: SurfaceMap, t: float) -> np.ndarray:
    """B_t(u) = 1/(8 pi s_t^2) int Pi(u) |grad u|^2, Pi the projection onto the unit ball."""
    if t <= 0:
        raise ConfigError("t must be positive")
    s_t = (3.0 * t / (4.0 * np.pi)) ** (1.0 / 3.0)
    mesh = u.mesh
    c = u.values[mesh.triangles].mean(axis=1)
    r = np.linalg.norm(c, axis=1)
    proj = np.where(r[:, None] < 1.0, c, c / np.where(r > 0, r, 1.0)[:, None])
    grads = np.einsum("tkd,tkj->tdj", mesh.grad_basis, u.values[mesh.triangles])
    weight = mesh.tri_areas * np.einsum("tdj,tdj->t", grads, grads)
    return (weight @ proj) / (8.0 * np.pi * s_t**2)


def frame_derivatives(u: SurfaceMap):
    """Per-triangle (u_x, u_y) in the triangle's orthonormal frame."""
    mesh = u.mesh
    d = np.einsum("tkj,tkc->tjc", mesh.grad_basis_2d, u.values[mesh.triangles])
    return d[:, 0], d[:, 1]


def conformality_defect(u: SurfaceMap) -> float:
    """sum_T area_T (|u_x.u_y| + ||u_x|^2 - |u_y|^2|) / (2 D(u))."""
    D = dirichlet(u)
    if D <= 0:
        return 0.0
    ux, uy = frame_derivatives(u)
    mesh = u.mesh
    ok = mesh.tri_areas >= DEGENERATE_AREA
    local = np.abs(np.einsum("ij,ij->i", ux, uy)) + np.abs(np.einsum("ij,ij->i", ux, ux) - np.einsum("ij,ij->i", uy, uy))
    return float(np.sum(mesh.tri_areas[ok] * local[ok]) / (2.0 * D))
