"""Descent on the volume constraint set M_t and critical-point refinement.

Search directions are H^1 Riesz gradients projected onto the tangent space
of M_t (pairing with V' equal to zero); each trial point is mapped back to
M_t by the cubic-root rescaling of :func:`retract_to_volume`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field as dc_field, fields as dc_fields

import numpy as np

from hbubble.analytic import sphere_radius
from hbubble.errors import ConfigError, RetractionError
from hbubble.fields import ScalarField
from hbubble.functionals import (
    FunctionalReport,
    SurfaceMap,
    barycenter,
    conformality_defect,
    energy,
    evaluate,
    gradient,
    grad_l2,
    pair,
    riesz,
    retract_to_volume,
)

logger = logging.getLogger(__name__)

TRAJECTORY_COLUMNS = ("iter", "D", "A", "V", "Q", "E", "residual", "lambda", "bary_norm", "mean_norm")
STATUSES = ("converged", "escaped", "stagnated", "iter_limit")


@dataclass
class DescentOptions:
    max_iters: int = 5000
    step0: float = 0.1
    armijo_c: float = 1e-4
    shrink: float = 0.5
    residual_tol: float = 1e-3
    stagnation_window: int = 50
    max_shrinks: int = 60
    max_step: float = 4.0
    escape_factor: float = 20.0
    quad_order: int = 32

    def __post_init__(self):
        if self.max_iters < 1 or self.stagnation_window < 1 or self.max_shrinks < 1:
            raise ConfigError("max_iters, stagnation_window and max_shrinks must be positive")
        if not (self.step0 > 0 and self.max_step >= self.step0 and self.residual_tol > 0):
            raise ConfigError("step0, max_step and residual_tol must be positive with max_step >= step0")
        if not (0 < self.armijo_c < 1 and 0 < self.shrink < 1):
            raise ConfigError("armijo_c and shrink must lie in (0, 1)")

    @classmethod
    def from_dict(cls, d: dict) -> "DescentOptions":
        known = {f.name for f in dc_fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown descent options: {sorted(extra)}")
        return cls(**d)


@dataclass
class CandidateReport:
    u: SurfaceMap
    t: float
    lam: float
    residual: float
    report: FunctionalReport
    conformality: float
    barycenter: np.ndarray
    status: str
    iterations: int = 0
    trajectory: list = dc_field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "lambda": self.lam,
            "residual": self.residual,
            "report": self.report.to_dict(),
            "conformality": self.conformality,
            "barycenter": [float(x) for x in self.barycenter],
            "status": self.status,
            "iterations": self.iterations,
        }


@dataclass
class _State:
    u: SurfaceMap
    E: float
    lam: float
    direction: SurfaceMap
    residual: float


def _state(u: SurfaceMap, field: ScalarField, quad_order: int, E: float | None = None) -> _State:
    mesh = u.mesh
    gE = gradient(u, field, "E", quad_order)
    gV = gradient(u, which="V")
    wE = riesz(mesh, gE)
    v = riesz(mesh, gV)
    vv = pair(gV, v)
    lam = pair(gE, v) / vv if vv > 0 else 0.0
    d = wE - lam * v.values
    res = max(pair(gE, d) - lam * pair(gV, d), 0.0) ** 0.5
    if E is None:
        E = energy(u, field, quad_order)
    return _State(u=u, E=E, lam=lam, direction=d, residual=res)


def _row(it: int, u: SurfaceMap, field: ScalarField, t: float, st: _State, quad_order: int) -> dict:
    rep = evaluate(u, field, quad_order)
    return {
        "iter": it,
        "D": rep.D,
        "A": rep.A,
        "V": rep.V,
        "Q": rep.Q,
        "E": rep.E,
        "residual": st.residual,
        "lambda": st.lam,
        "bary_norm": float(np.linalg.norm(barycenter(u, t))),
        "mean_norm": float(np.linalg.norm(rep.mean)),
    }


def line_search(st: _State, field: ScalarField, t: float, step: float, opts: DescentOptions):
    """Armijo backtracking on E o retract along -direction.

    Returns ``(u_new, E_new, step)``; ``u_new`` is None after ``max_shrinks``
    failed trials.  Retraction failures count as rejected trials.
    """
    slope = st.residual**2
    for _ in range(opts.max_shrinks):
        try:
            trial = retract_to_volume(st.u - step * st.direction.values, t)
        except RetractionError:
            step *= opts.shrink
            continue
        E_new = energy(trial, field, opts.quad_order)
        if E_new <= st.E - opts.armijo_c * step * slope:
            return trial, E_new, step
        step *= opts.shrink
    return None, st.E, step


def descent_step(u: SurfaceMap, field: ScalarField, t: float, step: float, opts: DescentOptions):
    """One projected, retracted Armijo step from u (assumed on M_t).

    Returns ``(u_new, E_new, next_step, accepted)``.
    """
    st = _state(u, field, opts.quad_order)
    new, E_new, used = line_search(st, field, t, step, opts)
    if new is None:
        return u, st.E, used, False
    return new, E_new, min(used / opts.shrink, opts.max_step), True


def _drifting(traj: list, window: int, s_t: float, tol: float) -> bool:
    if len(traj) < window:
        return False
    m = [row["mean_norm"] for row in traj[-window:]]
    return all(b > a for a, b in zip(m, m[1:])) and m[-1] - m[0] > tol * s_t


def _finish(u, field, t, st, status, it, traj, quad_order) -> CandidateReport:
    return CandidateReport(
        u=u,
        t=t,
        lam=st.lam,
        residual=st.residual,
        report=evaluate(u, field, quad_order),
        conformality=conformality_defect(u),
        barycenter=barycenter(u, t),
        status=status,
        iterations=it,
        trajectory=traj,
    )


def constrained_descent(
    u0: SurfaceMap, field: ScalarField, t: float, opts: DescentOptions | None = None
) -> CandidateReport:
    """Minimise E = D + Q over M_t starting from the retraction of u0.

    Stops when the dual residual of E' - lambda V' has stayed below
    ``residual_tol * max(1, ||grad u||_2)`` for ``stagnation_window``
    consecutive iterates without the mean drifting (status ``converged``;
    a saddle such as a centred sphere in a radial field is left again), when the mean leaves the ball of radius
    ``escape_factor * s_t`` or the volume collapses (``escaped``), when the
    line search or the energy stalls (``stagnated``), or at ``max_iters``.
    """
    opts = opts or DescentOptions()
    s_t = sphere_radius(t)
    u = retract_to_volume(u0, t)
    step = opts.step0
    traj: list = []
    st = _state(u, field, opts.quad_order)
    status = "iter_limit"
    below = 0
    it = 0
    for it in range(opts.max_iters + 1):
        row = _row(it, u, field, t, st, opts.quad_order)
        traj.append(row)
        below = below + 1 if st.residual <= opts.residual_tol * max(1.0, grad_l2(u)) else 0
        w = opts.stagnation_window
        if below >= w and not _drifting(traj, w, s_t, opts.residual_tol):
            status = "converged"
            break
        if row["mean_norm"] > opts.escape_factor * s_t:
            status = "escaped"
            break
        if below == 0 and len(traj) > w and traj[-w - 1]["E"] - row["E"] <= 1e-13 * max(1.0, abs(row["E"])):
            status = "stagnated"
            break
        if it == opts.max_iters:
            break
        new, E_new, used = line_search(st, field, t, step, opts)
        if new is None:
            status = "stagnated"
            break
        u = new
        step = min(used / opts.shrink, opts.max_step)
        try:
            st = _state(u, field, opts.quad_order, E=E_new)
        except RetractionError:
            status = "escaped"
            break
    logger.info("descent finished: %s after %d iterations, E=%.6f", status, it, st.E)
    return _finish(u, field, t, st, status, it, traj, opts.quad_order)


def _hessian_apply(u: SurfaceMap, field: ScalarField, lam: float, w: np.ndarray, quad_order: int) -> np.ndarray:
    """(E'' - lam V'')(u)[w] as a covector.

    D'' is the stiffness matrix, V' is quadratic in u so the symmetric
    difference is exact for V''; Q'' uses central differences.
    """
    mesh = u.mesh
    scale = float(np.abs(w).max())
    if scale == 0:
        return np.zeros_like(w)
    h = 1e-5 * max(1.0, float(np.abs(u.values).max())) / scale
    up, um = u + h * w, u - h * w
    dQ = (gradient(up, field, "Q", quad_order) - gradient(um, field, "Q", quad_order)) / (2 * h)
    dV = (gradient(up, which="V") - gradient(um, which="V")) / (2 * h)
    return mesh.stiffness @ w + dQ - lam * dV


def refine_critical(
    u: SurfaceMap, field: ScalarField, t: float, opts: DescentOptions | None = None
) -> CandidateReport:
    """Drive the dual residual of E' - lambda(u) V' to zero on M_t.

    Gradient descent on R(u) = 1/2 ||E'(u) - lambda(u) V'(u)||^2.  Because
    lambda(u) minimises the residual over lambda, its variation drops out and
    R'(u) = (E'' - lambda V'')(u)[w] with w the Riesz representative of the
    residual (exact chain rule; Q'' applied by central differences).
    Returns the best iterate; the trajectory records every accepted one.
    """
    opts = opts or DescentOptions()
    mesh = u.mesh
    u = retract_to_volume(u, t)
    st = _state(u, field, opts.quad_order)
    best_u, best_st = u, st
    step = opts.step0
    traj: list = []
    status = "iter_limit"
    it = 0
    for it in range(opts.max_iters + 1):
        traj.append(_row(it, u, field, t, st, opts.quad_order))
        if st.residual <= opts.residual_tol * max(1.0, grad_l2(u)):
            status = "converged"
            break
        if it == opts.max_iters:
            break
        cov = _hessian_apply(u, field, st.lam, st.direction.values, opts.quad_order)
        G = riesz(mesh, cov)
        v = riesz(mesh, gradient(u, which="V"))
        G = G - (pair(gradient(u, which="V"), G) / pair(gradient(u, which="V"), v)) * v.values
        slope = pair(cov, G)
        R = 0.5 * st.residual**2
        accepted = False
        for _ in range(opts.max_shrinks):
            try:
                trial = retract_to_volume(u - step * G.values, t)
                tst = _state(trial, field, opts.quad_order)
            except RetractionError:
                step *= opts.shrink
                continue
            if 0.5 * tst.residual**2 <= R - opts.armijo_c * step * slope:
                accepted = True
                break
            step *= opts.shrink
        if not accepted:
            status = "stagnated"
            break
        u, st = trial, tst
        step = min(step / opts.shrink, opts.max_step)
        if st.residual < best_st.residual:
            best_u, best_st = u, st
    return _finish(best_u, field, t, best_st, status, it, traj, opts.quad_order)


def diagnose_escape(trajectory: list, t: float, window: int = 50, plateau: float = 1e-5) -> str:
    """Classify a descent trajectory as bounded, drifting or shrinking.

    ``drift_to_infinity``: |mean| non-decreasing over the last ``window``
    rows, beyond 10 s_t, with the energy slope below ``plateau`` per
    iteration (relative).  ``shrink_to_point``: D fell below 1 % of its
    initial value.
    """
    if len(trajectory) < window:
        raise ConfigError(f"trajectory has {len(trajectory)} rows, need at least {window}")
    s_t = sphere_radius(t)
    D0, D1 = trajectory[0]["D"], trajectory[-1]["D"]
    if D0 > 0 and D1 < 1e-2 * D0:
        return "shrink_to_point"
    tail = trajectory[-window:]
    m = [r["mean_norm"] for r in tail]
    monotone = all(b >= a for a, b in zip(m, m[1:])) and m[-1] > m[0]
    E = [r["E"] for r in tail]
    slope = abs(E[-1] - E[0]) / max(1, len(E) - 1) / max(1.0, abs(E[-1]))
    if monotone and m[-1] > 10.0 * s_t and slope < plateau:
        return "drift_to_infinity"
    return "bounded"


def estimate_isovolumetric(
    mesh, field: ScalarField, t: float, opts: DescentOptions | None = None, center=(0.0, 0.0, 0.0)
) -> float:
    """Upper estimate of S_K(t) from one descent started at a round sphere."""
    from hbubble.analytic import sphere_map

    rep = constrained_descent(sphere_map(mesh, np.asarray(center) / sphere_radius(t), t), field, t, opts)
    return rep.report.E


def perturbed(u: SurfaceMap, scale: float, seed: int) -> SurfaceMap:
    """u plus seeded Gaussian vertex noise of relative size ``scale``."""
    rng = np.random.default_rng(seed)
    r = float(np.abs(u.values - u.values.mean(axis=0)).max())
    return u.with_values(u.values + scale * r * rng.standard_normal(u.values.shape))
