"""Curvature weights K, the divergence field Q_K and the checks on K.

All evaluators are vectorised: they take points of shape ``(..., 3)`` and
return values of shape ``(...)`` (gradients ``(..., 3)``).
"""

from __future__ import annotations

import math
from functools import lru_cache
from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional, Sequence

import numpy as np

from hbubble.errors import ConfigError, EvaluationError

CONDKZERO_THRESHOLD = 2.0 * (2.0 ** (1.0 / 3.0) - 1.0)

Evaluator = Callable[[np.ndarray], np.ndarray]


def _norm(p: np.ndarray, keepdims: bool = False) -> np.ndarray:
    r = np.sqrt(np.einsum("...i,...i->...", p, p))
    return r[..., None] if keepdims else r


@dataclass(frozen=True)
class ScalarField:
    """A curvature weight K: R^3 -> R with optional analytic gradient."""

    evaluator: Evaluator
    gradient_evaluator: Optional[Evaluator] = None
    k0_declared: Optional[float] = None
    positive_flag: bool = False
    label: str = "custom"
    config: Optional[dict] = dc_field(default=None, compare=False)
    # optional (k, dk/dr) with K(p) = k(|p|); enables a scalar fast path
    radial_profile: Optional[tuple] = dc_field(default=None, compare=False)

    def __call__(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        k = np.asarray(self.evaluator(p), dtype=float)
        if not np.all(np.isfinite(k)):
            bad = np.argwhere(~np.isfinite(np.broadcast_to(k, p.shape[:-1])))
            point = p[tuple(bad[0])] if bad.size else p
            raise EvaluationError(f"non-finite K sample in field {self.label!r}", point=point)
        return k

    def grad(self, p) -> np.ndarray:
        """Gradient of K; central differences when no analytic gradient is given."""
        p = np.asarray(p, dtype=float)
        if self.gradient_evaluator is not None:
            return np.asarray(self.gradient_evaluator(p), dtype=float)
        h = 1e-6 * (1.0 + _norm(p, keepdims=True))
        out = np.empty(p.shape, dtype=float)
        for i in range(3):
            e = np.zeros(3)
            e[i] = 1.0
            out[..., i] = (self(p + h * e) - self(p - h * e)) / (2.0 * h[..., 0])
        return out

    def to_config(self) -> dict:
        if self.config is None:
            raise ConfigError(f"field {self.label!r} has no serialisable definition")
        return dict(self.config)

    def validate(self, plan: "SamplingPlan | None" = None) -> None:
        """Raise if the field claims positivity but a probe says otherwise."""
        if not self.positive_flag:
            return
        pts = (plan or SamplingPlan()).points()
        k = self(pts)
        if np.any(k <= 0):
            i = int(np.argmin(k))
            raise ConfigError(f"field {self.label!r} flagged positive but K={k[i]:.3e} at {pts[i]}")


# --------------------------------------------------------------------------
# built-in field library


def constant_field(k: float) -> ScalarField:
    k = float(k)
    return ScalarField(
        evaluator=lambda p: np.full(np.shape(p)[:-1], k),
        gradient_evaluator=lambda p: np.zeros(np.shape(p)),
        k0_declared=0.0 if k == 0 else None,
        positive_flag=k > 0,
        label=f"constant({k:g})",
        config={"kind": "constant", "k": k},
        radial_profile=(lambda r: np.full(np.shape(r), k), lambda r: np.zeros(np.shape(r))),
    )


def radial_field(a: float, beta: float = 1.0) -> ScalarField:
    """K(p) = a / (1 + |p|)**beta with beta >= 1."""
    a, beta = float(a), float(beta)
    if beta < 1.0:
        raise ConfigError(f"radial field needs beta >= 1, got {beta}")

    def prof(r):
        return a / (1.0 + r) ** beta

    def dprof(r):
        return -a * beta * (1.0 + r) ** (-beta - 1.0)

    def ev(p):
        return prof(_norm(p))

    def gr(p):
        r = _norm(p, keepdims=True)
        safe = np.where(r > 0, r, 1.0)
        # the cone point at the origin has no gradient; use 0 there
        return np.where(r > 0, -a * beta * (1.0 + r) ** (-beta - 1.0) * p / safe, 0.0)

    if beta == 1.0:
        k0 = abs(a)
    else:
        r_star = 1.0 / (beta - 1.0)
        k0 = abs(a) * r_star / (1.0 + r_star) ** beta
    return ScalarField(
        evaluator=ev,
        gradient_evaluator=gr,
        k0_declared=k0,
        positive_flag=a > 0,
        label=f"radial({a:g},{beta:g})",
        config={"kind": "radial", "a": a, "beta": beta},
        radial_profile=(prof, dprof),
    )


def bump_field(amplitude: float, center: Sequence[float] = (0.0, 0.0, 0.0), radius: float = 1.0) -> ScalarField:
    """C^1 bump amplitude * (1 - |p-c|^2/radius^2)^2 supported in B_radius(c)."""
    amp, rho = float(amplitude), float(radius)
    if rho <= 0:
        raise ConfigError("bump radius must be positive")
    c = np.asarray(center, dtype=float).reshape(3)

    def ev(p):
        d = p - c
        s = 1.0 - np.einsum("...i,...i->...", d, d) / rho**2
        return amp * np.where(s > 0, s, 0.0) ** 2

    def gr(p):
        d = p - c
        s = 1.0 - np.einsum("...i,...i->...", d, d)[..., None] / rho**2
        return np.where(s > 0, -4.0 * amp * s * d / rho**2, 0.0)

    return ScalarField(
        evaluator=ev,
        gradient_evaluator=gr,
        positive_flag=False,
        label=f"bump({amp:g},r={rho:g})",
        config={"kind": "bump", "amplitude": amp, "center": c.tolist(), "radius": rho},
    )


def sum_field(terms: Sequence[ScalarField]) -> ScalarField:
    terms = tuple(terms)
    if not terms:
        raise ConfigError("sum field needs at least one term")
    k0s = [t.k0_declared for t in terms]
    radial = None
    if all(t.radial_profile is not None for t in terms):
        radial = (
            lambda r: sum(t.radial_profile[0](r) for t in terms),
            lambda r: sum(t.radial_profile[1](r) for t in terms),
        )
    return ScalarField(
        evaluator=lambda p: sum(t(p) for t in terms),
        gradient_evaluator=lambda p: sum(t.grad(p) for t in terms),
        k0_declared=sum(k0s) if all(k is not None for k in k0s) else None,
        positive_flag=all(t.positive_flag for t in terms),
        label="+".join(t.label for t in terms),
        config=(
            {"kind": "sum", "terms": [t.config for t in terms]}
            if all(t.config is not None for t in terms)
            else None
        ),
        radial_profile=radial,
    )


_FIELD_KEYS = {
    "constant": {"k"},
    "radial": {"a", "beta"},
    "bump": {"amplitude", "center", "radius"},
    "sum": {"terms"},
}


def field_from_config(cfg: dict) -> ScalarField:
    """Build a field from its JSON form ``{"kind": ..., parameters...}``."""
    if not isinstance(cfg, dict) or "kind" not in cfg:
        raise ConfigError("field config must be an object with a 'kind' key")
    kind = cfg["kind"]
    if kind not in _FIELD_KEYS:
        raise ConfigError(f"unknown field kind {kind!r}")
    extra = set(cfg) - _FIELD_KEYS[kind] - {"kind"}
    if extra:
        raise ConfigError(f"unknown keys for field kind {kind!r}: {sorted(extra)}")
    try:
        if kind == "constant":
            return constant_field(cfg["k"])
        if kind == "radial":
            return radial_field(cfg["a"], cfg.get("beta", 1.0))
        if kind == "bump":
            return bump_field(cfg["amplitude"], cfg.get("center", (0.0, 0.0, 0.0)), cfg.get("radius", 1.0))
        return sum_field([field_from_config(t) for t in cfg["terms"]])
    except KeyError as exc:
        raise ConfigError(f"field kind {kind!r} is missing parameter {exc.args[0]!r}") from None


# --------------------------------------------------------------------------
# Q_K


@lru_cache(maxsize=None)
def _gauss_01(order: int):
    if order < 2:
        raise ConfigError(f"quad_order must be >= 2, got {order}")
    x, w = np.polynomial.legendre.leggauss(order)
    s, w = 0.5 * (x + 1.0), 0.5 * w
    s.setflags(write=False)
    w.setflags(write=False)
    return s, w


def mk_eval(field: ScalarField, p, quad_order: int = 32) -> np.ndarray:
    """m_K(p) = int_0^1 K(s p) s^2 ds by Gauss-Legendre."""
    p = np.asarray(p, dtype=float)
    s, w = _gauss_01(quad_order)
    if field.radial_profile is not None:
        k = field.radial_profile[0](_norm(p)[..., None] * s)
        if not np.all(np.isfinite(k)):
            raise EvaluationError(f"non-finite K sample in field {field.label!r}", point=p)
    else:
        k = field(p[..., None, :] * s[:, None])
    return k @ (w * s**2)


def qk_eval(field: ScalarField, p, quad_order: int = 32) -> np.ndarray:
    """Q_K(p) = m_K(p) p, the radial field whose divergence is K."""
    p = np.asarray(p, dtype=float)
    return mk_eval(field, p, quad_order)[..., None] * p


def qk_jacobian(field: ScalarField, p, quad_order: int = 32) -> np.ndarray:
    """Jacobian dQ_K/dp of the quadrature rule used by :func:`qk_eval`."""
    p = np.asarray(p, dtype=float)
    s, w = _gauss_01(quad_order)
    if field.radial_profile is not None:
        r = _norm(p)
        sr = r[..., None] * s
        m = field.radial_profile[0](sr) @ (w * s**2)
        dk = field.radial_profile[1](sr) @ (w * s**3)
        safe = np.where(r > 0, r, 1.0)
        dm = np.where(r[..., None] > 0, (dk / safe)[..., None] * p, 0.0)
    else:
        sp = p[..., None, :] * s[:, None]
        m = field(sp) @ (w * s**2)
        dm = np.einsum("...jk,j->...k", field.grad(sp), w * s**3)
    jac = p[..., :, None] * dm[..., None, :]
    idx = np.arange(3)
    jac[..., idx, idx] += m[..., None]
    return jac


# --------------------------------------------------------------------------
# sampling, k0 and conditions


def fibonacci_directions(n: int) -> np.ndarray:
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    phi = math.pi * (1.0 + math.sqrt(5.0)) * i
    r = np.sqrt(1.0 - z**2)
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


@dataclass(frozen=True)
class SamplingPlan:
    """Log-spaced radii times a fixed set of directions."""

    r_min: float = 1e-3
    r_max: float = 1e3
    per_decade: int = 10
    n_directions: int = 64
    include_origin: bool = True

    def radii(self) -> np.ndarray:
        decades = math.log10(self.r_max / self.r_min)
        n = max(2, int(round(decades * self.per_decade)) + 1)
        return np.logspace(math.log10(self.r_min), math.log10(self.r_max), n)

    def points(self) -> np.ndarray:
        pts = (self.radii()[:, None, None] * fibonacci_directions(self.n_directions)[None]).reshape(-1, 3)
        if self.include_origin:
            pts = np.vstack([np.zeros((1, 3)), pts])
        return pts


def _radial_profile(field: ScalarField, plan: SamplingPlan):
    radii = plan.radii()
    dirs = fibonacci_directions(plan.n_directions)
    pts = radii[:, None, None] * dirs[None]
    vals = np.abs(field(pts)) * radii[:, None]
    return radii, vals


def estimate_k0(field: ScalarField, plan: SamplingPlan | None = None) -> float:
    """Sampled sup |K(p)| |p|; ``math.inf`` when it still grows at ``r_max``.

    Growth means the maximum over the last radius decade exceeds the maximum
    below it by more than 1 %.
    """
    plan = plan or SamplingPlan()
    radii, vals = _radial_profile(field, plan)
    per_radius = vals.max(axis=1)
    total = float(per_radius.max())
    below = radii <= plan.r_max / 10.0
    if below.any():
        earlier = float(per_radius[below].max())
        if total > 0 and (earlier == 0 or (total - earlier) / earlier > 0.01):
            return math.inf
    return total


def restriction_margin(k0: float) -> float:
    """(2 - k0)^2 - 2^(2/3) (2 + k0); positive iff the restriction holds."""
    return (2.0 - k0) ** 2 - 2.0 ** (2.0 / 3.0) * (2.0 + k0)


def restriction_boundary() -> float:
    """The k0 in (0, 2) where the restriction inequality becomes an equality."""
    c = 2.0 ** (2.0 / 3.0)
    b = 4.0 + c
    return 0.5 * (b - math.sqrt(b * b - 4.0 * (4.0 - 2.0 * c)))


@dataclass
class ConditionReport:
    k0_estimate: float
    k1_pass: bool
    k2_status: str
    condkzero_pass: bool
    restriction_pass: bool
    positive_pass: bool
    margins: dict

    @property
    def k2_pass(self) -> bool:
        return self.k2_status == "pass"

    def to_dict(self) -> dict:
        k0 = self.k0_estimate
        return {
            "k0_estimate": None if math.isinf(k0) else k0,
            "k0_unbounded": math.isinf(k0),
            "k1_pass": self.k1_pass,
            "k2_status": self.k2_status,
            "condkzero_pass": self.condkzero_pass,
            "restriction_pass": self.restriction_pass,
            "positive_pass": self.positive_pass,
            "margins": {k: (None if math.isinf(v) else v) for k, v in self.margins.items()},
        }


def conditions_from_k0(k0: float, k2_status: str = "inconclusive", positive_pass: bool = False) -> ConditionReport:
    finite = math.isfinite(k0)
    margins = {
        "k1": 2.0 - k0,
        "condkzero": CONDKZERO_THRESHOLD - k0,
        "restriction": restriction_margin(k0) if finite else -math.inf,
    }
    return ConditionReport(
        k0_estimate=k0,
        k1_pass=finite and k0 < 2.0,
        k2_status=k2_status,
        condkzero_pass=finite and k0 < CONDKZERO_THRESHOLD,
        restriction_pass=finite and margins["restriction"] > 0,
        positive_pass=positive_pass,
        margins=margins,
    )


def check_conditions(field: ScalarField, plan: SamplingPlan | None = None, k2_tol: float = 1e-3) -> ConditionReport:
    """Assess (K1), (K2), positivity and the two smallness conditions on k0.

    (K2) is only observed up to ``plan.r_max``; if |K(p)p| is not below
    ``k2_tol`` there the status is ``"inconclusive"``, never a silent pass.
    """
    plan = plan or SamplingPlan()
    k0 = estimate_k0(field, plan)
    _, vals = _radial_profile(field, plan)
    k2_status = "pass" if float(vals[-1].max()) < k2_tol else "inconclusive"
    positive = bool(np.all(field(plan.points()) > 0))
    return conditions_from_k0(k0, k2_status=k2_status, positive_pass=positive)


# --------------------------------------------------------------------------
# ball integrals


@dataclass(frozen=True)
class BallQuadrature:
    """Tensor rule: Gauss-Legendre in r and cos(theta), trapezoid in phi."""

    n_r: int = 32
    n_theta: int = 32
    n_phi: int = 64


def _frame_for(axis: np.ndarray) -> np.ndarray:
    axis = axis / np.linalg.norm(axis)
    helper = np.array([1.0, 0.0, 0.0]) if abs(axis[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(axis, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(axis, e1)
    return np.stack([e1, e2, axis])


def ball_integral(
    field: ScalarField,
    center,
    radius: float,
    quad: BallQuadrature | None = None,
    pole=None,
) -> float:
    """Integral of K over the ball B_radius(center).

    Spherical coordinates are taken about ``pole`` (default: the centre),
    which must lie in the closed ball.  Putting the pole on an integrable
    point singularity of K makes the rule converge as if K were smooth.
    """
    if radius <= 0:
        raise ConfigError("radius must be positive")
    quad = quad or BallQuadrature()
    c = np.asarray(center, dtype=float).reshape(3)
    o = c if pole is None else np.asarray(pole, dtype=float).reshape(3)
    a = o - c
    delta = float(np.linalg.norm(a))
    if delta > radius * (1 + 1e-12):
        raise ConfigError("pole must lie inside the ball")
    # polar axis along c - o so that the exit radius depends on theta only
    frame = np.eye(3) if delta == 0 else _frame_for(-a)
    on_boundary = delta >= radius * (1 - 1e-12)
    x, w = np.polynomial.legendre.leggauss(quad.n_theta)
    if on_boundary:
        cos_t, w_t = 0.5 * (x + 1.0), 0.5 * w
    else:
        cos_t, w_t = x, w
    phi = 2.0 * math.pi * np.arange(quad.n_phi) / quad.n_phi
    w_phi = 2.0 * math.pi / quad.n_phi
    sin_t = np.sqrt(np.clip(1.0 - cos_t**2, 0.0, None))
    local = np.stack(
        [
            sin_t[:, None] * np.cos(phi)[None, :],
            sin_t[:, None] * np.sin(phi)[None, :],
            np.broadcast_to(cos_t[:, None], (cos_t.size, phi.size)),
        ],
        axis=-1,
    )
    dirs = local @ frame
    r_exit = delta * cos_t + np.sqrt(np.clip(delta**2 * cos_t**2 + radius**2 - delta**2, 0.0, None))
    xr, wr = np.polynomial.legendre.leggauss(quad.n_r)
    s = 0.5 * (xr + 1.0)
    rr = r_exit[:, None] * s[None, :]
    pts = o + rr[:, None, :, None] * dirs[:, :, None, :]
    vals = field(pts)
    radial = np.einsum("tpr,tr,r->tp", vals, rr**2, 0.5 * wr) * r_exit[:, None]
    return float(np.einsum("tp,t->", radial, w_t) * w_phi)
