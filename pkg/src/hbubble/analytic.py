"""Closed-form spheres, the Newtonian potential of the unit ball and level brackets."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from hbubble.errors import ConfigError
from hbubble.fields import BallQuadrature, ScalarField, ball_integral
from hbubble.functionals import ISOPERIMETRIC_S, FunctionalReport, SurfaceMap
from hbubble.mesh import SphereMesh


def sphere_radius(t: float) -> float:
    """s_t = (3 t / 4 pi)^(1/3), the radius of a round sphere of volume t."""
    if t <= 0:
        raise ConfigError("t must be positive")
    return (3.0 * t / (4.0 * math.pi)) ** (1.0 / 3.0)


def sphere_level(t: float) -> float:
    """S_0(t) = S t^(2/3)."""
    return ISOPERIMETRIC_S * t ** (2.0 / 3.0)


def sphere_map(mesh: SphereMesh, p, t: float) -> SurfaceMap:
    """omega_{p,t} = s_t (p - omega): the positively oriented sphere of volume
    t centred at s_t p."""
    s = sphere_radius(t)
    p = np.asarray(p, dtype=float).reshape(3)
    return SurfaceMap(mesh, s * (p - mesh.vertices))


def sphere_exact(field: ScalarField, center, r: float, quad: BallQuadrature | None = None) -> FunctionalReport:
    """Functionals of center + r * omega in closed form (no mesh)."""
    if r == 0:
        raise ConfigError("r must be nonzero")
    D = 4.0 * math.pi * r * r
    V = -4.0 * math.pi * r**3 / 3.0
    K_ball = ball_integral(field, center, abs(r), quad)
    Q = -K_ball if r > 0 else K_ball
    c = tuple(float(x) for x in np.asarray(center, dtype=float).reshape(3))
    return FunctionalReport(D=D, A=D, V=V, Q=Q, E=D + Q, F=D + Q, mean=c)


def newtonian_potential(p):
    """I(p) = int_{B_1(0)} dq / |q - p| and its field E = -grad I."""
    p = np.asarray(p, dtype=float)
    r = np.linalg.norm(p, axis=-1)
    inside = r <= 1.0
    safe = np.where(inside, 1.0, r)
    I = np.where(inside, 2.0 * math.pi / 3.0 * (3.0 - r * r), 4.0 * math.pi / (3.0 * safe))
    E = np.where(inside[..., None], 4.0 * math.pi / 3.0 * p, 4.0 * math.pi / 3.0 * p / safe[..., None] ** 3)
    if I.ndim == 0:
        return float(I), E
    return I, E


def sphere_energy_bound(k0: float, t: float, p) -> float:
    """Upper bound k0 * 4 pi s_t^2 / (3 |p|) on |Q(omega_{p,t})| for |p| >= 1."""
    s = sphere_radius(t)
    return k0 * 4.0 * math.pi * s * s / (3.0 * float(np.linalg.norm(p)))


@dataclass
class LevelBrackets:
    t: float
    k0: float
    s_t: float
    S0: float
    lower: float
    sphere_upper: float
    two_bubble: float

    @property
    def ordered(self) -> bool:
        """True when the sphere family stays strictly below the two-bubble level."""
        return self.sphere_upper < self.two_bubble

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ordered"] = self.ordered
        return d


def level_brackets(k0: float, t: float) -> LevelBrackets:
    """Energy levels bracketing S_K(t) and the minimax value.

    ``k0`` is sup |K(p) p|, either declared on the field or estimated.
    """
    if t <= 0:
        raise ConfigError("t must be positive")
    if not (k0 >= 0 and math.isfinite(k0)):
        raise ConfigError(f"k0 must be finite and nonnegative, got {k0}")
    S0 = sphere_level(t)
    return LevelBrackets(
        t=t,
        k0=k0,
        s_t=sphere_radius(t),
        S0=S0,
        lower=(1.0 - k0 / 2.0) * S0,
        sphere_upper=S0 + 2.0 * k0 * (9.0 * math.pi / 16.0) ** (1.0 / 3.0) * t ** (2.0 / 3.0),
        two_bubble=2.0 ** (1.0 / 3.0) * S0,
    )
