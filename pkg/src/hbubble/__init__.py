"""Volume-constrained critical points of capillarity functionals on S²-type surfaces."""

from hbubble.errors import (
    ConfigError,
    DegenerateConstraintError,
    EvaluationError,
    HBubbleError,
    RetractionError,
    SolverError,
)
from hbubble.fields import ScalarField, ball_integral, check_conditions, estimate_k0, qk_eval
from hbubble.mesh import MobiusTransform, SphereMesh, build_icosphere, mobius_reparametrize
from hbubble.functionals import (
    FunctionalReport,
    SurfaceMap,
    barycenter,
    conformality_defect,
    evaluate,
    gradient,
    hilbert_inner,
    lagrange_lambda,
    ps_residual,
    retract_to_volume,
    wente_solve,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DegenerateConstraintError",
    "EvaluationError",
    "FunctionalReport",
    "HBubbleError",
    "MobiusTransform",
    "RetractionError",
    "ScalarField",
    "SolverError",
    "SphereMesh",
    "SurfaceMap",
    "ball_integral",
    "barycenter",
    "build_icosphere",
    "check_conditions",
    "conformality_defect",
    "estimate_k0",
    "evaluate",
    "gradient",
    "hilbert_inner",
    "lagrange_lambda",
    "mobius_reparametrize",
    "ps_residual",
    "qk_eval",
    "retract_to_volume",
    "wente_solve",
]
