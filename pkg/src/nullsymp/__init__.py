"""nullsymp: null congruences, optical scalars and the symplectic form they induce."""

from .catalog import get_spacetime
from .dsl import format_spacetime, parse_expr, parse_spacetime
from .errors import (
    ConstraintError, EvaluationError, NullSympError, OutOfDomainError, ParseError,
    PreconditionError, SpecError,
)
from .flows import closed_orbit_detect, completeness_probe, integrate_flow, monitor_along
from .geometry import (
    causal_classify, christoffel_at, covariant_derivative_at, curvature_at, killing_residual,
    metric_at,
)
from .optics import (
    build_null_frame, frobenius_value, optical_scalars, pregeodesic_residual,
    raychaudhuri_residuals,
)
from .symplectic import (
    closedness_residual, contact_check_3d, frame_pairings, lagrangian_residual,
    liouville_residual, nondegeneracy_report, omega_at,
)

__version__ = "0.1.0"

__all__ = [
    "get_spacetime", "parse_spacetime", "format_spacetime", "parse_expr",
    "NullSympError", "SpecError", "ParseError", "ConstraintError", "EvaluationError",
    "OutOfDomainError", "PreconditionError",
    "metric_at", "christoffel_at", "curvature_at", "covariant_derivative_at",
    "causal_classify", "killing_residual",
    "build_null_frame", "optical_scalars", "raychaudhuri_residuals", "pregeodesic_residual",
    "frobenius_value",
    "omega_at", "frame_pairings", "nondegeneracy_report", "liouville_residual",
    "closedness_residual", "lagrangian_residual", "contact_check_3d",
    "integrate_flow", "monitor_along", "completeness_probe", "closed_orbit_detect",
]
