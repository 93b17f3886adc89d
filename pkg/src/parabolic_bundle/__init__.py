"""Principal Floquet bundles of discretized nonautonomous parabolic equations."""

from .coefficient_hull import HullPoint, constant, quasiperiodic, random_periodic, separable_periodic, tabulated, translate
from .discretization import EllipticCoefficients, assemble_operator, build_grid, principal_dirichlet_eigenpair
from .evolution import EvolutionConfig, propagator, step_adjoint, step_forward, time_one
from .global_solutions import build_global, dim_check, misalignment_blowup
from .green_kernel import green, sign_audit
from .order_cone import ConeContext, e_norm, focusing_gamma, projective_distance
from .principal_bundle import frames_along_orbit, principal_frame, separation_estimate

__version__ = "0.1.0"

__all__ = [
    "ConeContext",
    "EllipticCoefficients",
    "EvolutionConfig",
    "HullPoint",
    "assemble_operator",
    "build_global",
    "build_grid",
    "constant",
    "dim_check",
    "e_norm",
    "focusing_gamma",
    "frames_along_orbit",
    "green",
    "misalignment_blowup",
    "principal_dirichlet_eigenpair",
    "principal_frame",
    "projective_distance",
    "propagator",
    "quasiperiodic",
    "random_periodic",
    "separable_periodic",
    "separation_estimate",
    "sign_audit",
    "step_adjoint",
    "step_forward",
    "tabulated",
    "time_one",
    "translate",
]
