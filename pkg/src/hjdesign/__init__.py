"""Hamilton-Jacobi solution operators, their Gateaux derivative and inverse design.

The package solves first-order convex Hamilton-Jacobi equations on
truncated box grids in one and two dimensions, differentiates the
solution operator with respect to the initial datum, and uses the
derivative for gradient-based reconstruction of initial data.  For
quadratic Hamiltonians it also characterizes and projects onto the set
of reachable targets.
"""

from __future__ import annotations

from importlib import metadata

from .characteristics import (
    backtrack,
    convergence_report,
    fd_directional,
    gateaux_derivative,
    phi_map,
)
from .errors import (
    BoundarySaturationError,
    ConfigurationError,
    ConvergenceError,
    DomainError,
    EscapeError,
    HJError,
    HypothesisError,
    InvalidArgumentError,
    SchemeMismatchError,
    StallError,
    StencilError,
)
from .fixtures import fixture, random_lipschitz
from .grid import (
    GridFunction,
    GridSpec,
    VectorField,
    gradient,
    interpolate,
    norms,
    second_difference,
)
from .hamiltonian import (
    CustomHamiltonian,
    QuadraticHamiltonian,
    ShiftedQuadraticHamiltonian,
    check_hypotheses,
    eval_H,
    eval_Hp,
    eval_Hx,
    legendre,
)
from .inverse import (
    DescentParams,
    descend,
    directional_derivative,
    evaluate_J,
    gradient_measure,
    mollify_gradient,
    regularize,
)
from .reachability import (
    inverse_design_cone,
    is_reachable,
    obstacle_residual,
    project_L2,
)
from .solvers import (
    backward_solve,
    eps_scheme,
    forward_solve,
    semiconcave_envelope,
    semigroup_defect,
)
from .transport import (
    DiscreteMeasure,
    backward_reversible,
    duality_pairing,
    extend_measure_at_zero,
    forward_duality_solution,
    oslc_estimate,
    transport_coefficient,
)

try:
    __version__ = metadata.version("artifact")
except metadata.PackageNotFoundError:  # running from a source tree
    __version__ = "0.0.0"

__all__ = [
    "BoundarySaturationError",
    "ConfigurationError",
    "ConvergenceError",
    "CustomHamiltonian",
    "DescentParams",
    "DiscreteMeasure",
    "DomainError",
    "EscapeError",
    "GridFunction",
    "GridSpec",
    "HJError",
    "HypothesisError",
    "InvalidArgumentError",
    "QuadraticHamiltonian",
    "SchemeMismatchError",
    "ShiftedQuadraticHamiltonian",
    "StallError",
    "StencilError",
    "VectorField",
    "backtrack",
    "backward_reversible",
    "backward_solve",
    "check_hypotheses",
    "convergence_report",
    "descend",
    "directional_derivative",
    "duality_pairing",
    "eps_scheme",
    "eval_H",
    "eval_Hp",
    "eval_Hx",
    "evaluate_J",
    "extend_measure_at_zero",
    "fd_directional",
    "fixture",
    "forward_duality_solution",
    "forward_solve",
    "gateaux_derivative",
    "gradient",
    "gradient_measure",
    "interpolate",
    "inverse_design_cone",
    "is_reachable",
    "legendre",
    "mollify_gradient",
    "norms",
    "obstacle_residual",
    "oslc_estimate",
    "phi_map",
    "project_L2",
    "random_lipschitz",
    "regularize",
    "second_difference",
    "semiconcave_envelope",
    "semigroup_defect",
    "transport_coefficient",
]
