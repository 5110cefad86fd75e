"""Lagrange-element Galerkin solver for a bond pricing model with rating-dependent volatility."""
from .errors import (
    ConfigurationError,
    DomainError,
    InconsistentInputError,
    InvalidParameterError,
    RatingFEMError,
    RootFailureError,
    SingularSystemError,
    SolverError,
)
from .model import (
    ModelParams,
    ThresholdCurve,
    effective_volatility,
    initial_condition,
    smoothed_heaviside,
    smoothed_heaviside_deriv,
)
from .banded import BandedMatrix, solve_banded
from .fem import (
    Mesh,
    QuadratureRule,
    SolutionField,
    assemble_mass,
    assemble_operator,
    build_mesh,
    gauss_rule,
    reference_basis,
    solver_mesh,
)
from .stepper import (
    BoundaryCondition,
    SolutionHistory,
    TimeGrid,
    apply_dirichlet,
    backward_euler_step,
    default_boundary,
    run_solver,
    stability_diagnostic,
)
from .boundary import (
    FreeBoundaryPath,
    boundary_root_green,
    detect_crossing,
    evaluate_solution,
    green_vector,
    track_boundary,
)
from .verify import (
    error_norms,
    explicit_fd_solve,
    spatial_convergence_study,
    temporal_convergence_study,
)

__version__ = "0.1.0"
