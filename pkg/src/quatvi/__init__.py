"""Structure-preserving rigid body integration with quaternion attitude.

The one-step map advances position, unit quaternion, and their conjugate
momenta so that the quaternion norm, a discrete symplectic form, and
(for symmetric potentials) angular momentum are preserved over long
runs.  The package splits into quaternion algebra, a ball-cluster body
model, a quasi-Newton solver, the stepping schemes, invariant
diagnostics, and a command line driver.
"""

from .body_model import (
    Ball,
    CentralGravityPotential,
    InertiaPair,
    PotentialField,
    RigidBodyGeometry,
    RigidBodyModel,
    SingularConfigurationError,
    ZeroPotential,
    build_inertia,
    finite_difference_gradient,
    three_ball_planar_geometry,
)
from .broyden import BroydenConfig, BroydenSolver, SolveReport, SolverError, solve_broyden
from .diagnostics import (
    ConvergenceStudy,
    InvariantSample,
    angular_momentum,
    convergence_order_study,
    sample_invariants,
    secular_drift_rate,
    total_energy,
)
from .integrator import (
    MAX_STEP_ANGLE,
    ContinuousState,
    HamiltonianState,
    StepSizeError,
    Stepper,
    StepperConfig,
    advance,
    continuous_rhs,
    del_residual,
    discrete_lagrangian,
    discrete_legendre_momenta,
    hamiltonian_step,
    lagrangian_step,
    legendre_lift,
    project_to_se3,
)
from .quat_algebra import (
    conjugate,
    exp_map,
    f_matrix,
    from_rotation_matrix,
    g_matrix,
    hat,
    identity,
    inverse,
    log_map,
    quat_mul,
    rotation_matrix,
    vee,
)

__version__ = "0.1.0"

__all__ = [
    "Ball",
    "BroydenConfig",
    "BroydenSolver",
    "CentralGravityPotential",
    "ContinuousState",
    "ConvergenceStudy",
    "HamiltonianState",
    "InertiaPair",
    "InvariantSample",
    "MAX_STEP_ANGLE",
    "PotentialField",
    "RigidBodyGeometry",
    "RigidBodyModel",
    "SingularConfigurationError",
    "SolveReport",
    "SolverError",
    "StepSizeError",
    "Stepper",
    "StepperConfig",
    "ZeroPotential",
    "advance",
    "angular_momentum",
    "build_inertia",
    "conjugate",
    "continuous_rhs",
    "convergence_order_study",
    "del_residual",
    "discrete_lagrangian",
    "discrete_legendre_momenta",
    "exp_map",
    "f_matrix",
    "finite_difference_gradient",
    "from_rotation_matrix",
    "g_matrix",
    "hamiltonian_step",
    "hat",
    "identity",
    "inverse",
    "lagrangian_step",
    "legendre_lift",
    "log_map",
    "project_to_se3",
    "quat_mul",
    "rotation_matrix",
    "sample_invariants",
    "secular_drift_rate",
    "solve_broyden",
    "three_ball_planar_geometry",
    "total_energy",
    "vee",
]
