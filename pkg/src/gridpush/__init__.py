"""Differentiable quasi-static planar pushing on grid-cell bodies.

A rigid object is modeled as a grid of cuboid cells with per-cell mass and
friction. Forward dynamics solve a mixed linear complementarity problem for
support-surface friction under rigid-joint constraints; closed-form gradients
of the prediction loss drive identification of the parameter maps from
observed pushes, and a contact-point planner slides the object to stability-
constrained goal poses.
"""

from .body import (
    BodyState,
    GridBody,
    PushAction,
    adjacency_jacobian,
    body_pose_of,
    build_from_occupancy,
    center_of_mass,
    friction_bound,
    friction_jacobian,
    mass_diagonal,
    mass_matrix,
    place_at,
)
from .data import TrajectoryRecord
from .dynamics import (
    CallCounter,
    LcpSolution,
    SolverConfig,
    integrate,
    simulate,
    solution_residual,
    step_velocity,
    wrap_angle,
)
from .errors import (
    BodyError,
    DisconnectedBodyError,
    InsufficientExcitationError,
    LcpSolveError,
    PlanningError,
)
from .gradients import (
    GradientPair,
    LossReport,
    finite_diff_gradient,
    forward_pass,
    grad_friction,
    grad_mass,
    gradient_pair,
    loss,
    mobility_matrix,
    regime_margin,
    squared_loss,
)
from .identify import IdentConfig, IdentResult, evaluate, explore, identify, split_dataset
from .planner import (
    Environment,
    GoalSpec,
    Plan,
    PlannerConfig,
    execute_plan,
    exhaustive_contact_search,
    overhang_depth,
    plan_push_sequence,
    pose_gap,
    rrt_star_waypoints,
    sample_stable_goal,
    stability_check,
    state_is_stable,
)
from .pipeline import (
    ExperimentSpec,
    RunReport,
    compare_optimizers,
    generate_dataset,
    run_pipeline,
)

__version__ = "0.1.0"

__all__ = [
    "BodyState", "GridBody", "PushAction", "TrajectoryRecord",
    "adjacency_jacobian", "body_pose_of", "build_from_occupancy",
    "center_of_mass", "friction_bound", "friction_jacobian", "mass_diagonal",
    "mass_matrix", "place_at",
    "CallCounter", "LcpSolution", "SolverConfig", "integrate", "simulate",
    "solution_residual", "step_velocity", "wrap_angle",
    "BodyError", "DisconnectedBodyError", "InsufficientExcitationError",
    "LcpSolveError", "PlanningError",
    "GradientPair", "LossReport", "finite_diff_gradient", "forward_pass",
    "grad_friction", "grad_mass", "gradient_pair", "loss", "mobility_matrix",
    "regime_margin", "squared_loss",
    "IdentConfig", "IdentResult", "evaluate", "explore", "identify",
    "split_dataset",
    "Environment", "GoalSpec", "Plan", "PlannerConfig", "execute_plan",
    "exhaustive_contact_search", "overhang_depth", "plan_push_sequence",
    "pose_gap", "rrt_star_waypoints", "sample_stable_goal", "stability_check",
    "state_is_stable",
    "ExperimentSpec", "RunReport", "compare_optimizers", "generate_dataset",
    "run_pipeline",
]
