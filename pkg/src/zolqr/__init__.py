"""Derivative-free (zeroth-order) policy optimization for discrete-time LQR.

The package provides exact LQR machinery (Riccati/Lyapunov solvers, costs,
gradients), sphere-smoothed one-point/two-point gradient estimators, the
perturbed gradient-free descent loop, empirical estimation of the regularity
constants that drive the theoretical parameter schedules, and a CLI harness
for convergence, perturbation-sweep, and rollout-length experiments.
"""

from zolqr.lqr_core import (
    INF_COST,
    DareSolution,
    EstimationError,
    InvalidInputError,
    LqrError,
    LtiSystem,
    NotStabilizableError,
    NotStabilizingError,
    SolverError,
    benchmark_system,
    cost_exact,
    cost_from_state,
    cost_from_state_many,
    cost_matrix,
    exact_gradient,
    is_stabilizing,
    rollout_cost,
    solve_dare,
    solve_discrete_lyapunov,
    spectral_radius,
)
from zolqr.sampling import InitialStateDist, RngStream, sample_initial_state, sample_sphere
from zolqr.zo_optim import (
    AlgoConfig,
    IterationRecord,
    PerturbationModel,
    RunTrace,
    estimator_variance,
    make_perturbation,
    mc_mean_estimate,
    one_point_estimate,
    run_descent,
    two_point_estimate,
)
from zolqr.theory_params import (
    ConstantsEstimate,
    DecayFit,
    estimate_constants,
    fit_decay,
    rollout_length_bound,
    sample_sublevel,
    schedule_one_point,
    schedule_two_point,
)

__version__ = "0.1.0"
