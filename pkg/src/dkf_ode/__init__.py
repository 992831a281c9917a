"""Parameter and hidden-state estimation for partially observed linear ODEs.

The profiled tracking criterion ``S(zeta; theta, lam)`` is computed in closed
form from a forward Riccati sweep, differentiated through the sensitivity
equations, and minimized over the parameters. Hot loops run in a compiled
extension when it is available, else in numpy (see :mod:`dkf_ode.kernels`).
"""

from .dkf import (
    AdjointPath,
    CriterionValue,
    ObservabilityReport,
    SampledSignal,
    SmoothedTrajectory,
    apply_prior_mean,
    criterion_S,
    default_Q0,
    final_state,
    integrate_adjoint,
    kalman_rank,
    observability_gramian,
    smooth_trajectory,
)
from .errors import (
    ConfigError,
    DivergenceError,
    DKFError,
    DomainError,
    IllPosedFitError,
    NonConvergenceError,
    NonUniqueMinimumError,
    ObservabilityError,
    ParameterDomainError,
)
from .estimators import EstimateResult, EstimatorOptions, LambdaSelection, estimate_dkf, estimate_nls, select_lambda
from .gradient import GradientValue, adjoint_vector_field, grad_S, integrate_sensitivities
from .integrate import TimeGrid, Trajectory, default_grid, duhamel_solution, resolvant, solve_ivp
from .kernels import BACKEND
from .models import ModelSpec, autonomous_model, evaluate_system, get_model, register_model, registered_models
from .observations import ObservationSet, observation_times, simulate_observations
from .oracle import brute_force_fixed_x0, brute_force_min
from .spline import SmoothEstimate, SplineBasis, bspline_basis, fit_regression_spline, gcv_select_knots

__version__ = "0.1.0"
