"""Non-parametric safety filters from streamed safety samples.

A GP posterior over scalar safety observations becomes the barrier
function h = w_mu * mu - w_var * sigma^2; its analytic derivatives feed a
relative-degree-2 barrier constraint and a minimum-norm QP rectifies the
nominal input so a double-integrator plant stays in the data-defined safe
set. Gaussian-noisy query states are handled by exact moment matching.
"""

from .kernel import Hyperparameters, kernel_eval, kernel_grad, kernel_hess
from .gp import (
    CorruptModelError,
    Dataset,
    GpModel,
    dataset_from_csv,
    dataset_to_csv,
    fit_hyperparameters,
    log_marginal_likelihood,
)
from .barrier import (
    GaussianState,
    GcbfWeights,
    SafetyEvaluation,
    evaluate,
    grid_evaluate,
    noisy_evaluate,
    noisy_mean,
    noisy_variance,
)
from .safety_filter import (
    AffineDynamics,
    EcbfGains,
    InfeasibleConstraintError,
    RectificationResult,
    barrier_constraint,
    double_integrator,
    ecbf_gains_from_poles,
    lie_derivatives_deg1,
    lie_derivatives_deg2,
    rectify,
)
from .sim import (
    NoiseModel,
    Obstacle,
    ObstacleWorld,
    PlantState,
    Setpoints,
    measure_position,
    sample_safety_obstacles,
    sample_safety_uniform,
    step,
    to_setpoints,
)
from .config import ScenarioConfig, load_config, write_config, bundled_config_path
from .scenarios import ScenarioResult, TraceLog, run_scenario

__version__ = "0.1.0"

__all__ = [
    "Hyperparameters", "kernel_eval", "kernel_grad", "kernel_hess",
    "CorruptModelError", "Dataset", "GpModel", "dataset_from_csv",
    "dataset_to_csv", "fit_hyperparameters", "log_marginal_likelihood",
    "GaussianState", "GcbfWeights", "SafetyEvaluation", "evaluate",
    "grid_evaluate", "noisy_evaluate", "noisy_mean", "noisy_variance",
    "AffineDynamics", "EcbfGains", "InfeasibleConstraintError",
    "RectificationResult", "barrier_constraint", "double_integrator",
    "ecbf_gains_from_poles", "lie_derivatives_deg1", "lie_derivatives_deg2",
    "rectify",
    "NoiseModel", "Obstacle", "ObstacleWorld", "PlantState", "Setpoints",
    "measure_position", "sample_safety_obstacles", "sample_safety_uniform",
    "step", "to_setpoints",
    "ScenarioConfig", "load_config", "write_config", "bundled_config_path",
    "ScenarioResult", "TraceLog", "run_scenario",
]
