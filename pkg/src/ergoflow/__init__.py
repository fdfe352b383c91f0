"""Ergodic coverage planning over domains carried by known flows."""

from .baselines import InfoMaxConfig, infomax_objective, infomax_plan
from .core import EmpiricalMeasure, Trajectory, normalize_weights
from .dynamics import DynamicsModel, rollout, rollout_adjoint_grad, step
from .errors import (
    ConfigError,
    ErgoflowError,
    NonInvertibleFlowError,
    NumericIntegrityError,
    ValidationError,
)
from .flows import (
    AttractorField,
    ConstantField,
    DuffingField,
    FieldFlow,
    IdentityFlow,
    RigidRotationField,
    RotationFlow,
    TranslationFlow,
    VortexField,
    flow_from_field,
    flow_inverse_map,
    flow_map,
    flow_step,
    flow_velocity,
    load_gridded_field,
    push_forward_measure,
)
from .kernels import KernelParams, gram, kernel_eval, kernel_grad_a, median_heuristic_bandwidth
from .metric import (
    MetricReport,
    backward_mmd,
    empirical_mmd,
    ergodic_metric,
    ergodic_metric_and_grad,
    ergodic_metric_grad,
    forward_mmd,
)
from .planner import ErgodicProblem, PlanSolution, objective, optimize, optimize_continuation, project_controls

__version__ = "0.1.0"
