"""Feedback optimal power flow with state estimation in the loop for radial
distribution networks: plant, linear models, measurement simulation, WLS
estimation, the primal-dual controller, and the closed-loop harness."""

__version__ = "0.1.0"

from .controller import (
    ControllerConfig,
    ControllerState,
    CostParams,
    StepSizeCertificate,
    certify_step_size,
    dual_step,
    initial_state,
    primal_grad,
    primal_step,
)
from .estimator import (
    EstimationResult,
    WlsEstimator,
    confidence_interval,
    estimate_voltages,
    wls_solve,
)
from .feeders import ieee33, resolve_network, synthetic_feeder
from .harness import (
    BoundReport,
    ScenarioConfig,
    SimulationTrace,
    prepare,
    run_baseline_comparison,
    run_closed_loop,
    run_trials,
    saddle_oracle,
    tightened_bound_experiment,
    verify_error_bound,
)
from .linearizer import (
    LinearFlowModel,
    eval_linear,
    jacobian_linearize,
    lindistflow,
    linearize,
)
from .netmodel import (
    FeasibleSet,
    Line,
    NetworkError,
    NetworkModel,
    Node,
    build_admittance,
    load_network,
    project_feasible,
)
from .plant import PowerFlowError, PowerFlowSolution, solve_power_flow, true_quantities
from .sensing import (
    MeasurementBatch,
    MeasurementPlan,
    build_linear_measurement_model,
    make_plan,
    place_sensors,
    sample_measurements,
)

__all__ = [name for name in dir() if not name.startswith("_")]
