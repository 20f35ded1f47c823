"""Discrete-time networked SEIR epidemics on traveler-flow networks, with flow-restriction control."""

from .analysis import (
    aggregate_totals,
    build_consensus_matrix,
    check_row_stochastic,
    consensus_error,
    consensus_trace,
    detect_extinction,
    equilibrium_report,
    infection_burden,
    run_past_extinction,
)
from .control import (
    ControlPolicy,
    Controller,
    ReopenRule,
    VaccinePolicy,
    apply_restriction,
    binary_theta,
    proportional_theta,
    vaccine_move,
)
from .errors import FlowSeirError, ModelViolation, ScenarioError, SimplexDriftError
from .model import (
    CompartmentState,
    Scenario,
    SpreadParams,
    StopRule,
    Trajectory,
    simulate,
    step,
    travel_prob,
    validate_params,
)
from .network import (
    FlowSchedule,
    check_balance,
    check_k_strong_connectivity,
    flows_from_weights,
    normalize_flows,
    outflow_fraction,
)
from .scenario import builtin_four_city, dump_scenario, load_scenario, write_run_output

__version__ = "0.1.0"
