"""Double-layered transient frequency control for linearized power networks."""

from .control import SafetySpec, barrier_feedback, compose, lowpass_derivative, stability_filter, top_layer
from .mpc import MpcConfig, MpcError, MpcResult, Snapshot, make_snapshot, predict, solve
from .network import (
    NetworkError,
    NetworkModel,
    Partition,
    Region,
    build_network,
    load_network,
    load_partition,
    subnetwork,
    validate_partition,
    whole_network_partition,
)
from .plant import InjectionProfile, PiecewiseProfile, SystemState, dc_flows, equilibrium, load_ramp, step
from .qp import QpProblem, QpSolution, solve_qp
from .regional import RegionalMpc, SamplingSchedule, boundary_injection_forecast, distributed_update, regional_snapshot
from .scenario import ScenarioError, bundled_path, load_scenario
from .sim import Scenario, SimTrace, control_cost, lyapunov, run_closed_loop, safety_report

__version__ = "0.1.0"
