"""Simulation and certification of networked Euler-Lagrange systems under passivity-based protocols."""

from .analysis import (
    CertificationReport,
    RateBounds,
    TraceTooCoarse,
    certify_trace,
    check_sliding_stability,
    loop_rate_bounds,
    loop_storage,
    rate_bounds_node_edge,
    rate_bounds_sliding,
    rate_bounds_sync,
    storage_node_edge,
    storage_sliding,
    storage_sync,
)
from .controllers import (
    GainConfig,
    ReferenceTrajectory,
    constant_reference,
    make_loop,
    polynomial_reference,
    sinusoid_reference,
)
from .dynamics import AgentModel, NetworkPlant, NetworkState, SingularMassError, network_rhs
from .graph import NetworkGraph, build_incidence, check_connectivity, kron_lift, ring, undirected
from .integrate import IntegratorConfig, SimTrace, SimulationDiverged, convergence_order, simulate
from .models import CATALOG, make_model
from .scenario import Scenario, ScenarioError, emit_csv, emit_plot, load_scenario, read_csv, run_scenario

__version__ = "0.1.0"
