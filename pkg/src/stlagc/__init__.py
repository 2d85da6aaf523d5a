"""Distributed funnel control of timed tasks on coupled multi-agent systems.

The package turns per-agent temporal tasks into time-varying performance
funnels, encodes the funnels as assume-guarantee contracts between
dynamically coupled agents, synthesizes the closed-form distributed
controller that keeps every task's robustness inside its funnel,
simulates the coupled closed loop, and monitors contract and task
satisfaction on the resulting trajectories.
"""

from ._kernels import available_backends, default_backend
from .contracts import (
    Contract,
    ContractClause,
    Verdict,
    check_composition,
    encode_contracts,
    expand_assumptions,
    monitor_uniform_strong,
    monitor_weak,
)
from .control import control_input, validate_assumptions
from .funnel import ErrorState, FunnelParams, design_funnel, error_chain, gamma
from .parsing import parse_formula
from .pipeline import monitor_run, prepare, simulate
from .plant import (
    AgentDynamics,
    ClusterSystem,
    MultiAgentSystem,
    assemble_cluster,
    build_robot_network,
    build_room_building,
    eval_dynamics,
    robot_network_tasks,
    room_building_tasks,
)
from .scenario import Scenario, design_funnels, load_scenario
from .sim import ClosedLoop, SimConfig, Trajectory, export_csv, integrate, resample
from .stl_core import (
    BooleanFormula,
    Literal,
    PredicateFamily,
    PredicateSpec,
    Signal,
    StateLayout,
    TemporalFormula,
    TemporalOp,
    eval_boolean_robust,
    eval_predicate,
    eval_temporal_robust,
    grad_boolean_robust,
    rho_opt,
)
from .topology import (
    ClusterPartition,
    CompositionTopology,
    DirectedGraph,
    build_task_graph,
    build_topology,
    check_assumptions,
    cluster_interconnection,
    maximal_clusters,
)

__version__ = "0.1.0"
