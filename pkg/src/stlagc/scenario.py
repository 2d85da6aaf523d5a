"""Scenario files: JSON schema, builtin shortcuts, funnel design glue.

A scenario bundles the plant (agents + graphs), one task per agent, and
simulation defaults.  The two case studies ship as builtins so their
files stay small::

    {"schema": 1, "builtin": "room_building",
     "builtin_params": {"n_rooms": 1000},
     "sim": {"dt": 0.005, "horizon": 40.0}}

Hand-written scenarios list agents and graphs explicitly::

    {"schema": 1,
     "agents": [{"id": 1, "family": "single_integrator", "n": 1,
                 "x0": [0.5]}, ...],
     "graphs": {"interconnection": {"2": [1]},
                "communication": [[1, 2]]},
     "tasks": {"1": {"formula": "G[0,5] (norm2(x1) <= 2)",
                     "funnel": {"r": 0.1}}},
     "sim": {"dt": 0.005, "horizon": 6.0}}

``interconnection`` maps each agent to the list of its adversarial
neighbors (the agents whose states enter its coupling term).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping

import numpy as np

from .funnel import DesignError, FunnelParams, design_funnel
from .parsing import parse_formula
from .plant import (
    AgentDynamics,
    MultiAgentSystem,
    build_robot_network,
    build_room_building,
    linear_agent,
    robot_network_tasks,
    room_building_tasks,
    single_integrator,
)
from .stl_core import (
    ConcavityError,
    ConvergenceError,
    TemporalFormula,
    boolean_robust_series,
    rho_opt,
)
from .topology import CompositionTopology, DirectedGraph, build_topology

__all__ = [
    "Scenario",
    "ScenarioError",
    "load_scenario",
    "design_funnels",
    "design_funnels_report",
]

SCHEMA_VERSION = 1

_FUNNEL_KEYS = {"gamma0", "gamma_inf", "l", "rho_max", "r", "t_star"}


class ScenarioError(ValueError):
    """Schema violation; the message carries a JSON-pointer-style path."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


def _require(cond: bool, path: str, message: str):
    if not cond:
        raise ScenarioError(path, message)


@dataclass(frozen=True, eq=False)
class Scenario:
    name: str
    system: MultiAgentSystem
    formulas: dict[int, TemporalFormula]
    funnel_overrides: dict[int, dict]
    sim_defaults: dict
    topology: CompositionTopology = field(init=False)

    def __post_init__(self):
        comm = [tuple(sorted(e)) for e in self.system.communication]
        object.__setattr__(
            self,
            "topology",
            build_topology(self.formulas, self.system.interconnection, comm),
        )

    @property
    def dims(self) -> dict[int, int]:
        return {a.agent_id: a.n for a in self.system.agents}


def _builtin_system(raw: dict) -> tuple[MultiAgentSystem, dict[int, str], dict]:
    name = raw["builtin"]
    params = raw.get("builtin_params", {})
    _require(isinstance(params, dict), "/builtin_params", "must be an object")
    if name == "room_building":
        n_rooms = int(params.get("n_rooms", 1000))
        system = build_room_building(n_rooms)
        tasks = room_building_tasks(n_rooms)
        # setpoint funnels ride close to their lower bounds while the
        # temperature waves settle; integrate below the recorded grid
        sim = {"dt": 0.005, "horizon": 40.0, "substeps": 10}
    elif name == "robot_network":
        _require(not params, "/builtin_params", "robot_network takes no parameters")
        system = build_robot_network()
        tasks = robot_network_tasks()
        # the goal funnels force a stiff boundary ride mid-transit; the
        # recorded 0.005 grid needs a finer integration substep to stay
        # clamp-free (see SimConfig.substeps)
        sim = {"dt": 0.005, "horizon": 60.0, "substeps": 50}
    else:
        raise ScenarioError("/builtin", f"unknown builtin {name!r}")
    return system, tasks, sim


def _agents_from_json(raw_agents: list) -> tuple[AgentDynamics, ...]:
    agents = []
    for k, spec in enumerate(raw_agents):
        path = f"/agents/{k}"
        _require(isinstance(spec, dict), path, "must be an object")
        _require("id" in spec, path, "missing 'id'")
        _require("family" in spec, path, "missing 'family'")
        aid = int(spec["id"])
        family = spec["family"]
        params = spec.get("params", {})
        if family == "single_integrator":
            n = int(spec.get("n", 1))
            D = params.get("D")
            agents.append(single_integrator(aid, n, D=D))
        elif family == "linear":
            _require("A" in params and "B" in params, f"{path}/params",
                     "linear agents need A and B")
            agents.append(
                linear_agent(aid, params["A"], params["B"],
                             D=params.get("D"), c=params.get("c"))
            )
        else:
            raise ScenarioError(
                f"{path}/family",
                f"unknown family {family!r} (builtins cover room_node/omni_robot)",
            )
    return tuple(agents)


def _system_from_json(raw: dict) -> MultiAgentSystem:
    _require("agents" in raw, "/agents", "missing (or use 'builtin')")
    _require(isinstance(raw["agents"], list) and raw["agents"], "/agents",
             "must be a nonempty array")
    agents = _agents_from_json(raw["agents"])
    n = len(agents)
    ids = [a.agent_id for a in agents]
    _require(ids == list(range(1, n + 1)), "/agents", "ids must be 1..N ascending")

    graphs = raw.get("graphs", {})
    _require(isinstance(graphs, dict), "/graphs", "must be an object")
    inter_raw = graphs.get("interconnection", {})
    edges = set()
    for key, neighbors in inter_raw.items():
        path = f"/graphs/interconnection/{key}"
        i = int(key)
        _require(1 <= i <= n, path, f"agent {i} out of range")
        _require(isinstance(neighbors, list), path, "must list neighbor ids")
        for j in neighbors:
            _require(1 <= int(j) <= n, path, f"neighbor {j} out of range")
            edges.add((int(j), i))
    comm = []
    for k, pair in enumerate(graphs.get("communication", [])):
        path = f"/graphs/communication/{k}"
        _require(isinstance(pair, list) and len(pair) == 2, path, "must be [i, j]")
        a, b = int(pair[0]), int(pair[1])
        _require(a != b and 1 <= a <= n and 1 <= b <= n, path,
                 "must join two distinct agents in range")
        comm.append(frozenset((a, b)))

    x0_parts = []
    for k, spec in enumerate(raw["agents"]):
        agent = agents[k]
        x0 = spec.get("x0", [0.0] * agent.n)
        _require(
            isinstance(x0, list) and len(x0) == agent.n,
            f"/agents/{k}/x0", f"must have {agent.n} entries",
        )
        x0_parts.extend(float(v) for v in x0)

    # wire internal-input dimensions from the declared couplings
    wired = []
    for agent in agents:
        p = sum(agents[j - 1].n for j, i in edges if i == agent.agent_id)
        if agent.p != p:
            if agent.params.get("D") is not None:
                raise ScenarioError(
                    f"/agents/{agent.agent_id - 1}/params/D",
                    f"has {agent.p} columns but the interconnection provides {p}",
                )
            agent = replace(agent, p=p)
        wired.append(agent)
    return MultiAgentSystem(
        tuple(wired),
        DirectedGraph(n, frozenset(edges), allow_self_loops=False),
        frozenset(comm),
        np.array(x0_parts),
    )


def load_scenario(source) -> Scenario:
    """Load and validate a scenario from a path, JSON string, or dict."""
    if isinstance(source, (str, Path)) and str(source).lstrip().startswith("{"):
        raw = json.loads(str(source))
        name = "<inline>"
    elif isinstance(source, (str, Path)):
        path = Path(source)
        raw = json.loads(path.read_text())
        name = path.stem
    else:
        raw = source
        name = raw.get("name", "<dict>")
    _require(isinstance(raw, dict), "/", "scenario must be a JSON object")
    _require("schema" in raw, "/schema", "missing schema version field")
    _require(raw["schema"] == SCHEMA_VERSION, "/schema",
             f"unsupported version {raw['schema']!r} (expected {SCHEMA_VERSION})")

    if "builtin" in raw:
        system, task_strings, sim_defaults = _builtin_system(raw)
        task_strings = dict(task_strings)
    else:
        system = _system_from_json(raw)
        task_strings = {}
        sim_defaults = {}

    dims = {a.agent_id: a.n for a in system.agents}
    funnel_overrides: dict[int, dict] = {}
    raw_tasks = raw.get("tasks", {})
    _require(isinstance(raw_tasks, dict), "/tasks", "must map agent id to task")
    for key, spec in raw_tasks.items():
        path = f"/tasks/{key}"
        i = int(key)
        _require(1 <= i <= system.n_agents, path, f"agent {i} out of range")
        if isinstance(spec, str):
            task_strings[i] = spec
            continue
        _require(isinstance(spec, dict) and "formula" in spec, path,
                 "must be a formula string or an object with 'formula'")
        task_strings[i] = spec["formula"]
        funnel = spec.get("funnel", {})
        _require(isinstance(funnel, dict), f"{path}/funnel", "must be an object")
        bad = set(funnel) - _FUNNEL_KEYS
        _require(not bad, f"{path}/funnel", f"unknown keys {sorted(bad)}")
        if funnel:
            funnel_overrides[i] = {k: float(v) for k, v in funnel.items()}

    _require(bool(task_strings), "/tasks", "at least one task is required")
    missing = sorted(set(range(1, system.n_agents + 1)) - set(task_strings))
    _require(not missing, "/tasks", f"agents without a task: {missing}")

    formulas = {}
    for i, text in task_strings.items():
        try:
            formulas[i] = parse_formula(text, dims=dims)
        except ValueError as exc:
            raise ScenarioError(f"/tasks/{i}", f"bad formula: {exc}") from exc
        for j in formulas[i].involved_agents:
            _require(1 <= j <= system.n_agents, f"/tasks/{i}",
                     f"formula references unknown agent {j}")

    sim_defaults = dict(sim_defaults)
    raw_sim = raw.get("sim", {})
    _require(isinstance(raw_sim, dict), "/sim", "must be an object")
    for key in ("dt", "horizon"):
        if key in raw_sim:
            sim_defaults[key] = float(raw_sim[key])
    for key in ("record_stride", "substeps"):
        if key in raw_sim:
            sim_defaults[key] = int(raw_sim[key])

    return Scenario(
        name=raw.get("name", name),
        system=system,
        formulas=formulas,
        funnel_overrides=funnel_overrides,
        sim_defaults=sim_defaults,
    )


def design_funnels(scenario: Scenario) -> dict[int, FunnelParams]:
    """Design (or verify overrides for) one funnel per task.

    The initial robustness comes from the scenario's initial state, the
    body optimum from the analytic value or the smooth ascent; both feed
    the deterministic design rules, so repeated runs get identical
    funnels.  Raises on the first infeasible task; use
    :func:`design_funnels_report` to collect failures instead.
    """
    funnels, errors = design_funnels_report(scenario)
    if errors:
        agent, message = errors[0]
        raise DesignError(f"task of agent {agent}: {message}")
    return funnels


def design_funnels_report(
    scenario: Scenario,
) -> tuple[dict[int, FunnelParams], list[tuple[int, str]]]:
    """Per-task funnel design collecting failures instead of raising."""
    layout = scenario.system.layout
    x0 = scenario.system.x0[None, :]
    funnels: dict[int, FunnelParams] = {}
    errors: list[tuple[int, str]] = []
    for i in sorted(scenario.formulas):
        phi = scenario.formulas[i]
        overrides = dict(scenario.funnel_overrides.get(i, {}))
        r = overrides.pop("r", None)
        try:
            rho0 = float(
                boolean_robust_series(phi.body, x0, mode="smooth", layout=layout)[0]
            )
            opt = rho_opt(phi.body)
            funnels[i] = design_funnel(phi, rho0, opt.value, r=r, overrides=overrides)
        except (DesignError, ConcavityError, ConvergenceError) as exc:
            errors.append((i, str(exc)))
    return funnels, errors
