"""Agent dynamics, the coupled multi-agent system, and cluster products.

Each agent follows

    dx_i/dt = f_i(x_i) + g_i(x_i) u_i + h_i(x_i, w_i),

where u_i is the controllable input and w_i stacks the states of the
agent's adversarial neighbors (ascending id).  Dynamics come from a closed
family enumeration so that input-matrix definiteness and Lipschitz bounds
stay checkable; arbitrary user ODEs are deliberately not accepted.

The two bundled plants reproduce the case studies: a circular building of
heated rooms coupled to both wall neighbors, and a network of five
three-wheeled omnidirectional robots with distance-keeping couplings.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .stl_core import DimensionError, StateLayout
from .topology import DirectedGraph

__all__ = [
    "DynamicsFamily",
    "AgentDynamics",
    "MultiAgentSystem",
    "ClusterSystem",
    "eval_dynamics",
    "assemble_cluster",
    "build_room_building",
    "room_building_tasks",
    "build_robot_network",
    "robot_network_tasks",
    "linear_agent",
    "single_integrator",
    "ROOM_ALPHA",
    "ROOM_ALPHA_E",
    "ROOM_ALPHA_H",
    "ROOM_T_HEATER",
    "ROOM_T_OUTSIDE",
    "ROBOT_WHEEL_RADIUS",
    "ROBOT_BODY_RADIUS",
    "ROBOT_COUPLING_GAIN",
    "ROBOT_COUPLING_REG",
]

# Heat-exchange coefficients and boundary temperatures of the room model.
ROOM_ALPHA = 0.05
ROOM_ALPHA_E = 0.008
ROOM_ALPHA_H = 0.0036
ROOM_T_HEATER = 50.0
ROOM_T_OUTSIDE = -1.0

# Omnidirectional robot geometry and coupling constants.
ROBOT_WHEEL_RADIUS = 0.02
ROBOT_BODY_RADIUS = 0.2
ROBOT_COUPLING_GAIN = 0.1
ROBOT_COUPLING_REG = 0.00001


class DynamicsFamily(enum.Enum):
    LINEAR = "linear"
    SINGLE_INTEGRATOR = "single_integrator"
    OMNI_ROBOT = "omni_robot"
    ROOM_NODE = "room_node"


def _robot_wheel_matrix(L: float) -> np.ndarray:
    c, s = math.cos(math.pi / 6), math.sin(math.pi / 6)
    return np.array([[0.0, c, -c], [-1.0, s, -s], [L, L, L]])


@dataclass(frozen=True, eq=False)
class AgentDynamics:
    """One agent: family tag plus the family's parameter payload."""

    agent_id: int
    family: DynamicsFamily
    n: int
    m: int
    p: int
    params: dict = field(default_factory=dict)

    def f(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,):
            raise DimensionError(f"agent {self.agent_id}: state must have dim {self.n}")
        if self.family is DynamicsFamily.LINEAR:
            return self.params["A"] @ x + self.params["c"]
        if self.family is DynamicsFamily.SINGLE_INTEGRATOR:
            return np.zeros(self.n)
        if self.family is DynamicsFamily.OMNI_ROBOT:
            return np.zeros(3)
        # room node: constant-coefficient leak toward the outside temperature
        return np.array(
            [
                (-2.0 * ROOM_ALPHA - ROOM_ALPHA_E) * x[0]
                + ROOM_ALPHA_E * self.params["T_e"]
            ]
        )

    def g(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.family is DynamicsFamily.LINEAR:
            return self.params["B"]
        if self.family is DynamicsFamily.SINGLE_INTEGRATOR:
            return np.eye(self.n)
        if self.family is DynamicsFamily.OMNI_ROBOT:
            c, s = math.cos(x[2]), math.sin(x[2])
            rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
            return rot @ self.params["G0"]
        # heater authority scales with the gap to the heater temperature
        return np.array([[ROOM_ALPHA_H * (ROOM_T_HEATER - x[0])]])

    def h(self, x: np.ndarray, w: np.ndarray) -> np.ndarray:
        """Internal-input map; the robot coupling also reads own position."""
        w = np.asarray(w, dtype=float)
        if w.shape != (self.p,):
            raise DimensionError(
                f"agent {self.agent_id}: internal input must have dim {self.p}"
            )
        if self.family in (DynamicsFamily.LINEAR, DynamicsFamily.SINGLE_INTEGRATOR):
            D = self.params.get("D")
            if D is None:
                return np.zeros(self.n)
            return D @ w
        if self.family is DynamicsFamily.OMNI_ROBOT:
            out = np.zeros(3)
            k = self.params["k"]
            for j in range(self.p // 3):
                diff = x[:2] - w[3 * j : 3 * j + 2]
                out[:2] -= k * diff / (np.linalg.norm(diff) + ROBOT_COUPLING_REG)
            return out
        return np.array([ROOM_ALPHA * w.sum()])

    def derivative(self, x, u, w) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.shape != (self.m,):
            raise DimensionError(f"agent {self.agent_id}: input must have dim {self.m}")
        x = np.asarray(x, dtype=float)
        return self.f(x) + self.g(x) @ u + self.h(x, w)


def eval_dynamics(agent: AgentDynamics, x_i, u_i, w_i) -> np.ndarray:
    """State derivative of one agent; thin wrapper kept for symmetry."""
    return agent.derivative(x_i, u_i, w_i)


def linear_agent(
    agent_id: int,
    A,
    B,
    D=None,
    c=None,
    p: int = 0,
) -> AgentDynamics:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    n = A.shape[0]
    if A.shape != (n, n):
        raise DimensionError("A must be square")
    if B.shape[0] != n:
        raise DimensionError("B must have one row per state")
    params = {"A": A, "B": B, "c": np.zeros(n) if c is None else np.asarray(c, float)}
    if D is not None:
        D = np.atleast_2d(np.asarray(D, dtype=float))
        if D.shape[0] != n:
            raise DimensionError("D must have one row per state")
        p = D.shape[1]
        params["D"] = D
    return AgentDynamics(agent_id, DynamicsFamily.LINEAR, n, B.shape[1], p, params)


def single_integrator(agent_id: int, n: int, D=None, p: int = 0) -> AgentDynamics:
    params = {}
    if D is not None:
        D = np.atleast_2d(np.asarray(D, dtype=float))
        if D.shape[0] != n:
            raise DimensionError("D must have one row per state")
        p = D.shape[1]
        params["D"] = D
    return AgentDynamics(agent_id, DynamicsFamily.SINGLE_INTEGRATOR, n, n, p, params)


def _room_agent(agent_id: int, n_neighbors: int = 2) -> AgentDynamics:
    return AgentDynamics(
        agent_id,
        DynamicsFamily.ROOM_NODE,
        1,
        1,
        n_neighbors,
        {"T_e": ROOM_T_OUTSIDE},
    )


def _robot_agent(agent_id: int, n_neighbors: int) -> AgentDynamics:
    B = _robot_wheel_matrix(ROBOT_BODY_RADIUS)
    G0 = np.linalg.inv(B.T) * ROBOT_WHEEL_RADIUS
    return AgentDynamics(
        agent_id,
        DynamicsFamily.OMNI_ROBOT,
        3,
        3,
        3 * n_neighbors,
        {"G0": G0, "k": ROBOT_COUPLING_GAIN},
    )


@dataclass(frozen=True, eq=False)
class MultiAgentSystem:
    """Agents plus the interconnection wiring and a default initial state.

    ``interconnection`` edge (j, i) wires agent j's state into agent i's
    internal input; each w_i stacks those neighbor states ascending by id.
    """

    agents: tuple[AgentDynamics, ...]
    interconnection: DirectedGraph
    communication: frozenset[frozenset[int]]
    x0: np.ndarray

    def __post_init__(self):
        ids = [a.agent_id for a in self.agents]
        if ids != sorted(set(ids)) or ids != list(range(1, len(ids) + 1)):
            raise ValueError("agents must be numbered 1..N ascending")
        if self.interconnection.n != len(ids):
            raise ValueError("interconnection graph size must match agent count")
        x0 = np.asarray(self.x0, dtype=float)
        if x0.shape != (self.layout.total_dim,):
            raise DimensionError(
                f"x0 must stack all agent states (dim {self.layout.total_dim})"
            )
        for a in self.agents:
            expected = sum(
                self.agent(j).n for j in self.interconnection.predecessors(a.agent_id)
            )
            if a.p != expected:
                raise DimensionError(
                    f"agent {a.agent_id} expects internal input of dim {a.p}, "
                    f"wiring provides {expected}"
                )
        object.__setattr__(self, "x0", x0)

    @property
    def n_agents(self) -> int:
        return len(self.agents)

    @property
    def layout(self) -> StateLayout:
        return StateLayout(
            tuple(a.agent_id for a in self.agents), tuple(a.n for a in self.agents)
        )

    def agent(self, agent_id: int) -> AgentDynamics:
        return self.agents[agent_id - 1]

    def adversarial_neighbors(self, agent_id: int) -> tuple[int, ...]:
        return tuple(self.interconnection.predecessors(agent_id))

    def internal_input_indices(self, agent_id: int) -> np.ndarray:
        """Global state indices feeding agent's internal input, stacked."""
        layout = self.layout
        idx: list[int] = []
        for j in self.adversarial_neighbors(agent_id):
            s = layout.agent_slice(j)
            idx.extend(range(s.start, s.stop))
        return np.array(idx, dtype=np.intp)

    def internal_input(self, agent_id: int, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float)[self.internal_input_indices(agent_id)]

    def derivative(self, x: np.ndarray, u: Mapping[int, np.ndarray]) -> np.ndarray:
        """Stacked state derivative under per-agent inputs (zero if absent)."""
        x = np.asarray(x, dtype=float)
        layout = self.layout
        dx = np.zeros_like(x)
        for a in self.agents:
            s = layout.agent_slice(a.agent_id)
            ui = u.get(a.agent_id)
            if ui is None:
                ui = np.zeros(a.m)
            dx[s] = a.derivative(x[s], ui, self.internal_input(a.agent_id, x))
        return dx


@dataclass(frozen=True, eq=False)
class ClusterSystem:
    """Product system of one dependency cluster, stacked ascending by id."""

    members: tuple[int, ...]
    agents: tuple[AgentDynamics, ...]
    system: MultiAgentSystem

    def __post_init__(self):
        if tuple(sorted(self.members)) != self.members:
            raise ValueError("cluster members must be sorted ascending")
        for i in self.members:
            overlap = set(self.system.adversarial_neighbors(i)) & set(self.members)
            if overlap:
                raise ValueError(
                    f"agent {i} has adversarial neighbors {sorted(overlap)} inside "
                    "its own cluster; adversarial and cooperative sets must be disjoint"
                )

    @property
    def layout(self) -> StateLayout:
        return StateLayout(self.members, tuple(a.n for a in self.agents))

    @property
    def state_dim(self) -> int:
        return self.layout.total_dim

    @property
    def input_dim(self) -> int:
        return sum(a.m for a in self.agents)

    def cooperative_neighbors(self, agent_id: int) -> tuple[int, ...]:
        return tuple(i for i in self.members if i != agent_id)

    def f_bar(self, x_bar: np.ndarray) -> np.ndarray:
        layout = self.layout
        out = np.zeros(self.state_dim)
        for a in self.agents:
            s = layout.agent_slice(a.agent_id)
            out[s] = a.f(x_bar[s])
        return out

    def g_bar(self, x_bar: np.ndarray) -> np.ndarray:
        layout = self.layout
        out = np.zeros((self.state_dim, self.input_dim))
        col = 0
        for a in self.agents:
            s = layout.agent_slice(a.agent_id)
            out[s, col : col + a.m] = a.g(x_bar[s])
            col += a.m
        return out

    def h_bar(self, x_bar: np.ndarray, w_bar: Sequence[np.ndarray]) -> np.ndarray:
        """Stacked coupling term; ``w_bar`` lists each member's internal input."""
        layout = self.layout
        out = np.zeros(self.state_dim)
        for a, w in zip(self.agents, w_bar):
            s = layout.agent_slice(a.agent_id)
            out[s] = a.h(x_bar[s], w)
        return out

    def derivative(self, x_bar, u_bar, w_bar) -> np.ndarray:
        return (
            self.f_bar(x_bar) + self.g_bar(x_bar) @ np.asarray(u_bar, float)
            + self.h_bar(x_bar, w_bar)
        )


def assemble_cluster(system: MultiAgentSystem, members: Sequence[int]) -> ClusterSystem:
    members = tuple(sorted(int(i) for i in members))
    if len(set(members)) != len(members):
        raise ValueError("cluster members must be distinct")
    agents = tuple(system.agent(i) for i in members)
    return ClusterSystem(members, agents, system)


# ---------------------------------------------------------------------------
# bundled case-study plants


def build_room_building(n_rooms: int) -> MultiAgentSystem:
    """Circular building: every room is coupled to both wall neighbors.

    Initial temperatures: room 1 at 19, room 2 at 25, remaining odd rooms
    at 25 and even rooms at 31 degrees.
    """
    if n_rooms < 3:
        raise ValueError("the ring needs at least 3 rooms")
    agents = tuple(_room_agent(i) for i in range(1, n_rooms + 1))
    edges = set()
    for i in range(1, n_rooms + 1):
        left = n_rooms if i == 1 else i - 1
        right = 1 if i == n_rooms else i + 1
        edges.add((left, i))
        edges.add((right, i))
    x0 = np.empty(n_rooms)
    for i in range(1, n_rooms + 1):
        if i == 1:
            x0[i - 1] = 19.0
        elif i % 2 == 1:
            x0[i - 1] = 25.0
        elif i == 2:
            x0[i - 1] = 25.0
        else:
            x0[i - 1] = 31.0
    if n_rooms >= 5:
        comm_pairs = _room_task_edges(n_rooms)
    else:  # too small for the bundled task set; communicate along walls
        comm_pairs = [(j, i) for j, i in edges if j < i]
    comm = frozenset(frozenset(e) for e in comm_pairs)
    return MultiAgentSystem(
        agents, DirectedGraph(n_rooms, frozenset(edges), allow_self_loops=False),
        comm, x0,
    )


def _room_task_edges(n: int) -> list[tuple[int, int]]:
    edges = [(1, n - 1), (1, 3), (2, n), (2, 4)]
    edges += [(i, i + 2) for i in range(3, n - 1)]
    return edges


def room_building_tasks(n_rooms: int) -> dict[int, str]:
    """The building's tasks: reach-and-hold temperature alignment.

    Rooms 1 and 2 align with their next-but-one neighbors on both sides
    and with a setpoint; interior rooms track room i+2; the last odd and
    even rooms hold their setpoints.
    """
    if n_rooms < 5:
        raise ValueError("the task set needs at least 5 rooms")
    n = n_rooms
    window = "F[0,5] G[10,20]"
    tasks = {
        1: f"{window} (norm2(x1 - x{n - 1}) <= 2 and norm2(x1 - x3) <= 2 "
           f"and norm2(x1 - 23) <= 0.5)",
        2: f"{window} (norm2(x2 - x{n}) <= 2 and norm2(x2 - x4) <= 2 "
           f"and norm2(x2 - 29) <= 0.5)",
        n - 1: f"{window} (norm2(x{n - 1} - 23) <= 0.5)",
        n: f"{window} (norm2(x{n} - 29) <= 0.5)",
    }
    for i in range(3, n - 1):
        tasks[i] = f"{window} (norm2(x{i} - x{i + 2}) <= 2)"
    return tasks


def build_robot_network() -> MultiAgentSystem:
    """Five omnidirectional robots with distance-keeping couplings."""
    neighbor_sets = {1: (), 2: (4,), 3: (4, 5), 4: (2, 3), 5: (3,)}
    agents = tuple(_robot_agent(i, len(neighbor_sets[i])) for i in range(1, 6))
    edges = frozenset((j, i) for i, js in neighbor_sets.items() for j in js)
    x0 = np.concatenate(
        [
            [2.0, 2.0, -math.pi / 4],
            [4.0, 0.0, 0.0],
            [6.0, 2.0, math.pi / 4],
            [8.0, 0.0, 0.0],
            [10.0, 2.0, -math.pi / 4],
        ]
    )
    comm = frozenset(
        frozenset(e) for e in [(1, 2), (1, 3), (2, 3), (4, 5)]
    )
    return MultiAgentSystem(
        agents, DirectedGraph(5, edges, allow_self_loops=False), comm, x0
    )


def robot_network_tasks() -> dict[int, str]:
    """Reach-and-hold tasks: two goal-seekers, three followers.

    Orientation requirements are expressed in degrees, hence the radian
    conversion factor on the heading components.
    """
    deg = 180.0 / math.pi
    window = "F[0,40] G[0,20]"
    return {
        1: f"{window} (norm2(x1_0 - x2_0, x1_1 - x2_1) <= 1 "
           f"and norm2(x1_0 - x3_0, x1_1 - x3_1) <= 1)",
        2: f"{window} (norm2(x2_0 - x3_0, x2_1 - x3_1) <= 1 "
           f"and norm2({deg!r} * x2_2 - {deg!r} * x3_2) <= 7.5)",
        3: f"{window} (norm2(x3_0 - 14, x3_1 - 7) <= 0.1 "
           f"and norm2({deg!r} * x3_2) <= 7.5)",
        4: f"{window} (norm2(x4_0 - 14, x4_1 - 7.5) <= 0.1 "
           f"and norm2({deg!r} * x4_2) <= 7.5)",
        5: f"{window} (norm2(x5_0 - x4_0, x5_1 - x4_1) <= 1)",
    }
