"""Task, interconnection and communication graphs; dependency clusters.

Three graphs describe a scenario: the directed task dependency graph
(who a task reads), the directed interconnection graph (who physically
drives whom through unknown couplings) and the undirected communication
graph.  Agents are grouped into maximal dependency clusters — connected
components of the undirected closure of the task graph — and the quotient
of the interconnection graph by that partition decides which composition
theorem applies: weak contract satisfaction suffices on a DAG, cyclic
quotients need the uniform-strong notion.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .stl_core import TemporalFormula

__all__ = [
    "DirectedGraph",
    "ClusterPartition",
    "CompositionTopology",
    "TopologyReport",
    "build_task_graph",
    "maximal_clusters",
    "cluster_interconnection",
    "build_topology",
    "check_assumptions",
]


@dataclass(frozen=True)
class DirectedGraph:
    """Directed graph over vertices 1..n; an edge (j, i) points j -> i."""

    n: int
    edges: frozenset[tuple[int, int]]
    allow_self_loops: bool = True

    def __post_init__(self):
        edges = frozenset((int(j), int(i)) for j, i in self.edges)
        for j, i in edges:
            if not (1 <= j <= self.n and 1 <= i <= self.n):
                raise ValueError(f"edge ({j}, {i}) outside vertex range 1..{self.n}")
            if j == i and not self.allow_self_loops:
                raise ValueError(f"self-loop at vertex {j} not allowed")
        object.__setattr__(self, "edges", edges)

    def successors(self, v: int) -> list[int]:
        return sorted(i for j, i in self.edges if j == v)

    def predecessors(self, v: int) -> list[int]:
        return sorted(j for j, i in self.edges if i == v)

    def adjacency(self) -> dict[int, list[int]]:
        adj: dict[int, list[int]] = {v: [] for v in range(1, self.n + 1)}
        for j, i in sorted(self.edges):
            adj[j].append(i)
        return adj


@dataclass(frozen=True)
class ClusterPartition:
    """Pairwise disjoint clusters covering 1..n, each sorted ascending."""

    clusters: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        clusters = tuple(tuple(sorted(c)) for c in self.clusters)
        seen: set[int] = set()
        for c in clusters:
            if seen & set(c):
                raise ValueError("clusters must be pairwise disjoint")
            seen.update(c)
        object.__setattr__(self, "clusters", clusters)

    def cluster_of(self, agent: int) -> int:
        """1-based index of the cluster containing ``agent``."""
        for k, c in enumerate(self.clusters, start=1):
            if agent in c:
                return k
        raise KeyError(f"agent {agent} not covered by the partition")

    def members(self, k: int) -> tuple[int, ...]:
        return self.clusters[k - 1]

    def __len__(self) -> int:
        return len(self.clusters)


def build_task_graph(formulas: Mapping[int, TemporalFormula], n: int) -> DirectedGraph:
    """Edge (i, j) whenever task i reads some state of agent j != i."""
    edges = set()
    for i, phi in formulas.items():
        if not 1 <= i <= n:
            raise ValueError(f"task owner {i} outside agent range 1..{n}")
        for j in phi.involved_agents:
            if not 1 <= j <= n:
                raise ValueError(f"task of agent {i} references unknown agent {j}")
            if j != i:
                edges.add((i, j))
    return DirectedGraph(n, frozenset(edges))


def maximal_clusters(task_graph: DirectedGraph) -> ClusterPartition:
    """Connected components of the undirected closure of the task graph.

    Components are ordered by smallest member id, members ascending, which
    pins the stacking order of every cluster-level vector downstream.
    """
    undirected: dict[int, set[int]] = {v: set() for v in range(1, task_graph.n + 1)}
    for j, i in task_graph.edges:
        undirected[j].add(i)
        undirected[i].add(j)
    seen: set[int] = set()
    clusters = []
    for v in range(1, task_graph.n + 1):
        if v in seen:
            continue
        stack, comp = [v], set()
        while stack:
            u = stack.pop()
            if u in comp:
                continue
            comp.add(u)
            stack.extend(undirected[u] - comp)
        seen |= comp
        clusters.append(tuple(sorted(comp)))
    clusters.sort(key=lambda c: c[0])
    return ClusterPartition(tuple(clusters))


def _find_cycle(adj: Mapping[int, Sequence[int]], vertices: Iterable[int]):
    """Iterative DFS; returns one directed cycle as a vertex list, or None."""
    WHITE, GRAY, BLACK = 0, 1, 2
    color = {v: WHITE for v in vertices}
    parent: dict[int, int] = {}
    for root in color:
        if color[root] != WHITE:
            continue
        stack = [(root, iter(adj.get(root, ())))]
        color[root] = GRAY
        while stack:
            v, it = stack[-1]
            advanced = False
            for w in it:
                if color[w] == WHITE:
                    color[w] = GRAY
                    parent[w] = v
                    stack.append((w, iter(adj.get(w, ()))))
                    advanced = True
                    break
                if color[w] == GRAY:
                    cycle = [w, v]
                    u = v
                    while u != w:
                        u = parent[u]
                        cycle.append(u)
                    cycle.reverse()
                    return cycle  # starts and ends at w
            if not advanced:
                color[v] = BLACK
                stack.pop()
    return None


def cluster_interconnection(
    partition: ClusterPartition, interconnection: DirectedGraph
) -> tuple[DirectedGraph, bool, list[int] | None]:
    """Quotient of the interconnection graph by the cluster partition.

    Returns the quotient graph over cluster indices 1..K (intra-cluster
    couplings dropped), an acyclicity flag, and one directed cycle of
    cluster indices as witness when cyclic.
    """
    covered = {a for c in partition.clusters for a in c}
    missing = set(range(1, interconnection.n + 1)) - covered
    if missing:
        raise ValueError(f"partition does not cover vertices {sorted(missing)}")
    edges = set()
    for j, i in interconnection.edges:
        kj, ki = partition.cluster_of(j), partition.cluster_of(i)
        if kj != ki:
            edges.add((kj, ki))
    quotient = DirectedGraph(len(partition), frozenset(edges))
    cycle = _find_cycle(quotient.adjacency(), range(1, len(partition) + 1))
    return quotient, cycle is None, cycle


@dataclass(frozen=True)
class CompositionTopology:
    """All graph structure of one scenario, ready for contract encoding."""

    task_graph: DirectedGraph
    interconnection: DirectedGraph
    communication: frozenset[frozenset[int]]
    partition: ClusterPartition
    cluster_graph: DirectedGraph
    acyclic: bool
    cycle_witness: tuple[int, ...] | None
    initial_agents: tuple[int, ...]
    initial_clusters: tuple[int, ...]

    def adversarial_neighbors(self, i: int) -> tuple[int, ...]:
        return tuple(self.interconnection.predecessors(i))

    def cooperative_neighbors(self, i: int) -> tuple[int, ...]:
        k = self.partition.cluster_of(i)
        return tuple(a for a in self.partition.members(k) if a != i)


def build_topology(
    formulas: Mapping[int, TemporalFormula],
    interconnection: DirectedGraph,
    communication: Iterable[tuple[int, int]],
) -> CompositionTopology:
    n = interconnection.n
    if interconnection.allow_self_loops:
        interconnection = DirectedGraph(n, interconnection.edges, allow_self_loops=False)
    task_graph = build_task_graph(formulas, n)
    partition = maximal_clusters(task_graph)
    quotient, acyclic, cycle = cluster_interconnection(partition, interconnection)
    comm = frozenset(frozenset((int(a), int(b))) for a, b in communication)
    for pair in comm:
        if len(pair) != 2:
            raise ValueError("communication edges must join two distinct agents")
    initial_agents = tuple(
        v for v in range(1, n + 1) if not interconnection.predecessors(v)
    )
    initial_clusters = tuple(
        k for k in range(1, len(partition) + 1) if not quotient.predecessors(k)
    )
    return CompositionTopology(
        task_graph=task_graph,
        interconnection=interconnection,
        communication=comm,
        partition=partition,
        cluster_graph=quotient,
        acyclic=acyclic,
        cycle_witness=tuple(cycle) if cycle else None,
        initial_agents=initial_agents,
        initial_clusters=initial_clusters,
    )


@dataclass(frozen=True)
class TopologyReport:
    """Pass/fail per graph-level assumption, with offending edges."""

    communication_covers_tasks: bool
    missing_communication: tuple[tuple[int, int], ...]
    task_graph_acyclic: bool
    task_cycle: tuple[int, ...] | None
    neighbor_sets_disjoint: bool
    overlapping_neighbors: tuple[tuple[int, int], ...]
    initial_agents: tuple[int, ...]
    initial_clusters: tuple[int, ...]

    @property
    def all_pass(self) -> bool:
        return (
            self.communication_covers_tasks
            and self.task_graph_acyclic
            and self.neighbor_sets_disjoint
        )

    def as_dict(self) -> dict:
        return {
            "communication_covers_tasks": {
                "pass": self.communication_covers_tasks,
                "missing_edges": [list(e) for e in self.missing_communication],
            },
            "task_graph_acyclic": {
                "pass": self.task_graph_acyclic,
                "cycle": list(self.task_cycle) if self.task_cycle else None,
            },
            "neighbor_sets_disjoint": {
                "pass": self.neighbor_sets_disjoint,
                "overlaps": [list(e) for e in self.overlapping_neighbors],
            },
            "initial_agents": list(self.initial_agents),
            "initial_clusters": list(self.initial_clusters),
        }


def check_assumptions(topology: CompositionTopology) -> TopologyReport:
    """Check the graph-level requirements of the composition results.

    Tasks must be communicable (task edges contained in the communication
    graph), the task dependency graph must be acyclic, and no agent may
    have an adversarial neighbor inside its own cluster.
    """
    missing = tuple(
        sorted(
            (i, j)
            for i, j in topology.task_graph.edges
            if frozenset((i, j)) not in topology.communication
        )
    )
    cycle = _find_cycle(
        topology.task_graph.adjacency(), range(1, topology.task_graph.n + 1)
    )
    overlaps = []
    for i in range(1, topology.interconnection.n + 1):
        adversarial = set(topology.adversarial_neighbors(i))
        for j in sorted(adversarial & set(topology.cooperative_neighbors(i))):
            overlaps.append((j, i))
    return TopologyReport(
        communication_covers_tasks=not missing,
        missing_communication=missing,
        task_graph_acyclic=cycle is None,
        task_cycle=tuple(cycle) if cycle else None,
        neighbor_sets_disjoint=not overlaps,
        overlapping_neighbors=tuple(overlaps),
        initial_agents=topology.initial_agents,
        initial_clusters=topology.initial_clusters,
    )
