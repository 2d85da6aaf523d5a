import numpy as np
import pytest

from stlagc.parsing import parse_formula
from stlagc.plant import build_robot_network, robot_network_tasks
from stlagc.topology import (
    ClusterPartition,
    DirectedGraph,
    build_task_graph,
    build_topology,
    check_assumptions,
    cluster_interconnection,
    maximal_clusters,
)


def formulas_like_example():
    """Three tasks: one collaborative over agents {1,2}, two local ones."""
    return {
        1: parse_formula("G[0,10] (norm2(x1 - x2) <= 3)", dims={1: 2, 2: 2}),
        2: parse_formula("F[5,10] (norm2(x2 - 50) <= 5)", dims={2: 2}),
        3: parse_formula("G[0,10] (norm2(x3 - 20) <= 10)", dims={3: 2}),
    }


def test_task_graph_collaborative_edge():
    g = build_task_graph(formulas_like_example(), 3)
    assert g.edges == {(1, 2)}


def test_task_graph_no_collaboration():
    formulas = {
        i: parse_formula(f"G[0,1] (x{i} <= 0)") for i in (1, 2, 3)
    }
    assert build_task_graph(formulas, 3).edges == frozenset()


def test_task_graph_chain():
    formulas = formulas_like_example()
    formulas[2] = parse_formula("G[0,10] (norm2(x2 - x3) <= 3)", dims={2: 2, 3: 2})
    g = build_task_graph(formulas, 3)
    assert g.edges == {(1, 2), (2, 3)}


def test_unknown_agent_rejected():
    formulas = {1: parse_formula("G[0,1] (x7 <= 0)")}
    with pytest.raises(ValueError, match="unknown agent"):
        build_task_graph(formulas, 3)


def test_maximal_clusters_of_example():
    part = maximal_clusters(build_task_graph(formulas_like_example(), 3))
    assert part.clusters == ((1, 2), (3,))


def test_singleton_clusters():
    part = maximal_clusters(DirectedGraph(4, frozenset()))
    assert part.clusters == ((1,), (2,), (3,), (4,))


def test_robot_case_clusters():
    system = build_robot_network()
    dims = {a.agent_id: a.n for a in system.agents}
    formulas = {i: parse_formula(s, dims=dims) for i, s in robot_network_tasks().items()}
    part = maximal_clusters(build_task_graph(formulas, 5))
    assert part.clusters == ((1, 2, 3), (4, 5))


def test_quotient_single_edge_acyclic():
    part = ClusterPartition(((1, 2), (3,)))
    inter = DirectedGraph(3, frozenset({(1, 3)}))
    quotient, acyclic, witness = cluster_interconnection(part, inter)
    assert quotient.edges == {(1, 2)}
    assert acyclic and witness is None


def test_ring_quotient_cyclic_with_witness():
    # ring of six agents, alternating clusters -> 2-cluster cycle
    edges = set()
    for i in range(1, 7):
        edges.add((i, i % 6 + 1))
    part = ClusterPartition(((1, 3, 5), (2, 4, 6)))
    quotient, acyclic, witness = cluster_interconnection(part, DirectedGraph(6, frozenset(edges)))
    assert not acyclic
    assert witness is not None and witness[0] == witness[-1]
    # the witness must be an actual cycle in the quotient
    for a, b in zip(witness, witness[1:]):
        assert (a, b) in quotient.edges


def test_robot_case_quotient_cyclic():
    system = build_robot_network()
    part = ClusterPartition(((1, 2, 3), (4, 5)))
    quotient, acyclic, witness = cluster_interconnection(part, system.interconnection)
    assert quotient.edges == {(1, 2), (2, 1)}
    assert not acyclic


def test_quotient_soundness():
    rng = np.random.default_rng(5)
    for _ in range(50):
        n = int(rng.integers(3, 10))
        edges = {
            (int(j) + 1, int(i) + 1)
            for j, i in rng.integers(0, n, size=(rng.integers(0, 2 * n), 2))
            if j != i
        }
        inter = DirectedGraph(n, frozenset(edges), allow_self_loops=False)
        # random partition into up to 3 clusters
        labels = rng.integers(0, 3, size=n)
        clusters = tuple(
            tuple(v + 1 for v in np.flatnonzero(labels == k)) for k in range(3)
        )
        clusters = tuple(c for c in clusters if c)
        part = ClusterPartition(clusters)
        quotient, _, _ = cluster_interconnection(part, inter)
        for kj, ki in quotient.edges:
            assert any(
                part.cluster_of(j) == kj and part.cluster_of(i) == ki
                for j, i in inter.edges
            )
        for j, i in inter.edges:
            kj, ki = part.cluster_of(j), part.cluster_of(i)
            if kj != ki:
                assert (kj, ki) in quotient.edges


def _kahn_is_acyclic(graph: DirectedGraph) -> bool:
    indeg = {v: 0 for v in range(1, graph.n + 1)}
    for _, i in graph.edges:
        indeg[i] += 1
    queue = [v for v, d in indeg.items() if d == 0]
    seen = 0
    adj = graph.adjacency()
    while queue:
        v = queue.pop()
        seen += 1
        for w in adj[v]:
            indeg[w] -= 1
            if indeg[w] == 0:
                queue.append(w)
    return seen == graph.n


def test_cycle_detection_agrees_with_kahn():
    rng = np.random.default_rng(23)
    for _ in range(200):
        n = int(rng.integers(2, 12))
        m = int(rng.integers(0, 3 * n))
        edges = set()
        for _ in range(m):
            j, i = rng.integers(1, n + 1, size=2)
            if j != i:
                edges.add((int(j), int(i)))
        graph = DirectedGraph(n, frozenset(edges))
        part = ClusterPartition(tuple((v,) for v in range(1, n + 1)))
        _, acyclic, witness = cluster_interconnection(part, graph)
        assert acyclic == _kahn_is_acyclic(graph)
        assert (witness is None) == acyclic


def test_partition_is_maximal():
    # merging any two clusters must not be connected in the task graph
    formulas = formulas_like_example()
    g = build_task_graph(formulas, 3)
    part = maximal_clusters(g)
    undirected = {frozenset(e) for e in g.edges}
    for a in range(len(part)):
        for b in range(a + 1, len(part)):
            cross = [
                frozenset((i, j))
                for i in part.clusters[a]
                for j in part.clusters[b]
            ]
            assert not any(e in undirected for e in cross)


def test_initial_clusters_nonempty_on_dag():
    rng = np.random.default_rng(31)
    for _ in range(50):
        n = int(rng.integers(2, 10))
        # random DAG: edges only forward
        edges = {
            (int(j), int(i))
            for j in range(1, n + 1)
            for i in range(j + 1, n + 1)
            if rng.random() < 0.3
        }
        formulas = {i: parse_formula(f"G[0,1] (x{i} <= 0)") for i in range(1, n + 1)}
        topo = build_topology(
            formulas, DirectedGraph(n, frozenset(edges), allow_self_loops=False), []
        )
        assert topo.acyclic
        assert topo.initial_clusters


def test_check_assumptions_pass_and_fail():
    formulas = formulas_like_example()
    inter = DirectedGraph(3, frozenset({(3, 1)}), allow_self_loops=False)
    topo = build_topology(formulas, inter, [(1, 2)])
    report = check_assumptions(topo)
    assert report.communication_covers_tasks
    assert report.task_graph_acyclic
    assert report.neighbor_sets_disjoint
    assert report.initial_agents == (2, 3)

    # drop the communication edge covering the task dependency
    topo2 = build_topology(formulas, inter, [])
    report2 = check_assumptions(topo2)
    assert not report2.communication_covers_tasks
    assert report2.missing_communication == ((1, 2),)

    # 2-cycle in the task graph
    formulas3 = {
        1: parse_formula("G[0,1] (norm2(x1 - x2) <= 3)"),
        2: parse_formula("G[0,1] (norm2(x2 - x1) <= 3)"),
    }
    topo3 = build_topology(
        formulas3, DirectedGraph(2, frozenset(), allow_self_loops=False), [(1, 2)]
    )
    report3 = check_assumptions(topo3)
    assert not report3.task_graph_acyclic
    assert report3.task_cycle is not None

    # adversarial neighbor inside the cluster
    inter4 = DirectedGraph(2, frozenset({(1, 2)}), allow_self_loops=False)
    topo4 = build_topology(formulas3, inter4, [(1, 2)])
    report4 = check_assumptions(topo4)
    assert not report4.neighbor_sets_disjoint
    assert (1, 2) in report4.overlapping_neighbors
