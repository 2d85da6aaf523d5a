import math

import numpy as np
import pytest

from stlagc.control import control_input, control_input_matrix, validate_assumptions
from stlagc.funnel import FunnelParams
from stlagc.parsing import parse_formula
from stlagc.plant import (
    assemble_cluster,
    build_robot_network,
    single_integrator,
    MultiAgentSystem,
)
from stlagc.scenario import load_scenario
from stlagc.topology import DirectedGraph

RNG = np.random.default_rng(8)


def scalar_cluster():
    system = MultiAgentSystem(
        (single_integrator(1, 1),),
        DirectedGraph(1, frozenset(), allow_self_loops=False),
        frozenset(),
        np.array([3.0]),
    )
    return assemble_cluster(system, (1,))


def test_hand_evaluated_control_chain():
    # rho = 10 - (x-5)^2, rho_max = 9, constant gamma = 4, x = 3:
    # e = -3, e_hat = -0.75, eps = -ln 3, J = 4/3, d rho/dx = 4, g = 1
    cluster = scalar_cluster()
    import stlagc.stl_core as core

    body = core.BooleanFormula((
        core.Literal(core.PredicateSpec(
            core.PredicateFamily.CONCAVE_QUADRATIC, ((1, 0),),
            c=np.array([5.0]), d=10.0, Q=np.array([[1.0]]),
        )),
    ))
    phi = core.TemporalFormula(core.TemporalOp.ALWAYS, (0.0, 1.0), body)
    funnel = FunnelParams(gamma0=4.0, gamma_inf=4.0, l=0.0, rho_max=9.0, r=1.0,
                          t_star=0.0)
    out = control_input(cluster, {1: phi}, {1: funnel}, np.array([3.0]), 0.0)
    expect = -(4.0 * (4.0 / 3.0) * (-math.log(3.0)))
    assert out.per_agent[1][0] == pytest.approx(expect, rel=1e-12)
    assert out.per_agent[1][0] == pytest.approx(5.8592, abs=1e-4)
    es = out.error_states[1]
    assert es.e_hat == pytest.approx(-0.75)
    assert es.jacobian == pytest.approx(1.0 / 0.75)


def test_zero_transformed_error_gives_zero_input():
    cluster = scalar_cluster()
    import stlagc.stl_core as core

    body = core.BooleanFormula((
        core.Literal(core.PredicateSpec(
            core.PredicateFamily.LINEAR, ((1, 0),), c=np.array([1.0]), d=0.0,
        )),
    ))
    phi = core.TemporalFormula(core.TemporalOp.ALWAYS, (0.0, 1.0), body)
    funnel = FunnelParams(gamma0=2.0, gamma_inf=2.0, l=0.0, rho_max=4.0, r=1.0,
                          t_star=0.0)
    # rho(x) = x = 3 -> e = -1, e_hat = -0.5 -> eps = 0
    out = control_input(cluster, {1: phi}, {1: funnel}, np.array([3.0]), 0.0)
    assert out.per_agent[1][0] == 0.0


def _robot_setup():
    scenario = load_scenario(
        {"schema": 1, "builtin": "robot_network", "name": "r"}
    )
    from stlagc.scenario import design_funnels

    funnels = design_funnels(scenario)
    return scenario, funnels


def test_task_involvement_structure():
    scenario, funnels = _robot_setup()
    system = scenario.system
    cluster = assemble_cluster(system, (1, 2, 3))
    layout = system.layout
    x = system.x0 + RNG.normal(0, 0.2, 15)
    x_bar = np.concatenate([x[layout.agent_slice(i)] for i in (1, 2, 3)])
    tasks = {i: scenario.formulas[i] for i in (1, 2, 3)}
    fns = {i: funnels[i] for i in (1, 2, 3)}
    out_full = control_input(cluster, tasks, fns, x_bar, 1.0)
    # dropping the task of agent 3 must not change u_1 or u_2: they are not
    # involved in it, so their gradient blocks are structurally zero
    out_no3 = control_input(
        cluster, {1: tasks[1], 2: tasks[2]}, {1: fns[1], 2: fns[2]}, x_bar, 1.0
    )
    assert np.allclose(out_full.per_agent[1], out_no3.per_agent[1])
    assert np.allclose(out_full.per_agent[2], out_no3.per_agent[2])
    assert not np.allclose(out_full.per_agent[3], out_no3.per_agent[3])


def test_matrix_form_matches_sum_form():
    scenario, funnels = _robot_setup()
    system = scenario.system
    layout = system.layout
    for members in ((1, 2, 3), (4, 5)):
        cluster = assemble_cluster(system, members)
        tasks = {i: scenario.formulas[i] for i in members}
        fns = {i: funnels[i] for i in members}
        for _ in range(10):
            x = system.x0 + RNG.normal(0, 0.5, 15)
            t = float(RNG.uniform(0, 50))
            x_bar = np.concatenate([x[layout.agent_slice(i)] for i in members])
            out = control_input(cluster, tasks, fns, x_bar, t)
            mat = control_input_matrix(cluster, tasks, fns, x_bar, t)
            assert np.allclose(out.u_bar, mat, rtol=1e-10, atol=1e-13)


def test_locality_across_clusters():
    # perturbing a state outside the cluster leaves the input bit-identical
    scenario, funnels = _robot_setup()
    system = scenario.system
    layout = system.layout
    cluster = assemble_cluster(system, (1, 2, 3))
    tasks = {i: scenario.formulas[i] for i in (1, 2, 3)}
    fns = {i: funnels[i] for i in (1, 2, 3)}
    x = system.x0 + RNG.normal(0, 0.2, 15)
    x_bar = np.concatenate([x[layout.agent_slice(i)] for i in (1, 2, 3)])
    out1 = control_input(cluster, tasks, fns, x_bar, 2.0)
    # the cluster state is all the controller sees; same x_bar -> same u
    out2 = control_input(cluster, tasks, fns, x_bar.copy(), 2.0)
    for i in (1, 2, 3):
        assert np.array_equal(out1.per_agent[i], out2.per_agent[i])


def test_cross_cluster_task_asserts():
    scenario, funnels = _robot_setup()
    system = scenario.system
    cluster = assemble_cluster(system, (4, 5))
    with pytest.raises(AssertionError, match="non-members"):
        control_input(
            cluster, {1: scenario.formulas[1]}, {1: funnels[1]},
            np.zeros(6), 0.0,
        )


def test_validate_assumptions_robot_case():
    scenario, _ = _robot_setup()
    report = validate_assumptions(
        scenario.system, scenario.formulas, scenario.topology
    )
    assert report.all_pass, report.failures()


def test_validate_assumptions_flags_task_cycle_and_unbounded_body():
    formulas = {
        1: parse_formula("G[0,1] (norm2(x1 - x2) <= 3)"),
        2: parse_formula("G[0,1] (x2 - x1 <= 3)"),  # linear-only: unbounded
    }
    system = MultiAgentSystem(
        (single_integrator(1, 1), single_integrator(2, 1)),
        DirectedGraph(2, frozenset(), allow_self_loops=False),
        frozenset([frozenset((1, 2))]),
        np.array([0.0, 1.0]),
    )
    from stlagc.topology import build_topology

    topo = build_topology(formulas, system.interconnection, [(1, 2)])
    report = validate_assumptions(system, formulas, topo)
    names = {(e["name"], e["agent"]): e["pass"] for e in report.entries}
    assert not names[("task_graph_acyclic", None)]
    assert not names[("well_posed", 2)]
    assert not report.all_pass
