"""Backend cross-checks: numpy fallback vs compiled core vs reference law."""

import numpy as np
import pytest

from stlagc._kernels import (
    HAVE_COMPILED,
    CompiledCore,
    NumpyCore,
    get_core,
    pack_problem,
)
from stlagc.control import control_input
from stlagc.plant import assemble_cluster
from stlagc.scenario import design_funnels, load_scenario
from stlagc.stl_core import boolean_robust_series

RNG = np.random.default_rng(9)


def _prepared(name):
    scenario = load_scenario({"schema": 1, "builtin": name, "name": name})
    funnels = design_funnels(scenario)
    problem = pack_problem(scenario.system, scenario.formulas, funnels)
    return scenario, funnels, problem


@pytest.fixture(scope="module")
def robot_setup():
    return _prepared("robot_network")


def test_compiled_extension_importable():
    assert HAVE_COMPILED, "the compiled kernel should be built in this checkout"


def test_task_values_match_smooth_robustness(robot_setup):
    scenario, _, problem = robot_setup
    core = NumpyCore(problem)
    layout = scenario.system.layout
    for _ in range(10):
        x = scenario.system.x0 + RNG.normal(0, 1, 15)
        rho = core.task_values(x)
        for k, i in enumerate(sorted(scenario.formulas)):
            expect = boolean_robust_series(
                scenario.formulas[i].body, x[None, :], mode="smooth", layout=layout
            )[0]
            assert rho[k] == pytest.approx(expect, rel=1e-12)


@pytest.mark.skipif(not HAVE_COMPILED, reason="extension not built")
def test_backends_agree(robot_setup):
    scenario, _, problem = robot_setup
    py, cy = NumpyCore(problem), CompiledCore(problem)
    for _ in range(25):
        x = scenario.system.x0 + RNG.normal(0, 0.8, 15)
        t = float(RNG.uniform(0, 55))
        u1, c1 = py.controls(x, t)
        u2, c2 = cy.controls(x, t)
        d1, k1 = py.rhs(x, t)
        d2, k2 = cy.rhs(x, t)
        assert c1 == c2 and k1 == k2
        assert np.allclose(u1, u2, rtol=1e-12, atol=1e-13)
        assert np.allclose(d1, d2, rtol=1e-12, atol=1e-13)


def test_packed_controls_match_reference_law(robot_setup):
    scenario, funnels, problem = robot_setup
    system = scenario.system
    core = NumpyCore(problem)
    layout = system.layout
    for _ in range(10):
        x = system.x0 + RNG.normal(0, 0.5, 15)
        t = float(RNG.uniform(0, 50))
        u, _ = core.controls(x, t)
        for members in scenario.topology.partition.clusters:
            cluster = assemble_cluster(system, members)
            x_bar = np.concatenate([x[layout.agent_slice(i)] for i in members])
            out = control_input(
                cluster,
                {i: scenario.formulas[i] for i in members},
                {i: funnels[i] for i in members},
                x_bar, t,
            )
            for i in members:
                got = u[3 * (i - 1) : 3 * i]
                assert np.allclose(got, out.per_agent[i], rtol=1e-9, atol=1e-11)


def test_rhs_assembles_dynamics_plus_control(robot_setup):
    scenario, _, problem = robot_setup
    system = scenario.system
    core = get_core(problem)
    for _ in range(5):
        x = system.x0 + RNG.normal(0, 0.5, 15)
        t = float(RNG.uniform(0, 50))
        u, _ = core.controls(x, t)
        dx, _ = core.rhs(x, t)
        expect = system.derivative(
            x, {i: u[3 * (i - 1) : 3 * i] for i in range(1, 6)}
        )
        assert np.allclose(dx, expect, rtol=1e-10, atol=1e-12)


def test_room_backends_agree_small():
    # a 12-room ring exercises the same code paths as the full building
    scenario = load_scenario(
        {"schema": 1, "builtin": "room_building",
         "builtin_params": {"n_rooms": 12}, "name": "room12"}
    )
    funnels = design_funnels(scenario)
    problem = pack_problem(scenario.system, scenario.formulas, funnels)
    py = NumpyCore(problem)
    cy = CompiledCore(problem) if HAVE_COMPILED else py
    for _ in range(10):
        x = scenario.system.x0 + RNG.normal(0, 0.5, 12)
        t = float(RNG.uniform(0, 30))
        d1, _ = py.rhs(x, t)
        d2, _ = cy.rhs(x, t)
        assert np.allclose(d1, d2, rtol=1e-12, atol=1e-13)


def test_no_tasks_packs_to_open_loop():
    scenario = load_scenario(
        {"schema": 1, "builtin": "robot_network", "name": "r"}
    )
    problem = pack_problem(scenario.system, {}, {})
    core = get_core(problem)
    x = scenario.system.x0
    u, clamped = core.controls(x, 0.0)
    assert np.allclose(u, 0.0) and clamped == 0
    dx, _ = core.rhs(x, 0.0)
    assert np.allclose(dx, scenario.system.derivative(x, {}), atol=1e-14)


def test_clamp_counting(robot_setup):
    scenario, funnels, problem = robot_setup
    core = get_core(problem)
    # blowing the states apart puts every task far below its funnel
    x = scenario.system.x0 * 1e6
    _, clamped = core.rhs(x, 0.0)
    assert clamped == problem.n_tasks
