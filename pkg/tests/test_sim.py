import math

import numpy as np
import pytest

from stlagc.funnel import FunnelParams
from stlagc.parsing import parse_formula
from stlagc.plant import MultiAgentSystem, linear_agent, single_integrator
from stlagc.scenario import design_funnels, load_scenario
from stlagc.sim import (
    ClosedLoop,
    InitialContainmentError,
    SimConfig,
    Trajectory,
    export_csv,
    integrate,
    read_csv_columns,
    resample,
    trajectory_from_csv,
)
from stlagc.topology import DirectedGraph


def plain_system(agent, x0):
    return MultiAgentSystem(
        (agent,),
        DirectedGraph(1, frozenset(), allow_self_loops=False),
        frozenset(),
        np.atleast_1d(np.asarray(x0, dtype=float)),
    )


def open_loop(system):
    return ClosedLoop(system, {}, {})


def test_zero_dynamics_holds_state():
    system = plain_system(single_integrator(1, 1), [1.0])
    traj = integrate(open_loop(system), SimConfig(dt=0.01, horizon=1.0))
    assert traj.states[-1, 0] == pytest.approx(1.0, abs=0.0)


def test_exponential_decay_oracle():
    system = plain_system(linear_agent(1, A=[[-1.0]], B=[[1.0]]), [1.0])
    traj = integrate(open_loop(system), SimConfig(dt=0.01, horizon=1.0))
    assert traj.states[-1, 0] == pytest.approx(math.exp(-1.0), abs=1e-8)


def test_rk4_order_via_step_halving():
    system = plain_system(linear_agent(1, A=[[-1.0]], B=[[1.0]]), [1.0])
    errs = []
    for dt in (0.02, 0.01):
        traj = integrate(open_loop(system), SimConfig(dt=dt, horizon=1.0))
        errs.append(abs(traj.states[-1, 0] - math.exp(-1.0)))
    ratio = errs[0] / errs[1]
    assert 10.0 <= ratio <= 25.0


def test_determinism_bit_identical():
    scenario = load_scenario(
        {"schema": 1, "builtin": "robot_network", "name": "r"}
    )
    funnels = design_funnels(scenario)
    loop = ClosedLoop(scenario.system, scenario.formulas, funnels)
    cfg = SimConfig(dt=0.01, horizon=2.0, substeps=5)
    a = integrate(loop, cfg)
    b = integrate(loop, cfg)
    assert np.array_equal(a.states, b.states)
    assert np.array_equal(a.inputs, b.inputs)
    assert np.array_equal(a.rho, b.rho)


def test_initial_containment_refusal():
    scenario = load_scenario(
        {"schema": 1, "builtin": "robot_network", "name": "r"}
    )
    funnels = design_funnels(scenario)
    loop = ClosedLoop(scenario.system, scenario.formulas, funnels)
    bad_x0 = scenario.system.x0.copy()
    bad_x0[0] -= 1e4  # robot 1 teleported: task 1 starts below its funnel
    with pytest.raises(InitialContainmentError, match="task 1"):
        integrate(loop, SimConfig(dt=0.01, horizon=1.0), x0=bad_x0)


def test_stage_times_follow_substeps():
    # with substeps the integration step is dt/substeps; on a stiff linear
    # plant this must improve the endpoint error accordingly
    system = plain_system(linear_agent(1, A=[[-30.0]], B=[[1.0]]), [1.0])
    coarse = integrate(open_loop(system), SimConfig(dt=0.1, horizon=1.0))
    fine = integrate(open_loop(system), SimConfig(dt=0.1, horizon=1.0, substeps=10))
    exact = math.exp(-30.0)
    assert abs(fine.states[-1, 0] - exact) < abs(coarse.states[-1, 0] - exact)


def test_resample_and_endpoints():
    system = plain_system(linear_agent(1, A=[[-1.0]], B=[[1.0]]), [1.0])
    traj = integrate(open_loop(system), SimConfig(dt=0.00025, horizon=1.0))
    assert traj.n_samples == 4001
    dec = resample(traj, 10)
    assert dec.n_samples == 401
    assert dec.times[0] == 0.0 and dec.times[-1] == traj.times[-1]
    assert resample(traj, 1) is traj
    with pytest.raises(ValueError, match="stride"):
        resample(traj, 7)


def test_csv_round_trip_bit_exact(tmp_path):
    scenario = load_scenario(
        {"schema": 1, "builtin": "robot_network", "name": "r"}
    )
    funnels = design_funnels(scenario)
    loop = ClosedLoop(scenario.system, scenario.formulas, funnels)
    traj = integrate(loop, SimConfig(dt=0.01, horizon=1.0, substeps=5))
    path = tmp_path / "trace.csv"
    export_csv(traj, path)
    back = trajectory_from_csv(path, scenario.system, funnels)
    assert np.array_equal(back.times, traj.times)
    assert np.array_equal(back.states, traj.states)
    assert np.array_equal(back.inputs, traj.inputs)
    assert np.array_equal(back.rho, traj.rho)
    # funnel-bound columns reproduce the closed form
    cols = read_csv_columns(path)
    tid = traj.task_ids[0]
    assert np.array_equal(cols[f"lower_{tid}"], traj.lower_series(tid))


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(dt=0.0, horizon=1.0)
    with pytest.raises(ValueError):
        SimConfig(dt=0.01, horizon=0.015)  # not a multiple
    with pytest.raises(ValueError):
        SimConfig(dt=0.01, horizon=1.0, record_stride=7)  # does not divide
    with pytest.raises(ValueError):
        SimConfig(dt=0.01, horizon=1.0, substeps=0)


def test_containment_series_and_margin():
    from conftest import make_rho_trajectory

    p = FunnelParams(gamma0=2.0, gamma_inf=2.0, l=0.0, rho_max=1.0, r=0.2,
                     t_star=0.0)
    # band is (-1, 1); the last two samples leave it on either side
    traj = make_rho_trajectory({1: [0.5, 0.0, -0.999, 1.2, -3.0]}, {1: p})
    held = traj.containment_series(1)
    assert list(held) == [True, True, True, False, False]
    margin = traj.containment_margin(1)
    assert margin[0] == pytest.approx(0.5)
    assert margin[3] == pytest.approx(-0.2)
