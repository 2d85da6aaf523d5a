#!/usr/bin/env python3
"""Compare the compiled kernel against the numpy fallback.

Times the closed-loop right-hand-side evaluation (the simulation hot
spot) and a short end-to-end integration on both bundled case studies.

    python bench/benchmark_backends.py [--rooms 1000] [--reps 200]
"""

import argparse
import time

import numpy as np

from stlagc._kernels import available_backends, get_core, pack_problem
from stlagc.scenario import design_funnels, load_scenario
from stlagc.sim import ClosedLoop, SimConfig, integrate


def scenario_problem(builtin, **params):
    scenario = load_scenario(
        {"schema": 1, "builtin": builtin, "name": builtin,
         "builtin_params": params}
    )
    funnels = design_funnels(scenario)
    return scenario, funnels


def time_rhs(core, x0, reps):
    rng = np.random.default_rng(1)
    xs = x0 + rng.normal(0, 0.1, size=(min(reps, 32), len(x0)))
    core.rhs(xs[0], 0.0)  # warm up
    start = time.perf_counter()
    for k in range(reps):
        core.rhs(xs[k % len(xs)], 0.01 * k)
    return (time.perf_counter() - start) / reps


def time_run(scenario, funnels, backend, horizon):
    loop = ClosedLoop(scenario.system, scenario.formulas, funnels, backend=backend)
    cfg = SimConfig(
        dt=scenario.sim_defaults.get("dt", 0.005),
        horizon=horizon,
        substeps=scenario.sim_defaults.get("substeps", 1),
    )
    start = time.perf_counter()
    integrate(loop, cfg)
    return time.perf_counter() - start


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--rooms", type=int, default=1000)
    parser.add_argument("--reps", type=int, default=200)
    parser.add_argument("--horizon", type=float, default=2.0,
                        help="closed-loop horizon for the end-to-end timing")
    args = parser.parse_args()

    backends = available_backends()
    print(f"backends: {', '.join(backends)}")
    cases = [
        ("robot_network", {}, {}),
        ("room_building", {"n_rooms": args.rooms}, {}),
    ]
    for builtin, params, _ in cases:
        scenario, funnels = scenario_problem(builtin, **params)
        problem = pack_problem(scenario.system, scenario.formulas, funnels)
        n = scenario.system.n_agents
        print(f"\n{builtin} ({n} agents, {problem.n_tasks} tasks, "
              f"{problem.n_literals} literals)")
        rhs_times = {}
        for backend in backends:
            core = get_core(problem, backend)
            rhs_times[backend] = time_rhs(core, scenario.system.x0, args.reps)
            wall = time_run(scenario, funnels, backend, args.horizon)
            print(f"  {backend:>8}: rhs {rhs_times[backend] * 1e6:9.1f} us   "
                  f"{args.horizon:g}-unit run {wall:7.3f} s")
        if len(rhs_times) == 2:
            speedup = rhs_times["python"] / rhs_times["compiled"]
            print(f"  compiled speedup on rhs: {speedup:.1f}x")


if __name__ == "__main__":
    main()
