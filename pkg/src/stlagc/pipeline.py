"""End-to-end orchestration: check, simulate, monitor, report.

The CLI subcommands and the acceptance suite all go through this module,
so a run from a scenario file and a re-monitor from an exported trace
produce verdicts by the same code paths.

Task robustness on trajectories is evaluated over the recorded smooth-mode
body robustness, the quantity the funnels constrain.  The smooth value
lower-bounds the exact min semantics, so a passing verdict here implies
the exact-semantics task holds with at least the same margin.
"""

from __future__ import annotations

import logging
import time as _time
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .contracts import (
    CompositionCertificate,
    Contract,
    Verdict,
    check_composition,
    encode_contracts,
    expand_assumptions,
    monitor_uniform_strong,
    monitor_weak,
)
from .control import AssumptionReport, validate_assumptions
from .funnel import FunnelParams
from .scenario import Scenario, design_funnels_report
from .sim import ClosedLoop, SimConfig, Trajectory, integrate
from .stl_core import CoverageError, temporal_robustness_from_series
from .topology import TopologyReport, check_assumptions as check_topology

__all__ = ["Prepared", "RunReport", "prepare", "simulate", "monitor_run"]

log = logging.getLogger("stlagc.pipeline")

ROBUSTNESS_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class Prepared:
    """Scenario with designed funnels, contracts, and static check results."""

    scenario: Scenario
    funnels: dict[int, FunnelParams]
    contracts: dict[int, Contract]
    topology_report: TopologyReport
    assumption_report: AssumptionReport
    certificate: CompositionCertificate
    design_errors: tuple[tuple[int, str], ...] = ()

    @property
    def passed(self) -> bool:
        return (
            not self.design_errors
            and self.topology_report.all_pass
            and self.assumption_report.all_pass
            and self.certificate.passed
        )

    def as_dict(self) -> dict:
        return {
            "scenario": self.scenario.name,
            "pass": self.passed,
            "topology": self.topology_report.as_dict(),
            "assumptions": self.assumption_report.as_dict(),
            "certificate": self.certificate.as_dict(),
            "funnels": {str(i): f.as_dict() for i, f in sorted(self.funnels.items())},
            "design_errors": [
                {"agent": i, "error": msg} for i, msg in self.design_errors
            ],
        }


def prepare(scenario: Scenario) -> Prepared:
    """Static phase: validate, design funnels, encode and certify contracts."""
    topology = scenario.topology
    topo_report = check_topology(topology)
    assumption_report = validate_assumptions(
        scenario.system, scenario.formulas, topology
    )
    funnels, design_errors = design_funnels_report(scenario)
    if design_errors:
        contracts: dict[int, Contract] = {}
        certificate = CompositionCertificate(
            "Thm1_DAG" if topology.acyclic else "Thm2_cyclic",
            (
                {
                    "name": "funnel_design",
                    "pass": False,
                    "detail": f"design failed for agents "
                    f"{[i for i, _ in design_errors]}",
                },
            ),
            (),
        )
    else:
        contracts = encode_contracts(scenario.formulas, funnels, topology)
        certificate = check_composition(
            contracts, topology, scenario.system.x0, scenario.system.layout
        )
    return Prepared(
        scenario, funnels, contracts, topo_report, assumption_report, certificate,
        tuple(design_errors),
    )


def _check_horizon(prepared: Prepared, horizon: float):
    for i, phi in sorted(prepared.scenario.formulas.items()):
        end = phi.window_end(0.0)
        if horizon < end - 1e-9:
            raise CoverageError(
                f"horizon {horizon} does not cover the window of agent {i}'s "
                f"task (needs {end})"
            )


def simulate(
    prepared: Prepared,
    cfg: SimConfig | None = None,
    backend: str | None = None,
) -> tuple[Trajectory, float]:
    """Integrate the closed loop; returns (trajectory, wall seconds)."""
    scenario = prepared.scenario
    defaults = scenario.sim_defaults
    if cfg is None:
        if "horizon" not in defaults:
            raise ValueError("scenario has no horizon; pass a SimConfig")
        cfg = SimConfig(
            dt=defaults.get("dt", 0.005),
            horizon=defaults["horizon"],
            record_stride=defaults.get("record_stride", 1),
            substeps=defaults.get("substeps", 1),
        )
    _check_horizon(prepared, cfg.horizon)
    loop = ClosedLoop(scenario.system, scenario.formulas, prepared.funnels, backend)
    start = _time.perf_counter()
    traj = integrate(loop, cfg)
    wall = _time.perf_counter() - start
    log.info("simulated %s for %.6g time units in %.3f s", scenario.name,
             cfg.horizon, wall)
    return traj, wall


@dataclass(frozen=True, eq=False)
class RunReport:
    """Everything a run verdict needs: per-task robustness and monitors."""

    tasks: tuple[dict, ...]
    weak: dict[int, Verdict]
    uniform_strong: dict[int, Verdict]
    expanded_weak: dict[int, Verdict]
    containment: dict[int, bool]
    clamp_events: int
    eps: float
    delta: float
    wall_seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return (
            all(t["satisfied"] for t in self.tasks)
            and all(v.satisfied for v in self.weak.values())
            and all(v.satisfied for v in self.uniform_strong.values())
            and all(v.satisfied for v in self.expanded_weak.values())
            and all(self.containment.values())
            and self.clamp_events == 0
        )

    def as_dict(self) -> dict:
        return {
            "pass": self.passed,
            "tasks": [dict(t) for t in self.tasks],
            "contracts": [
                {
                    "agent": i,
                    "weak": self.weak[i].as_dict(),
                    "uniform_strong": self.uniform_strong[i].as_dict(),
                    "expanded_weak": self.expanded_weak[i].as_dict(),
                    "funnel_containment": self.containment[i],
                }
                for i in sorted(self.weak)
            ],
            "clamp_events": self.clamp_events,
            "eps": self.eps,
            "delta": self.delta,
            "wall_seconds": self.wall_seconds,
        }


def monitor_run(
    prepared: Prepared,
    traj: Trajectory,
    eps: float | None = None,
    delta: float | None = None,
    wall_seconds: float = 0.0,
) -> RunReport:
    """All trajectory-level verdicts for one run.

    Uniform-strong satisfaction is checked both directly with a delta
    shift (default 10 grid steps) and via the epsilon-expanded weak check
    (default eps: 5% of the narrowest asymptotic funnel width).
    """
    funnels = prepared.funnels
    if eps is None:
        eps = 0.05 * min(f.gamma_inf for f in funnels.values())
    if delta is None:
        delta = 10.0 * traj.dt

    tasks = []
    for i, phi in sorted(prepared.scenario.formulas.items()):
        value, witness = temporal_robustness_from_series(
            phi, traj.times, traj.rho_series(i), t=0.0
        )
        r = funnels[i].r
        tasks.append(
            {
                "agent": i,
                "robustness": value,
                "r": r,
                "satisfied": bool(value >= r - ROBUSTNESS_TOL),
                "witness_t": witness,
            }
        )

    weak, strong, expanded, containment = {}, {}, {}, {}
    for i, contract in sorted(prepared.contracts.items()):
        weak[i] = monitor_weak(traj, contract)
        strong[i] = monitor_uniform_strong(traj, contract, delta)
        expanded[i] = monitor_weak(traj, expand_assumptions(contract, eps))
        containment[i] = bool(np.all(traj.containment_series(i)))

    return RunReport(
        tasks=tuple(tasks),
        weak=weak,
        uniform_strong=strong,
        expanded_weak=expanded,
        containment=containment,
        clamp_events=traj.clamp_stage_count,
        eps=eps,
        delta=delta,
        wall_seconds=wall_seconds,
    )
