"""Closed-form distributed controller and plant/task assumption checks.

Every agent of a cluster applies

    u_i = -g_i(x_i)^T  sum_j  (d rho_j / d x_i)  J_j  eps_j,

summing over the cluster's tasks: each task pulls every involved agent
along its robustness gradient, scaled by the funnel gain J and the
transformed error eps.  Agents outside a task's involved set contribute
a zero gradient block and receive nothing from it.

This module holds the readable per-cluster reference implementation used
by the tests; the simulator runs the equivalent packed kernels.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .funnel import ErrorState, FunnelParams, error_chain
from .plant import ClusterSystem, DynamicsFamily, MultiAgentSystem
from .stl_core import (
    GRADIENT_FLOOR,
    ConcavityError,
    ConvergenceError,
    TemporalFormula,
    grad_boolean_robust,
    rho_opt,
)
from .topology import CompositionTopology, check_assumptions as check_topology

__all__ = [
    "ControlOutput",
    "control_input",
    "control_input_matrix",
    "AssumptionReport",
    "validate_assumptions",
]

log = logging.getLogger("stlagc.control")


@dataclass(frozen=True)
class ControlOutput:
    u_bar: np.ndarray
    per_agent: dict[int, np.ndarray]
    error_states: dict[int, ErrorState]
    degenerate_tasks: tuple[int, ...]


def control_input(
    cluster: ClusterSystem,
    tasks: Mapping[int, TemporalFormula],
    funnels: Mapping[int, FunnelParams],
    x_bar: np.ndarray,
    t: float,
) -> ControlOutput:
    """Evaluate the cluster's distributed control law at (x_bar, t).

    ``tasks`` and ``funnels`` are keyed by the owning member id.  Tasks
    may only involve cluster members; anything else means the dependency
    clusters were not maximal, which is a construction bug.
    """
    layout = cluster.layout
    x_bar = np.asarray(x_bar, dtype=float)
    members = cluster.members
    pull = {i: np.zeros(layout.dim(i)) for i in members}
    error_states: dict[int, ErrorState] = {}
    degenerate: list[int] = []
    for j in sorted(tasks):
        phi = tasks[j]
        outside = set(phi.involved_agents) - set(members)
        if outside:
            raise AssertionError(
                f"task of agent {j} involves non-members {sorted(outside)}; "
                "dependency clusters must contain every involved agent"
            )
        grad = grad_boolean_robust(phi.body, x_bar, layout=layout)
        es = error_chain(grad.value, funnels[j], t)
        error_states[j] = es
        weight = es.jacobian * es.epsilon
        if j in grad.degenerate_agents:
            degenerate.append(j)
        for i in phi.involved_agents:
            pull[i] += weight * grad.agent_blocks[i]
    per_agent = {}
    chunks = []
    for agent in cluster.agents:
        i = agent.agent_id
        xi = x_bar[layout.agent_slice(i)]
        ui = -agent.g(xi).T @ pull[i]
        per_agent[i] = ui
        chunks.append(ui)
    return ControlOutput(
        np.concatenate(chunks) if chunks else np.empty(0),
        per_agent,
        error_states,
        tuple(degenerate),
    )


def control_input_matrix(
    cluster: ClusterSystem,
    tasks: Mapping[int, TemporalFormula],
    funnels: Mapping[int, FunnelParams],
    x_bar: np.ndarray,
    t: float,
) -> np.ndarray:
    """Stacked form -g_bar^T Lambda J eps; cross-checks the per-agent sum.

    Lambda has one column per cluster task holding the task's robustness
    gradient over the stacked cluster state.
    """
    layout = cluster.layout
    x_bar = np.asarray(x_bar, dtype=float)
    owners = sorted(tasks)
    Lam = np.zeros((layout.total_dim, len(owners)))
    Jeps = np.zeros(len(owners))
    for col, j in enumerate(owners):
        grad = grad_boolean_robust(tasks[j].body, x_bar, layout=layout)
        es = error_chain(grad.value, funnels[j], t)
        Lam[:, col] = grad.gradient
        Jeps[col] = es.jacobian * es.epsilon
    return -cluster.g_bar(x_bar).T @ (Lam @ Jeps)


# ---------------------------------------------------------------------------
# assumption validation


@dataclass(frozen=True)
class AssumptionReport:
    entries: tuple[dict, ...]

    @property
    def all_pass(self) -> bool:
        """True when no error-severity check failed (warnings tolerated)."""
        return not self.failures()

    def failures(self) -> list[dict]:
        return [
            e for e in self.entries
            if not e["pass"] and e.get("severity", "error") == "error"
        ]

    def warnings(self) -> list[dict]:
        return [
            e for e in self.entries
            if not e["pass"] and e.get("severity") == "warning"
        ]

    def as_dict(self) -> dict:
        return {"pass": self.all_pass, "checks": [dict(e) for e in self.entries]}


def _sample_states(agent, x0_i: np.ndarray, rng: np.random.Generator, count: int):
    """Operating-box samples for the input-matrix definiteness check."""
    box = np.repeat(5.0, agent.n)
    samples = x0_i + rng.uniform(-box, box, size=(count, agent.n))
    if agent.family is DynamicsFamily.OMNI_ROBOT:
        samples[:, 2] = rng.uniform(-np.pi, np.pi, size=count)
    return samples


def validate_assumptions(
    system: MultiAgentSystem,
    formulas: Mapping[int, TemporalFormula],
    topology: CompositionTopology,
    n_samples: int = 100,
    seed: int = 0,
) -> AssumptionReport:
    """Static checks behind the controller's correctness argument.

    Per task: body concavity, well-posedness, a positive global optimum,
    and a nonzero own-state gradient at the initial state.  Per agent:
    positive-definite g g^T over sampled operating states.  Globally: the
    task dependency graph must be acyclic and adversarial neighbors must
    stay outside each agent's cluster.
    """
    entries: list[dict] = []
    layout = system.layout
    rng = np.random.default_rng(seed)
    degenerate_at_x0: list[int] = []

    for i in sorted(formulas):
        body = formulas[i].body
        concave = body.is_concave
        entries.append(
            {
                "name": "body_concave", "agent": i, "pass": concave,
                "detail": "all literals concave" if concave
                else "negated ball/quadratic literal breaks concavity",
            }
        )
        well_posed = body.is_well_posed()
        entries.append(
            {
                "name": "well_posed", "agent": i, "pass": well_posed,
                "detail": "every read dimension capped by a ball/quadratic"
                if well_posed else "superlevel sets unbounded (no covering ball)",
            }
        )
        if concave:
            try:
                opt = rho_opt(body)
                entries.append(
                    {
                        "name": "optimum_positive", "agent": i,
                        "pass": opt.value > 0,
                        "detail": f"rho_opt = {opt.value:.6g}",
                    }
                )
            except (ConcavityError, ConvergenceError) as exc:
                entries.append(
                    {
                        "name": "optimum_positive", "agent": i, "pass": False,
                        "detail": f"optimum search failed: {exc}",
                    }
                )
        grad = grad_boolean_robust(body, system.x0, layout=layout)
        own_ok = i not in grad.degenerate_agents
        # warning severity: the nonzero-gradient requirement matters along
        # the funnel region, not at one state; tasks that start exactly at
        # their optimum legitimately have a vanishing gradient at t = 0
        entries.append(
            {
                "name": "own_gradient_nonzero", "agent": i, "pass": own_ok,
                "severity": "warning",
                "detail": f"|d rho/d x_{i}| at x0 "
                + ("above" if own_ok else "below")
                + f" floor {GRADIENT_FLOOR}",
            }
        )
        if not own_ok:
            degenerate_at_x0.append(i)

    if degenerate_at_x0:
        log.warning(
            "%d task(s) have an own-state gradient below the floor at x0 "
            "(first: %s); typically tasks starting at their optimum",
            len(degenerate_at_x0), degenerate_at_x0[:5],
        )

    for agent in system.agents:
        x0_i = system.x0[layout.agent_slice(agent.agent_id)]
        min_eig = np.inf
        for xs in _sample_states(agent, x0_i, rng, n_samples):
            G = agent.g(xs)
            min_eig = min(min_eig, float(np.linalg.eigvalsh(G @ G.T).min()))
        entries.append(
            {
                "name": "input_matrix_definite", "agent": agent.agent_id,
                "pass": min_eig > 0,
                "detail": f"min eig(g g^T) over {n_samples} samples = {min_eig:.6g}",
            }
        )

    topo = check_topology(topology)
    entries.append(
        {
            "name": "task_graph_acyclic", "agent": None,
            "pass": topo.task_graph_acyclic,
            "detail": "task dependency graph is a DAG"
            if topo.task_graph_acyclic else f"cycle: {topo.task_cycle}",
        }
    )
    entries.append(
        {
            "name": "neighbor_sets_disjoint", "agent": None,
            "pass": topo.neighbor_sets_disjoint,
            "detail": "adversarial neighbors stay outside clusters"
            if topo.neighbor_sets_disjoint
            else f"overlaps: {topo.overlapping_neighbors}",
        }
    )
    return AssumptionReport(tuple(entries))
