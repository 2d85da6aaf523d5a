"""Assume-guarantee contracts encoded from task funnels, plus monitors.

Each agent's contract says: *provided every adversarial neighbor keeps its
own task robustness inside its funnel, I keep mine inside mine.*  Both
sides are funnel conditions on per-task robustness signals, so monitoring
a trajectory reduces to checking per-sample containment series.

Weak satisfaction requires the guarantee to hold as long as the
assumptions have held; uniform-strong satisfaction extends the guarantee
a fixed extra delta beyond that, which is the notion needed when the
cluster coupling graph has cycles.  Widening the assumption funnels by
epsilon gives the practical route from weak to uniform-strong verdicts
on sampled trajectories.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Mapping

import numpy as np

from .funnel import FunnelParams
from .sim import Trajectory
from .stl_core import (
    BooleanFormula,
    StateLayout,
    TemporalFormula,
    boolean_robust_series,
)
from .topology import CompositionTopology

__all__ = [
    "ContractClause",
    "Contract",
    "Verdict",
    "CompositionCertificate",
    "encode_contracts",
    "clause_holds",
    "monitor_weak",
    "monitor_uniform_strong",
    "monitor_cluster_weak",
    "monitor_cluster_uniform_strong",
    "expand_assumptions",
    "check_composition",
]


@dataclass(frozen=True, eq=False)
class ContractClause:
    """One funnel condition: keep task ``task_owner``'s robustness inside
    (lower - eps, upper + eps) for all time."""

    task_owner: int
    funnel: FunnelParams
    body: BooleanFormula
    involved: tuple[int, ...]
    eps: float = 0.0

    def widened(self, eps: float) -> "ContractClause":
        return replace(self, eps=self.eps + eps)


@dataclass(frozen=True, eq=False)
class Contract:
    """Agent contract: assumption clauses keyed by adversarial neighbor,
    guarantee clause over the agent's own task."""

    agent: int
    assumptions: dict[int, ContractClause]
    guarantee: ContractClause


@dataclass(frozen=True)
class Verdict:
    agent: int
    satisfied: bool
    first_violation: tuple[float, str] | None
    margin: float

    def as_dict(self) -> dict:
        fv = None
        if self.first_violation is not None:
            fv = {"t": self.first_violation[0], "kind": self.first_violation[1]}
        return {
            "agent": self.agent,
            "satisfied": self.satisfied,
            "first_violation": fv,
            "margin": None if math.isinf(self.margin) else self.margin,
        }


def encode_contracts(
    formulas: Mapping[int, TemporalFormula],
    funnels: Mapping[int, FunnelParams],
    topology: CompositionTopology,
) -> dict[int, Contract]:
    """Contract per agent: neighbors' guarantee funnels become assumptions.

    By construction the assumption an agent makes about a neighbor is
    exactly that neighbor's guarantee, which is the matching condition the
    composition theorems require.
    """

    def clause(owner: int) -> ContractClause:
        if owner not in funnels:
            raise KeyError(f"no funnel designed for agent {owner}")
        phi = formulas[owner]
        return ContractClause(owner, funnels[owner], phi.body, phi.involved_agents)

    contracts = {}
    for i in sorted(formulas):
        assumptions = {
            j: clause(j) for j in topology.adversarial_neighbors(i)
        }
        contracts[i] = Contract(i, assumptions, clause(i))
    return contracts


def expand_assumptions(c: Contract, eps: float) -> Contract:
    """Widen every assumption funnel by eps on both sides (guarantee fixed)."""
    if eps < 0:
        raise ValueError("expansion must be nonnegative")
    return Contract(
        c.agent,
        {j: cl.widened(eps) for j, cl in c.assumptions.items()},
        c.guarantee,
    )


# ---------------------------------------------------------------------------
# trajectory monitors


def clause_holds(traj: Trajectory, clause: ContractClause) -> np.ndarray:
    """Per-sample strict containment of the clause's robustness signal."""
    if clause.task_owner not in traj.task_ids:
        raise ValueError(f"trajectory carries no task of agent {clause.task_owner}")
    rho = traj.rho_series(clause.task_owner)
    lo = clause.funnel.lower(traj.times) - clause.eps
    hi = clause.funnel.upper(traj.times) + clause.eps
    return (rho > lo) & (rho < hi)


def _first_false(series: np.ndarray) -> int:
    """Index of the first False, or len(series) when all True."""
    bad = np.flatnonzero(~series)
    return int(bad[0]) if bad.size else len(series)


def _guarantee_margin(traj: Trajectory, clause: ContractClause) -> np.ndarray:
    rho = traj.rho_series(clause.task_owner)
    lo = clause.funnel.lower(traj.times) - clause.eps
    hi = clause.funnel.upper(traj.times) + clause.eps
    return np.minimum(hi - rho, rho - lo)


def _verdict(
    traj: Trajectory,
    agent: int,
    assumption_series: Mapping[int, np.ndarray],
    guarantee_series: np.ndarray,
    guarantee_margin: np.ndarray,
    shift: int = 0,
) -> Verdict:
    """Common monitor logic.

    ``shift`` is the uniform-strong sample shift (0 for weak): the
    guarantee must hold up to ``shift`` samples beyond the last time the
    assumptions held, clipped to the horizon.
    """
    n = traj.n_samples
    a_idx = n
    a_agent = None
    for j in sorted(assumption_series):
        idx = _first_false(assumption_series[j])
        if idx < a_idx:
            a_idx, a_agent = idx, j
    g_idx = _first_false(guarantee_series)
    required = 0 if a_idx == 0 else min(a_idx + shift, n)
    satisfied = g_idx >= required

    if not satisfied:
        first = (float(traj.times[g_idx]), "guarantee_break")
    elif a_idx < n:
        first = (float(traj.times[a_idx]), f"assumption_break_{a_agent}")
    elif g_idx < n:
        first = (float(traj.times[g_idx]), "guarantee_break")
    else:
        first = None

    if satisfied:
        window = guarantee_margin[:required]
        margin = float(window.min()) if window.size else math.inf
    else:
        margin = float(guarantee_margin.min())
    return Verdict(agent, satisfied, first, margin)


def monitor_weak(traj: Trajectory, c: Contract) -> Verdict:
    """Weak satisfaction on the recorded grid.

    Satisfied iff the guarantee holds at every sample up to (and
    including) the last sample at which all assumptions have held so far.
    A guarantee break strictly after the assumptions first fail does not
    count against the agent.
    """
    a = {j: clause_holds(traj, cl) for j, cl in c.assumptions.items()}
    g = clause_holds(traj, c.guarantee)
    return _verdict(traj, c.agent, a, g, _guarantee_margin(traj, c.guarantee))


def monitor_uniform_strong(traj: Trajectory, c: Contract, delta: float) -> Verdict:
    """Uniform-strong satisfaction with a fixed delta, checked directly.

    ``delta`` must be a positive multiple of the grid step; the guarantee
    window extends ``delta`` beyond every prefix on which the assumptions
    hold (clipped to the horizon).
    """
    dt = traj.dt
    if delta < dt - 1e-12 * max(1.0, dt):
        raise ValueError(f"delta={delta} is smaller than the grid step {dt}")
    shift = round(delta / dt)
    if abs(shift * dt - delta) > 1e-6 * max(dt, delta):
        raise ValueError(f"delta={delta} is not a multiple of the grid step {dt}")
    a = {j: clause_holds(traj, cl) for j, cl in c.assumptions.items()}
    g = clause_holds(traj, c.guarantee)
    return _verdict(traj, c.agent, a, g, _guarantee_margin(traj, c.guarantee), shift)


def _cluster_series(
    traj: Trajectory, contracts: Mapping[int, Contract], members: Iterable[int]
):
    members = sorted(members)
    assumptions: dict[int, np.ndarray] = {}
    for i in members:
        for j, cl in contracts[i].assumptions.items():
            held = clause_holds(traj, cl)
            assumptions[j] = assumptions[j] & held if j in assumptions else held
    g = np.ones(traj.n_samples, dtype=bool)
    margin = np.full(traj.n_samples, np.inf)
    for i in members:
        g &= clause_holds(traj, contracts[i].guarantee)
        margin = np.minimum(margin, _guarantee_margin(traj, contracts[i].guarantee))
    return assumptions, g, margin


def monitor_cluster_weak(
    traj: Trajectory, contracts: Mapping[int, Contract], members: Iterable[int]
) -> Verdict:
    """Cluster-level weak verdict: product of member assumptions implies
    the intersection of member guarantees."""
    members = sorted(members)
    a, g, margin = _cluster_series(traj, contracts, members)
    return _verdict(traj, members[0], a, g, margin)


def monitor_cluster_uniform_strong(
    traj: Trajectory,
    contracts: Mapping[int, Contract],
    members: Iterable[int],
    delta: float,
) -> Verdict:
    members = sorted(members)
    dt = traj.dt
    shift = round(delta / dt)
    if shift < 1 or abs(shift * dt - delta) > 1e-6 * max(dt, delta):
        raise ValueError(f"delta={delta} must be a positive multiple of {dt}")
    a, g, margin = _cluster_series(traj, contracts, members)
    return _verdict(traj, members[0], a, g, margin, shift)


# ---------------------------------------------------------------------------
# composition certificate


def _bodies_match(a: BooleanFormula, b: BooleanFormula) -> bool:
    if a is b:
        return True
    if len(a.literals) != len(b.literals):
        return False
    for la, lb in zip(a.literals, b.literals):
        pa, pb = la.predicate, lb.predicate
        if (
            la.negated != lb.negated
            or pa.family is not pb.family
            or pa.selector != pb.selector
            or pa.d != pb.d
            or not np.array_equal(pa.c, pb.c)
        ):
            return False
        for left, right in ((pa.S, pb.S), (pa.Q, pb.Q)):
            if (left is None) != (right is None):
                return False
            if left is not None and not np.array_equal(left, right):
                return False
    return True


def _clauses_match(assumption: ContractClause, guarantee: ContractClause) -> bool:
    return (
        assumption.task_owner == guarantee.task_owner
        and assumption.eps == 0.0
        and assumption.funnel == guarantee.funnel
        and _bodies_match(assumption.body, guarantee.body)
    )


@dataclass(frozen=True)
class CompositionCertificate:
    theorem_used: str  # "Thm1_DAG" | "Thm2_cyclic"
    conditions: tuple[dict, ...]
    cluster_guarantees: tuple[dict, ...]

    @property
    def passed(self) -> bool:
        return all(c["pass"] for c in self.conditions)

    def as_dict(self) -> dict:
        return {
            "theorem_used": self.theorem_used,
            "pass": self.passed,
            "conditions": [dict(c) for c in self.conditions],
            "cluster_guarantees": [dict(g) for g in self.cluster_guarantees],
        }


def check_composition(
    contracts: Mapping[int, Contract],
    topology: CompositionTopology,
    x0: np.ndarray,
    layout: StateLayout,
) -> CompositionCertificate:
    """Certificate for composing local contracts into the global one.

    An acyclic cluster coupling graph needs weak satisfaction per agent
    plus assumption/guarantee matching; a cyclic one additionally needs
    every task to start strictly inside its funnel and the uniform-strong
    satisfaction mode.  Matching and initial containment are decided
    here; the satisfaction mode itself is a per-trajectory obligation
    discharged by the funnel controller and checked by the monitors.
    """
    x0 = np.asarray(x0, dtype=float)
    theorem = "Thm1_DAG" if topology.acyclic else "Thm2_cyclic"

    mismatched = []
    for i, c in sorted(contracts.items()):
        for j, assumption in sorted(c.assumptions.items()):
            other = contracts.get(j)
            if other is None or not _clauses_match(assumption, other.guarantee):
                mismatched.append((j, i))
    conditions = [
        {
            "name": "assumption_guarantee_matching",
            "pass": not mismatched,
            "detail": (
                "every assumption equals the neighbor's guarantee funnel"
                if not mismatched
                else f"mismatched (guarantor, assuming) pairs: {mismatched}"
            ),
        }
    ]

    containment_failures = []
    for i, c in sorted(contracts.items()):
        cl = c.guarantee
        rho0 = float(
            boolean_robust_series(cl.body, x0[None, :], mode="smooth", layout=layout)[0]
        )
        lo = cl.funnel.lower(0.0)
        if not lo < rho0 < cl.funnel.rho_max:
            containment_failures.append((i, lo, rho0, cl.funnel.rho_max))
    required = theorem == "Thm2_cyclic"
    conditions.append(
        {
            "name": "initial_containment",
            "pass": (not containment_failures) if required else True,
            "detail": (
                f"checked {len(contracts)} tasks at t=0"
                + ("" if required else " (informational on the DAG path)")
                + (
                    ""
                    if not containment_failures
                    else f"; outside funnel: {containment_failures}"
                )
            ),
        }
    )

    mode = "weak" if theorem == "Thm1_DAG" else "uniform_strong"
    conditions.append(
        {
            "name": "satisfaction_mode",
            "pass": True,
            "detail": (
                f"{mode} satisfaction required per agent; enforced by the "
                "funnel controller and verified on trajectories by the monitors"
            ),
        }
    )

    clusters = []
    for k, members in enumerate(topology.partition.clusters, start=1):
        clusters.append(
            {
                "cluster": k,
                "members": list(members),
                "guarantee_funnels": {
                    str(i): contracts[i].guarantee.funnel.as_dict()
                    for i in members
                    if i in contracts
                },
            }
        )
    return CompositionCertificate(theorem, tuple(conditions), tuple(clusters))
