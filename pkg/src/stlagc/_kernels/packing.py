"""Flat, array-packed form of one closed-loop problem.

The simulator evaluates the closed-loop right-hand side tens of thousands
of times; doing that over dataclass object graphs is the hot spot.  This
module compiles a (system, tasks, funnels) triple into contiguous arrays
that both the vectorized numpy backend and the compiled core consume,
so the two backends are interchangeable and comparable.

Layout
------
Literals are stored sorted by owning task.  Parameter payloads per family:

* linear              ``[c (k), d]``
* norm_ball           ``[S (v*k, row-major), c (v), d]``
* concave_quadratic   ``[Q (k*k, row-major), c (k), d]``

Dynamics payloads per family:

* linear              ``[A (n*n), B (n*m), D (n*p), c (n)]``
* single_integrator   ``[D (n*p)]``
* omni_robot          ``[k_gain, reg, G0 (9, row-major)]``
* room_node           ``[alpha, alpha_e, alpha_h, T_heater, T_outside]``
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from ..funnel import CLAMP_DELTA, FunnelParams
from ..plant import (
    ROBOT_COUPLING_REG,
    ROOM_ALPHA,
    ROOM_ALPHA_E,
    ROOM_ALPHA_H,
    ROOM_T_HEATER,
    DynamicsFamily,
    MultiAgentSystem,
)
from ..stl_core import NORM_GRAD_REG, PredicateFamily, TemporalFormula

__all__ = ["PackedProblem", "pack_problem"]

LIT_LINEAR, LIT_BALL, LIT_QUAD = 0, 1, 2
DYN_LINEAR, DYN_INTEGRATOR, DYN_ROBOT, DYN_ROOM = 0, 1, 2, 3

_LIT_CODE = {
    PredicateFamily.LINEAR: LIT_LINEAR,
    PredicateFamily.NORM_BALL: LIT_BALL,
    PredicateFamily.CONCAVE_QUADRATIC: LIT_QUAD,
}
_DYN_CODE = {
    DynamicsFamily.LINEAR: DYN_LINEAR,
    DynamicsFamily.SINGLE_INTEGRATOR: DYN_INTEGRATOR,
    DynamicsFamily.OMNI_ROBOT: DYN_ROBOT,
    DynamicsFamily.ROOM_NODE: DYN_ROOM,
}


@dataclass(frozen=True, eq=False)
class PackedProblem:
    # state / input bookkeeping
    n: int
    n_agents: int
    x_off: np.ndarray  # int32 [N+1]
    u_off: np.ndarray  # int32 [N+1]
    # dynamics
    dyn_family: np.ndarray  # int32 [N]
    dyn_par_off: np.ndarray  # int32 [N+1]
    dyn_par: np.ndarray  # float64
    w_off: np.ndarray  # int32 [N+1]
    w_idx: np.ndarray  # int32, global state indices
    # tasks
    n_tasks: int
    task_agent: np.ndarray  # int32 [M], 0-based agent index of the owner
    task_owner_id: np.ndarray  # int32 [M], original agent id
    gamma0: np.ndarray
    gamma_inf: np.ndarray
    decay: np.ndarray
    rho_max: np.ndarray
    r_target: np.ndarray
    t_star: np.ndarray
    # literals, sorted by task
    lit_off: np.ndarray  # int32 [M+1]
    lit_family: np.ndarray  # int32 [L]
    lit_sign: np.ndarray  # float64 [L], -1 for negated literals
    lit_vdim: np.ndarray  # int32 [L]
    lit_sel_off: np.ndarray  # int32 [L+1]
    lit_sel: np.ndarray  # int32
    lit_par_off: np.ndarray  # int32 [L+1]
    lit_par: np.ndarray  # float64
    # numerics
    clamp_delta: float = CLAMP_DELTA
    grad_reg: float = NORM_GRAD_REG

    @property
    def n_literals(self) -> int:
        return len(self.lit_family)

    @property
    def n_inputs(self) -> int:
        return int(self.u_off[-1])

    def funnel_width(self, t) -> np.ndarray:
        """gamma(t) for every task; t scalar or (T,) -> (..., M)."""
        t = np.asarray(t, dtype=float)
        return (self.gamma0 - self.gamma_inf) * np.exp(
            -np.multiply.outer(t, self.decay)
        ) + self.gamma_inf

    def lower_bounds(self, t) -> np.ndarray:
        return self.rho_max - self.funnel_width(t)

    def upper_bounds(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return np.broadcast_to(self.rho_max, t.shape + (self.n_tasks,)).copy()


def pack_problem(
    system: MultiAgentSystem,
    tasks: Mapping[int, TemporalFormula],
    funnels: Mapping[int, FunnelParams],
) -> PackedProblem:
    """Compile a closed-loop problem into flat arrays.

    ``tasks`` and ``funnels`` are keyed by owning agent id and must have
    identical key sets; an empty mapping packs the uncontrolled plant.
    """
    if set(tasks) != set(funnels):
        raise ValueError("tasks and funnels must cover the same agents")
    layout = system.layout
    n_agents = system.n_agents

    x_off = np.zeros(n_agents + 1, dtype=np.int32)
    u_off = np.zeros(n_agents + 1, dtype=np.int32)
    for a in system.agents:
        i = a.agent_id - 1
        x_off[i + 1] = x_off[i] + a.n
        u_off[i + 1] = u_off[i] + a.m

    dyn_family = np.zeros(n_agents, dtype=np.int32)
    dyn_par_off = np.zeros(n_agents + 1, dtype=np.int32)
    dyn_par: list[float] = []
    w_off = np.zeros(n_agents + 1, dtype=np.int32)
    w_idx: list[int] = []
    for a in system.agents:
        i = a.agent_id - 1
        dyn_family[i] = _DYN_CODE[a.family]
        wire = system.internal_input_indices(a.agent_id)
        w_idx.extend(int(k) for k in wire)
        w_off[i + 1] = len(w_idx)
        if a.family is DynamicsFamily.LINEAR:
            D = a.params.get("D")
            if D is None:
                D = np.zeros((a.n, a.p))
            dyn_par.extend(a.params["A"].ravel())
            dyn_par.extend(a.params["B"].ravel())
            dyn_par.extend(np.asarray(D).ravel())
            dyn_par.extend(a.params["c"].ravel())
        elif a.family is DynamicsFamily.SINGLE_INTEGRATOR:
            D = a.params.get("D")
            if D is None:
                D = np.zeros((a.n, a.p))
            dyn_par.extend(np.asarray(D).ravel())
        elif a.family is DynamicsFamily.OMNI_ROBOT:
            dyn_par.append(float(a.params["k"]))
            dyn_par.append(ROBOT_COUPLING_REG)
            dyn_par.extend(a.params["G0"].ravel())
        else:
            dyn_par.extend(
                [ROOM_ALPHA, ROOM_ALPHA_E, ROOM_ALPHA_H, ROOM_T_HEATER,
                 float(a.params["T_e"])]
            )
        dyn_par_off[i + 1] = len(dyn_par)

    owners = sorted(tasks)
    n_tasks = len(owners)
    task_agent = np.array([i - 1 for i in owners], dtype=np.int32)
    task_owner_id = np.array(owners, dtype=np.int32)
    gamma0 = np.array([funnels[i].gamma0 for i in owners])
    gamma_inf = np.array([funnels[i].gamma_inf for i in owners])
    decay = np.array([funnels[i].l for i in owners])
    rho_max = np.array([funnels[i].rho_max for i in owners])
    r_target = np.array([funnels[i].r for i in owners])
    t_star = np.array([funnels[i].t_star for i in owners])

    lit_off = np.zeros(n_tasks + 1, dtype=np.int32)
    lit_family: list[int] = []
    lit_sign: list[float] = []
    lit_vdim: list[int] = []
    lit_sel_off = [0]
    lit_sel: list[int] = []
    lit_par_off = [0]
    lit_par: list[float] = []
    for ti, owner in enumerate(owners):
        body = tasks[owner].body
        for lit in body.literals:
            pred = lit.predicate
            lit_family.append(_LIT_CODE[pred.family])
            lit_sign.append(-1.0 if lit.negated else 1.0)
            lit_sel.extend(int(p) for p in layout.positions(pred.selector))
            lit_sel_off.append(len(lit_sel))
            if pred.family is PredicateFamily.LINEAR:
                lit_vdim.append(0)
                lit_par.extend(pred.c)
            elif pred.family is PredicateFamily.NORM_BALL:
                lit_vdim.append(pred.S.shape[0])
                lit_par.extend(pred.S.ravel())
                lit_par.extend(pred.c)
            else:
                lit_vdim.append(0)
                lit_par.extend(pred.Q.ravel())
                lit_par.extend(pred.c)
            lit_par.append(pred.d)
            lit_par_off.append(len(lit_par))
        lit_off[ti + 1] = len(lit_family)

    return PackedProblem(
        n=layout.total_dim,
        n_agents=n_agents,
        x_off=x_off,
        u_off=u_off,
        dyn_family=dyn_family,
        dyn_par_off=dyn_par_off,
        dyn_par=np.asarray(dyn_par, dtype=float),
        w_off=w_off,
        w_idx=np.asarray(w_idx, dtype=np.int32),
        n_tasks=n_tasks,
        task_agent=task_agent,
        task_owner_id=task_owner_id,
        gamma0=gamma0,
        gamma_inf=gamma_inf,
        decay=decay,
        rho_max=rho_max,
        r_target=r_target,
        t_star=t_star,
        lit_off=lit_off,
        lit_family=np.asarray(lit_family, dtype=np.int32),
        lit_sign=np.asarray(lit_sign, dtype=float),
        lit_vdim=np.asarray(lit_vdim, dtype=np.int32),
        lit_sel_off=np.asarray(lit_sel_off, dtype=np.int32),
        lit_sel=np.asarray(lit_sel, dtype=np.int32),
        lit_par_off=np.asarray(lit_par_off, dtype=np.int32),
        lit_par=np.asarray(lit_par, dtype=float),
    )
