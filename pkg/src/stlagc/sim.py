"""Fixed-step closed-loop simulation and trajectory recording.

Classical fourth-order Runge-Kutta with the controller re-evaluated at
every stage time (the funnel width is time-varying, so freezing it per
step would cost integration order).  Recording keeps the grid uniform:
states, controller outputs, and the smooth-mode body robustness of every
task, which is exactly the quantity the funnels constrain and what the
contract monitors consume.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np

from ._kernels import get_core, pack_problem
from .funnel import FunnelParams
from .plant import MultiAgentSystem
from .stl_core import DimensionError, Signal, StateLayout, TemporalFormula

__all__ = [
    "SimConfig",
    "ClampEvent",
    "Trajectory",
    "ClosedLoop",
    "InitialContainmentError",
    "DivergenceError",
    "integrate",
    "resample",
    "export_csv",
    "read_csv_columns",
    "trajectory_from_csv",
]

log = logging.getLogger("stlagc.sim")

DIVERGENCE_LIMIT = 1e9
MAX_CLAMP_EVENTS = 10_000


class InitialContainmentError(ValueError):
    """Some task starts outside its funnel, violating the controller's hypothesis."""


class DivergenceError(RuntimeError):
    """State norm exceeded the divergence guard during integration."""


@dataclass(frozen=True)
class SimConfig:
    """Grid configuration: ``dt`` is the recording/monitoring step.

    ``substeps`` refines the integrator below the recorded grid (the
    integration step is dt/substeps, still classical fixed-step RK4).
    Stiff funnel phases, where a task robustness must ride close to its
    shrinking lower bound, may need it; monitors always work on the dt
    grid.
    """

    dt: float
    horizon: float
    record_stride: int = 1
    substeps: int = 1

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        if self.record_stride < 1:
            raise ValueError("record_stride must be at least 1")
        if self.substeps < 1:
            raise ValueError("substeps must be at least 1")
        n = round(self.horizon / self.dt)
        if n < 1 or abs(n * self.dt - self.horizon) > 1e-9 * max(1.0, self.horizon):
            raise ValueError("horizon must be a positive multiple of dt")
        if n % self.record_stride:
            raise ValueError("record_stride must divide the number of steps")

    @property
    def n_steps(self) -> int:
        return round(self.horizon / self.dt)


@dataclass(frozen=True)
class ClampEvent:
    """The modulated error of some task hit the funnel boundary."""

    time: float
    step: int
    tasks: tuple[int, ...]  # owner agent ids


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Uniformly sampled closed-loop run with per-task funnel data."""

    times: np.ndarray  # (T,)
    states: np.ndarray  # (T, n)
    inputs: np.ndarray  # (T, m)
    rho: np.ndarray  # (T, M), smooth-mode body robustness
    task_ids: tuple[int, ...]  # owner agent ids, ascending
    funnels: dict[int, FunnelParams]
    layout: StateLayout
    input_dims: tuple[int, ...]  # input dimension per agent, layout order
    events: tuple[ClampEvent, ...] = ()
    clamp_stage_count: int = 0

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def n_samples(self) -> int:
        return len(self.times)

    def task_index(self, task_id: int) -> int:
        return self.task_ids.index(task_id)

    def rho_series(self, task_id: int) -> np.ndarray:
        return self.rho[:, self.task_index(task_id)]

    def lower_series(self, task_id: int) -> np.ndarray:
        return self.funnels[task_id].lower(self.times)

    def upper_series(self, task_id: int) -> np.ndarray:
        return self.funnels[task_id].upper(self.times)

    def containment_series(self, task_id: int) -> np.ndarray:
        """Strict funnel containment flag per sample."""
        rho = self.rho_series(task_id)
        return (rho > self.lower_series(task_id)) & (rho < self.upper_series(task_id))

    def containment_margin(self, task_id: int) -> np.ndarray:
        rho = self.rho_series(task_id)
        return np.minimum(
            self.upper_series(task_id) - rho, rho - self.lower_series(task_id)
        )

    def signal(self) -> Signal:
        return Signal(self.times, self.states)

    def state_columns(self) -> list[str]:
        return [
            f"x_{a}_{i}"
            for a, n in zip(self.layout.agents, self.layout.dims)
            for i in range(n)
        ]

    def input_columns(self) -> list[str]:
        return [
            f"u_{a}_{i}"
            for a, m in zip(self.layout.agents, self.input_dims)
            for i in range(m)
        ]


class ClosedLoop:
    """A multi-agent system under its per-task funnel controllers."""

    def __init__(
        self,
        system: MultiAgentSystem,
        tasks: Mapping[int, TemporalFormula],
        funnels: Mapping[int, FunnelParams],
        backend: str | None = None,
    ):
        self.system = system
        self.tasks = dict(tasks)
        self.funnels = dict(funnels)
        self.problem = pack_problem(system, self.tasks, self.funnels)
        self.core = get_core(self.problem, backend)

    @property
    def task_ids(self) -> tuple[int, ...]:
        return tuple(int(i) for i in self.problem.task_owner_id)

    def initial_containment(self, x0: np.ndarray) -> list[tuple[int, float, float, float]]:
        """Per-task (id, lower, rho, upper) at t = 0."""
        rho0 = self.core.task_values(x0)
        lower = self.problem.rho_max - self.problem.gamma0
        return [
            (tid, float(lower[k]), float(rho0[k]), float(self.problem.rho_max[k]))
            for k, tid in enumerate(self.task_ids)
        ]


def integrate(
    loop: ClosedLoop,
    cfg: SimConfig,
    x0: np.ndarray | None = None,
) -> Trajectory:
    """Simulate the closed loop and record a uniformly-sampled trajectory.

    Refuses to start when some task begins outside its funnel (the
    controller's hypothesis); aborts with the first bad step when the
    state diverges.  Clamp events (funnel-boundary contact) are recorded,
    not raised: the integrator stays alive for diagnosis and the monitors
    treat any clamp as a potential violation.
    """
    system = loop.system
    x = np.array(system.x0 if x0 is None else x0, dtype=float)
    if x.shape != (loop.problem.n,):
        raise DimensionError(f"x0 must have dimension {loop.problem.n}")

    violations = [
        (tid, lo, rho, hi)
        for tid, lo, rho, hi in loop.initial_containment(x)
        if not (lo < rho < hi)
    ]
    if violations:
        detail = "; ".join(
            f"task {tid}: rho(x0)={rho:.6g} not in ({lo:.6g}, {hi:.6g})"
            for tid, lo, rho, hi in violations
        )
        raise InitialContainmentError(f"initial funnel containment violated: {detail}")

    core = loop.core
    dt = cfg.dt
    n_steps = cfg.n_steps
    stride = cfg.record_stride
    n_rec = n_steps // stride + 1

    times = np.empty(n_rec)
    states = np.empty((n_rec, loop.problem.n))
    inputs = np.empty((n_rec, loop.problem.n_inputs))
    rho = np.empty((n_rec, loop.problem.n_tasks))
    events: list[ClampEvent] = []
    clamp_stages = 0
    h = dt / cfg.substeps

    def record(row: int, t: float):
        times[row] = t
        states[row] = x
        u, _ = core.controls(x, t)
        inputs[row] = u
        rho[row] = core.task_values(x)

    def clamp_event(step: int, t_stage: float, x_stage: np.ndarray):
        if len(events) >= MAX_CLAMP_EVENTS:
            return
        state = core.task_state(x_stage, t_stage)
        tasks = tuple(
            int(tid)
            for tid, flag in zip(loop.task_ids, state["clamped"])
            if flag
        )
        events.append(ClampEvent(t_stage, step, tasks))
        if len(events) <= 10:
            log.warning(
                "clamp event at t=%.6g (step %d), tasks %s", t_stage, step, tasks
            )

    record(0, 0.0)
    for step in range(n_steps):
        for sub in range(cfg.substeps):
            t = (step * cfg.substeps + sub) * h
            k1, c1 = core.rhs(x, t)
            x2 = x + 0.5 * h * k1
            k2, c2 = core.rhs(x2, t + 0.5 * h)
            x3 = x + 0.5 * h * k2
            k3, c3 = core.rhs(x3, t + 0.5 * h)
            x4 = x + h * k3
            k4, c4 = core.rhs(x4, t + h)
            if c1 or c2 or c3 or c4:
                clamp_stages += 1
                for cnt, xs, ts in (
                    (c1, x, t), (c2, x2, t + 0.5 * h),
                    (c3, x3, t + 0.5 * h), (c4, x4, t + h),
                ):
                    if cnt:
                        clamp_event(step, ts, xs)
                        break
            x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if not np.all(np.isfinite(x)) or np.abs(x).max() > DIVERGENCE_LIMIT:
                raise DivergenceError(
                    f"state diverged at step {step + 1} (t={t + h:.6g})"
                )
        if (step + 1) % stride == 0:
            record((step + 1) // stride, (step + 1) * dt)

    return Trajectory(
        times=times,
        states=states,
        inputs=inputs,
        rho=rho,
        task_ids=loop.task_ids,
        funnels={tid: loop.funnels[tid] for tid in loop.task_ids},
        layout=system.layout,
        input_dims=tuple(a.m for a in system.agents),
        events=tuple(events),
        clamp_stage_count=clamp_stages,
    )


def resample(traj: Trajectory, stride: int) -> Trajectory:
    """Decimated copy keeping both endpoints; grid stays uniform."""
    if stride < 1:
        raise ValueError("stride must be at least 1")
    if stride == 1:
        return traj
    if (traj.n_samples - 1) % stride:
        raise ValueError(
            f"stride {stride} does not preserve the final sample of "
            f"{traj.n_samples} samples"
        )
    sl = slice(None, None, stride)
    return replace(
        traj,
        times=traj.times[sl].copy(),
        states=traj.states[sl].copy(),
        inputs=traj.inputs[sl].copy(),
        rho=traj.rho[sl].copy(),
    )


# ---------------------------------------------------------------------------
# CSV round trip (17 significant digits: lossless for float64)


def csv_header(traj: Trajectory) -> list[str]:
    cols = ["t"] + traj.state_columns() + traj.input_columns()
    for tid in traj.task_ids:
        cols.append(f"rho_{tid}")
    for tid in traj.task_ids:
        cols.append(f"lower_{tid}")
    for tid in traj.task_ids:
        cols.append(f"upper_{tid}")
    return cols


def export_csv(traj: Trajectory, path) -> None:
    lower = np.column_stack(
        [traj.lower_series(tid) for tid in traj.task_ids]
    ) if traj.task_ids else np.empty((traj.n_samples, 0))
    upper = np.column_stack(
        [traj.upper_series(tid) for tid in traj.task_ids]
    ) if traj.task_ids else np.empty((traj.n_samples, 0))
    table = np.column_stack(
        [traj.times, traj.states, traj.inputs, traj.rho, lower, upper]
    )
    with open(path, "w") as fh:
        fh.write(",".join(csv_header(traj)) + "\n")
        np.savetxt(fh, table, fmt="%.17g", delimiter=",")


def read_csv_columns(path) -> dict[str, np.ndarray]:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.shape[1] != len(header):
        raise ValueError(f"{path}: {data.shape[1]} columns, header names {len(header)}")
    return {name: data[:, k].copy() for k, name in enumerate(header)}


def trajectory_from_csv(
    path,
    system: MultiAgentSystem,
    funnels: Mapping[int, FunnelParams],
) -> Trajectory:
    """Rebuild a trajectory from an exported file plus scenario context."""
    cols = read_csv_columns(path)
    layout = system.layout
    input_dims = tuple(a.m for a in system.agents)
    task_ids = tuple(sorted(funnels))
    times = cols["t"]
    if len(times) < 2:
        raise ValueError("trace needs at least two samples")
    steps = np.diff(times)
    if steps.min() <= 0 or not np.allclose(steps, steps[0], rtol=1e-9, atol=1e-12):
        raise ValueError("trace time grid must be uniform and increasing")

    def stack(names):
        missing = [c for c in names if c not in cols]
        if missing:
            raise ValueError(f"trace lacks columns {missing}")
        if not names:
            return np.empty((len(times), 0))
        return np.column_stack([cols[c] for c in names])

    x_names = [
        f"x_{a}_{i}" for a, n in zip(layout.agents, layout.dims) for i in range(n)
    ]
    u_names = [
        f"u_{a}_{i}" for a, m in zip(layout.agents, input_dims) for i in range(m)
    ]
    rho_names = [f"rho_{tid}" for tid in task_ids]
    return Trajectory(
        times=times,
        states=stack(x_names),
        inputs=stack(u_names),
        rho=stack(rho_names),
        task_ids=task_ids,
        funnels=dict(funnels),
        layout=layout,
        input_dims=input_dims,
    )
