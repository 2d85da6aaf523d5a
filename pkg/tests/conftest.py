import numpy as np
import pytest

from stlagc.funnel import FunnelParams
from stlagc.sim import Trajectory
from stlagc.stl_core import StateLayout


def make_rho_trajectory(rho_by_task, funnels, dt=0.1):
    """Synthetic trajectory carrying only per-task robustness series.

    States/inputs are placeholders; contract monitors read nothing else.
    """
    task_ids = tuple(sorted(rho_by_task))
    n = len(next(iter(rho_by_task.values())))
    times = np.arange(n) * dt
    rho = np.column_stack([np.asarray(rho_by_task[i], dtype=float) for i in task_ids])
    agents = tuple(sorted(set(task_ids)))
    layout = StateLayout(agents, tuple(1 for _ in agents))
    return Trajectory(
        times=times,
        states=np.zeros((n, len(agents))),
        inputs=np.zeros((n, len(agents))),
        rho=rho,
        task_ids=task_ids,
        funnels=dict(funnels),
        layout=layout,
        input_dims=tuple(1 for _ in agents),
    )


@pytest.fixture
def unit_funnel():
    """Constant-width funnel with band (0, 2): handy for hand examples."""
    return FunnelParams(gamma0=2.0, gamma_inf=2.0, l=0.0, rho_max=2.0, r=0.5, t_star=0.0)
