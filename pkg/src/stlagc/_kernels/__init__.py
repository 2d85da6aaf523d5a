"""Closed-loop evaluation backends.

Two interchangeable engines evaluate the packed closed loop: a vectorized
numpy implementation that always works, and a compiled core built from
``_fastcore.pyx`` when the extension is available.  The compiled one is
preferred by default; set ``STLAGC_BACKEND=python`` (or pass
``backend="python"``) to force the fallback, e.g. for benchmarking.
"""

from __future__ import annotations

import os

from .numpy_backend import NumpyCore
from .packing import PackedProblem, pack_problem

__all__ = [
    "PackedProblem",
    "pack_problem",
    "NumpyCore",
    "CompiledCore",
    "HAVE_COMPILED",
    "available_backends",
    "default_backend",
    "get_core",
]

try:
    from ._fastcore import FastCore

    HAVE_COMPILED = True
except ImportError:  # extension not built; numpy fallback still works
    FastCore = None
    HAVE_COMPILED = False


class CompiledCore(NumpyCore):
    """Numpy engine with the hot entry points swapped for compiled ones.

    Diagnostics (per-task robustness, funnel terms) stay on the numpy
    path; only the per-stage derivative and controller evaluations, which
    dominate simulation time, go through the extension.
    """

    def __init__(self, problem: PackedProblem):
        super().__init__(problem)
        self._fast = FastCore(problem)

    def rhs(self, x, t):
        return self._fast.rhs(x, t)

    def controls(self, x, t):
        return self._fast.controls(x, t)


def available_backends() -> tuple[str, ...]:
    return ("compiled", "python") if HAVE_COMPILED else ("python",)


def default_backend() -> str:
    env = os.environ.get("STLAGC_BACKEND")
    if env:
        return env
    return "compiled" if HAVE_COMPILED else "python"


def get_core(problem: PackedProblem, backend: str | None = None) -> NumpyCore:
    """Instantiate the requested backend (default: best available)."""
    backend = backend or default_backend()
    if backend == "compiled":
        if not HAVE_COMPILED:
            raise RuntimeError(
                "compiled backend requested but the extension is not built; "
                "reinstall the package or use STLAGC_BACKEND=python"
            )
        return CompiledCore(problem)
    if backend == "python":
        return NumpyCore(problem)
    raise ValueError(f"unknown backend {backend!r}; use 'compiled' or 'python'")
