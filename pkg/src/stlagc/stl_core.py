"""Core temporal-logic fragment: predicates, boolean bodies, timed operators.

The fragment is deliberately small.  Boolean bodies are conjunctions of
(possibly negated) predicate literals drawn from three closed families,
each concave in the state it reads:

* ``linear``             rho(x) = c.x + d
* ``norm_ball``          rho(x) = d - ||S x - c||
* ``concave_quadratic``  rho(x) = d - (x - c)' Q (x - c),  Q >= 0

Temporal operators are ``G[a,b]``, ``F[a,b]`` and the composition
``F[a,b] G[a',b']`` applied once over a boolean body; no further nesting.

Robustness comes in two modes.  ``exact`` is the min over literals and is
what monitors use; ``smooth`` replaces the min by -ln(sum exp(-rho_k)),
which is differentiable and is the quantity the feedback controller
tracks.  The smooth value never exceeds the exact one and is below it by
at most ln(m) for m literals.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.optimize

__all__ = [
    "PredicateFamily",
    "PredicateSpec",
    "Literal",
    "BooleanFormula",
    "TemporalOp",
    "TemporalFormula",
    "StateLayout",
    "Signal",
    "BooleanGradient",
    "RhoOptimum",
    "DimensionError",
    "CoverageError",
    "ConcavityError",
    "ConvergenceError",
    "eval_predicate",
    "eval_boolean_robust",
    "boolean_robust_series",
    "grad_boolean_robust",
    "eval_temporal_robust",
    "eval_temporal_robust_witness",
    "temporal_robustness_from_series",
    "rho_opt",
    "smooth_min",
]

#: Regularizer added to the norm denominator in norm-ball gradients so the
#: single non-differentiable point (the center) stays finite.
NORM_GRAD_REG = 1e-9

#: Below this own-block gradient norm a state counts as degenerate for the
#: nonzero-gradient requirement on the controller.
GRADIENT_FLOOR = 1e-8


class DimensionError(ValueError):
    """State vector does not match the dimension a formula reads."""


class CoverageError(ValueError):
    """Signal grid does not cover the evaluation window of an operator."""


class ConcavityError(ValueError):
    """Operation requires a concave robustness function."""


class ConvergenceError(RuntimeError):
    """Iterative optimum search did not converge within the iteration cap."""


class PredicateFamily(enum.Enum):
    LINEAR = "linear"
    NORM_BALL = "norm_ball"
    CONCAVE_QUADRATIC = "concave_quadratic"


def _frozen_array(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class PredicateSpec:
    """One predicate over a selection of stacked-state entries.

    ``selector`` is an ordered tuple of ``(agent_id, state_index)`` pairs:
    the entries of the stacked state the predicate reads, in the order the
    coefficient payload expects them.
    """

    family: PredicateFamily
    selector: tuple[tuple[int, int], ...]
    c: np.ndarray
    d: float
    S: np.ndarray | None = None
    Q: np.ndarray | None = None

    def __post_init__(self):
        sel = tuple((int(a), int(i)) for a, i in self.selector)
        if not sel:
            raise ValueError("predicate selector must be nonempty")
        if len(set(sel)) != len(sel):
            raise ValueError("predicate selector has duplicate entries")
        object.__setattr__(self, "selector", sel)
        k = len(sel)
        c = _frozen_array(self.c)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "d", float(self.d))
        if self.family is PredicateFamily.LINEAR:
            if self.S is not None or self.Q is not None:
                raise ValueError("linear predicate takes only c and d")
            if c.shape != (k,):
                raise DimensionError(f"linear coefficients must have shape ({k},)")
        elif self.family is PredicateFamily.NORM_BALL:
            if self.S is None:
                raise ValueError("norm_ball predicate requires S")
            S = _frozen_array(self.S)
            if S.ndim != 2 or S.shape[1] != k:
                raise DimensionError(f"S must be (v, {k}) for this selector")
            if c.shape != (S.shape[0],):
                raise DimensionError("norm_ball center must match rows of S")
            object.__setattr__(self, "S", S)
        elif self.family is PredicateFamily.CONCAVE_QUADRATIC:
            if self.Q is None:
                raise ValueError("concave_quadratic predicate requires Q")
            Q = _frozen_array(self.Q)
            if Q.shape != (k, k):
                raise DimensionError(f"Q must be ({k}, {k}) for this selector")
            if not np.allclose(Q, Q.T, atol=1e-12):
                raise ValueError("Q must be symmetric")
            if np.linalg.eigvalsh(Q).min() < -1e-10:
                raise ConcavityError("Q must be positive semidefinite")
            if c.shape != (k,):
                raise DimensionError("quadratic center must match selector length")
            object.__setattr__(self, "Q", Q)
        else:  # pragma: no cover - closed enumeration
            raise ValueError(f"unknown family {self.family}")

    @property
    def agents(self) -> tuple[int, ...]:
        return tuple(sorted({a for a, _ in self.selector}))

    def value(self, x_sel: np.ndarray) -> float:
        x = np.asarray(x_sel, dtype=float)
        if x.shape != (len(self.selector),):
            raise DimensionError(
                f"expected state of length {len(self.selector)}, got {x.shape}"
            )
        if self.family is PredicateFamily.LINEAR:
            return float(self.c @ x + self.d)
        if self.family is PredicateFamily.NORM_BALL:
            return float(self.d - np.linalg.norm(self.S @ x - self.c))
        r = x - self.c
        return float(self.d - r @ self.Q @ r)

    def gradient(self, x_sel: np.ndarray) -> np.ndarray:
        """Gradient with respect to the selector entries (regularized)."""
        x = np.asarray(x_sel, dtype=float)
        if self.family is PredicateFamily.LINEAR:
            return self.c.copy()
        if self.family is PredicateFamily.NORM_BALL:
            r = self.S @ x - self.c
            return -(self.S.T @ r) / (np.linalg.norm(r) + NORM_GRAD_REG)
        return -2.0 * (self.Q @ (x - self.c))


@dataclass(frozen=True, eq=False)
class Literal:
    predicate: PredicateSpec
    negated: bool = False

    def value(self, x_sel: np.ndarray) -> float:
        v = self.predicate.value(x_sel)
        return -v if self.negated else v

    def gradient(self, x_sel: np.ndarray) -> np.ndarray:
        g = self.predicate.gradient(x_sel)
        return -g if self.negated else g

    @property
    def concave(self) -> bool:
        # Negating a linear literal stays linear; negating a ball or a
        # quadratic flips concavity.
        return not self.negated or self.predicate.family is PredicateFamily.LINEAR


@dataclass(frozen=True)
class StateLayout:
    """Stacking order for a tuple of agents: ascending ids, given dims."""

    agents: tuple[int, ...]
    dims: tuple[int, ...]

    def __post_init__(self):
        agents = tuple(int(a) for a in self.agents)
        dims = tuple(int(n) for n in self.dims)
        if len(agents) != len(dims):
            raise ValueError("agents and dims must have equal length")
        if any(n <= 0 for n in dims):
            raise ValueError("agent dimensions must be positive")
        if list(agents) != sorted(set(agents)):
            raise ValueError("agents must be strictly ascending")
        object.__setattr__(self, "agents", agents)
        object.__setattr__(self, "dims", dims)

    @classmethod
    def from_dims(cls, dims: Mapping[int, int]) -> "StateLayout":
        agents = tuple(sorted(dims))
        return cls(agents, tuple(dims[a] for a in agents))

    @property
    def total_dim(self) -> int:
        return sum(self.dims)

    def offset(self, agent: int) -> int:
        off = 0
        for a, n in zip(self.agents, self.dims):
            if a == agent:
                return off
            off += n
        raise KeyError(f"agent {agent} not in layout")

    def dim(self, agent: int) -> int:
        return self.dims[self.agents.index(agent)]

    def agent_slice(self, agent: int) -> slice:
        off = self.offset(agent)
        return slice(off, off + self.dim(agent))

    def position(self, agent: int, index: int) -> int:
        if index >= self.dim(agent):
            raise DimensionError(
                f"state index {index} out of range for agent {agent} "
                f"(dim {self.dim(agent)})"
            )
        return self.offset(agent) + index

    def positions(self, selector: Iterable[tuple[int, int]]) -> np.ndarray:
        return np.array([self.position(a, i) for a, i in selector], dtype=np.intp)


@dataclass(frozen=True, eq=False)
class BooleanFormula:
    """Conjunction of literals; the grammar's non-temporal layer."""

    literals: tuple[Literal, ...]

    def __post_init__(self):
        lits = tuple(self.literals)
        if not lits:
            raise ValueError("boolean formula needs at least one literal")
        object.__setattr__(self, "literals", lits)

    @property
    def involved_agents(self) -> tuple[int, ...]:
        return tuple(sorted({a for lit in self.literals for a in lit.predicate.agents}))

    @property
    def selector_union(self) -> frozenset[tuple[int, int]]:
        return frozenset(
            pair for lit in self.literals for pair in lit.predicate.selector
        )

    def minimal_layout(self) -> StateLayout:
        """Layout inferred from the indices the literals actually read."""
        dims: dict[int, int] = {}
        for a, i in self.selector_union:
            dims[a] = max(dims.get(a, 0), i + 1)
        return StateLayout.from_dims(dims)

    @property
    def is_concave(self) -> bool:
        return all(lit.concave for lit in self.literals)

    def is_well_posed(self) -> bool:
        """Sufficient check that superlevel sets are bounded.

        Every state dimension the formula reads must be covered by a
        non-negated norm ball or by a non-negated quadratic with positive
        definite Q; those literals cap how far the covered entries can
        stray once the conjunction value is bounded below.
        """
        bounded: set[tuple[int, int]] = set()
        for lit in self.literals:
            if lit.negated:
                continue
            pred = lit.predicate
            if pred.family is PredicateFamily.NORM_BALL:
                bounded.update(pred.selector)
            elif pred.family is PredicateFamily.CONCAVE_QUADRATIC:
                if np.linalg.eigvalsh(pred.Q).min() > 1e-12:
                    bounded.update(pred.selector)
        return self.selector_union <= bounded


class TemporalOp(enum.Enum):
    ALWAYS = "G"
    EVENTUALLY = "F"
    EVENTUALLY_ALWAYS = "FG"


def _check_interval(a: float, b: float, what: str) -> tuple[float, float]:
    a, b = float(a), float(b)
    if not (math.isfinite(a) and math.isfinite(b)):
        raise ValueError(f"{what} bounds must be finite")
    if a < 0 or b < 0:
        raise ValueError(f"{what} bounds must be nonnegative")
    if a > b:
        raise ValueError(f"{what} requires a <= b, got [{a}, {b}]")
    return a, b


@dataclass(frozen=True, eq=False)
class TemporalFormula:
    """One task of the fragment: a single timed operator over a body.

    ``interval`` is (a, b) for G/F and the outer (eventually) interval for
    FG, whose inner (always) interval sits in ``inner``.
    """

    op: TemporalOp
    interval: tuple[float, float]
    body: BooleanFormula
    inner: tuple[float, float] | None = None

    def __post_init__(self):
        a, b = _check_interval(*self.interval, what="interval")
        object.__setattr__(self, "interval", (a, b))
        if self.op is TemporalOp.EVENTUALLY_ALWAYS:
            if self.inner is None:
                raise ValueError("FG formula requires the inner interval")
            ai, bi = _check_interval(*self.inner, what="inner interval")
            object.__setattr__(self, "inner", (ai, bi))
        elif self.inner is not None:
            raise ValueError(f"{self.op.value} formula takes no inner interval")

    @property
    def involved_agents(self) -> tuple[int, ...]:
        return self.body.involved_agents

    def window_end(self, t: float = 0.0) -> float:
        """Latest time the sampled semantics reads when evaluated at t."""
        a, b = self.interval
        if self.op is TemporalOp.EVENTUALLY_ALWAYS:
            return t + b + self.inner[1]
        return t + b


@dataclass(frozen=True)
class Signal:
    """Uniformly sampled stacked-state trajectory."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] != t.shape[0]:
            raise DimensionError("one sample row per time point required")
        if t.ndim != 1 or t.size < 2:
            raise ValueError("signal needs at least two samples")
        steps = np.diff(t)
        if steps.min() <= 0:
            raise ValueError("time grid must be strictly increasing")
        if not np.allclose(steps, steps[0], rtol=1e-9, atol=1e-12):
            raise ValueError("time grid must be uniform")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])


# ---------------------------------------------------------------------------
# robustness evaluation


def smooth_min(values: np.ndarray) -> float:
    """-ln(sum exp(-v)) with a max shift so large margins cannot overflow."""
    v = np.asarray(values, dtype=float)
    m = v.min()
    return float(m - np.log(np.exp(m - v).sum()))


def eval_predicate(pred: PredicateSpec, x_sel) -> float:
    return pred.value(x_sel)


def _literal_positions(psi: BooleanFormula, layout: StateLayout) -> list[np.ndarray]:
    return [layout.positions(lit.predicate.selector) for lit in psi.literals]


def _resolve_layout(psi: BooleanFormula, layout: StateLayout | None) -> StateLayout:
    return psi.minimal_layout() if layout is None else layout


def _literal_values(psi: BooleanFormula, x: np.ndarray, layout: StateLayout) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (layout.total_dim,):
        raise DimensionError(
            f"expected stacked state of length {layout.total_dim}, got {x.shape}"
        )
    return np.array(
        [lit.value(x[pos]) for lit, pos in zip(psi.literals, _literal_positions(psi, layout))]
    )


def eval_boolean_robust(
    psi: BooleanFormula,
    x,
    mode: str = "exact",
    layout: StateLayout | None = None,
) -> float:
    """Robustness of the conjunction at one stacked state."""
    layout = _resolve_layout(psi, layout)
    vals = _literal_values(psi, np.asarray(x, dtype=float), layout)
    if mode == "exact":
        return float(vals.min())
    if mode == "smooth":
        return smooth_min(vals)
    raise ValueError(f"mode must be 'exact' or 'smooth', got {mode!r}")


def boolean_robust_series(
    psi: BooleanFormula,
    values: np.ndarray,
    mode: str = "exact",
    layout: StateLayout | None = None,
) -> np.ndarray:
    """Vectorized robustness over the rows of a (T, dim) sample array."""
    layout = _resolve_layout(psi, layout)
    X = np.atleast_2d(np.asarray(values, dtype=float))
    if X.shape[1] != layout.total_dim:
        raise DimensionError(
            f"sample rows have dim {X.shape[1]}, layout expects {layout.total_dim}"
        )
    cols = []
    for lit, pos in zip(psi.literals, _literal_positions(psi, layout)):
        Xs = X[:, pos]
        pred = lit.predicate
        if pred.family is PredicateFamily.LINEAR:
            col = Xs @ pred.c + pred.d
        elif pred.family is PredicateFamily.NORM_BALL:
            col = pred.d - np.linalg.norm(Xs @ pred.S.T - pred.c, axis=1)
        else:
            r = Xs - pred.c
            col = pred.d - np.einsum("ij,jk,ik->i", r, pred.Q, r)
        cols.append(-col if lit.negated else col)
    V = np.column_stack(cols)
    if mode == "exact":
        return V.min(axis=1)
    if mode == "smooth":
        m = V.min(axis=1, keepdims=True)
        return (m - np.log(np.exp(m - V).sum(axis=1, keepdims=True)))[:, 0]
    raise ValueError(f"mode must be 'exact' or 'smooth', got {mode!r}")


@dataclass(frozen=True)
class BooleanGradient:
    """Gradient of the smooth robustness at one state."""

    value: float
    gradient: np.ndarray
    agent_blocks: dict[int, np.ndarray]
    degenerate_agents: tuple[int, ...]


def grad_boolean_robust(
    psi: BooleanFormula,
    x,
    layout: StateLayout | None = None,
) -> BooleanGradient:
    """Analytic gradient of the smooth-mode robustness.

    The smooth conjunction weighs each literal gradient by the softmax of
    the negated literal values; a single literal reduces to its own
    gradient.  Agents whose block norm falls under ``GRADIENT_FLOOR`` are
    reported as degenerate rather than raising: the nonzero-gradient
    requirement only has to hold along the funnel region.
    """
    layout = _resolve_layout(psi, layout)
    x = np.asarray(x, dtype=float)
    positions = _literal_positions(psi, layout)
    vals = np.array([lit.value(x[pos]) for lit, pos in zip(psi.literals, positions)])
    m = vals.min()
    w = np.exp(m - vals)
    w /= w.sum()
    grad = np.zeros(layout.total_dim)
    for lit, pos, wk in zip(psi.literals, positions, w):
        grad[pos] += wk * lit.gradient(x[pos])
    blocks = {a: grad[layout.agent_slice(a)].copy() for a in psi.involved_agents}
    degenerate = tuple(
        a for a in psi.involved_agents
        if np.linalg.norm(blocks[a]) < GRADIENT_FLOOR
    )
    return BooleanGradient(smooth_min(vals), grad, blocks, degenerate)


def _window_indices(times: np.ndarray, lo: float, hi: float) -> tuple[int, int]:
    """Index range [i0, i1) of grid points inside [lo, hi], with coverage check."""
    eps = 1e-9 * max(1.0, abs(lo), abs(hi))
    if times[0] > lo + eps or times[-1] < hi - eps:
        raise CoverageError(
            f"grid [{times[0]}, {times[-1]}] does not cover window [{lo}, {hi}]"
        )
    i0 = int(np.searchsorted(times, lo - eps, side="left"))
    i1 = int(np.searchsorted(times, hi + eps, side="right"))
    if i1 <= i0:
        raise CoverageError(f"no grid point falls inside window [{lo}, {hi}]")
    return i0, i1


def _temporal_from_series(
    phi: TemporalFormula,
    times: np.ndarray,
    rho: np.ndarray,
    t: float,
) -> tuple[float, float]:
    """Sampled temporal semantics over a precomputed body-robustness series."""
    a, b = phi.interval
    if phi.op is TemporalOp.ALWAYS:
        i0, i1 = _window_indices(times, t + a, t + b)
        k = i0 + int(np.argmin(rho[i0:i1]))
        return float(rho[k]), float(times[k])
    if phi.op is TemporalOp.EVENTUALLY:
        i0, i1 = _window_indices(times, t + a, t + b)
        k = i0 + int(np.argmax(rho[i0:i1]))
        return float(rho[k]), float(times[k])
    ai, bi = phi.inner
    o0, o1 = _window_indices(times, t + a, t + b)
    best = -np.inf
    best_t = times[o0]
    for k in range(o0, o1):
        t1 = times[k]
        j0, j1 = _window_indices(times, t1 + ai, t1 + bi)
        inner_min = float(rho[j0:j1].min())
        if inner_min > best:
            best, best_t = inner_min, t1
    return float(best), float(best_t)


def temporal_robustness_from_series(
    phi: TemporalFormula,
    times: np.ndarray,
    rho: np.ndarray,
    t: float = 0.0,
) -> tuple[float, float]:
    """Temporal semantics over a precomputed body-robustness series.

    Returns (value, witness time); the witness is the maximizing outer
    grid time for F/FG and the minimizing one for G.
    """
    times = np.asarray(times, dtype=float)
    rho = np.asarray(rho, dtype=float)
    if times.shape != rho.shape:
        raise DimensionError("times and rho series must have equal length")
    return _temporal_from_series(phi, times, rho, float(t))


def eval_temporal_robust(
    phi: TemporalFormula,
    sig: Signal,
    t: float = 0.0,
    mode: str = "exact",
    layout: StateLayout | None = None,
) -> float:
    """Sampled-semantics robustness of the task at time ``t``.

    The continuous-time min/max is replaced by the min/max over grid
    points inside the window; the discretization error is bounded by
    L * dt with L the Lipschitz constant of the body robustness along
    the signal.
    """
    return eval_temporal_robust_witness(phi, sig, t, mode, layout)[0]


def eval_temporal_robust_witness(
    phi: TemporalFormula,
    sig: Signal,
    t: float = 0.0,
    mode: str = "exact",
    layout: StateLayout | None = None,
) -> tuple[float, float]:
    """Like :func:`eval_temporal_robust` but also returns the witness time.

    For F (and FG) the witness is the maximizing grid time t1; for G it is
    the minimizing grid time, i.e. where the task is tightest.
    """
    rho = boolean_robust_series(phi.body, sig.values, mode=mode, layout=layout)
    return _temporal_from_series(phi, sig.times, rho, float(t))


@dataclass(frozen=True)
class RhoOptimum:
    value: float
    maximizer: np.ndarray


def _ascent_seed(psi: BooleanFormula, layout: StateLayout) -> np.ndarray:
    """Least-squares point closest to every centered literal (Chebyshev-like)."""
    rows, rhs = [], []
    for lit in psi.literals:
        pred = lit.predicate
        pos = layout.positions(pred.selector)
        if pred.family is PredicateFamily.NORM_BALL:
            for r in range(pred.S.shape[0]):
                row = np.zeros(layout.total_dim)
                row[pos] = pred.S[r]
                rows.append(row)
                rhs.append(pred.c[r])
        elif pred.family is PredicateFamily.CONCAVE_QUADRATIC:
            for r, p in enumerate(pos):
                row = np.zeros(layout.total_dim)
                row[p] = 1.0
                rows.append(row)
                rhs.append(pred.c[r])
    if not rows:
        return np.zeros(layout.total_dim)
    sol, *_ = np.linalg.lstsq(np.array(rows), np.array(rhs), rcond=None)
    return sol


def rho_opt(
    psi: BooleanFormula,
    layout: StateLayout | None = None,
    tol: float = 1e-8,
    max_iter: int = 500,
) -> RhoOptimum:
    """Global maximum of the body robustness (smooth mode for conjunctions).

    Single balls and quadratics peak at their centers with value d; for a
    conjunction the smooth robustness is concave, so a quasi-Newton ascent
    from the least-squares seed finds the supremum.
    """
    if not psi.is_concave:
        raise ConcavityError("rho_opt requires a concave body (no negated balls)")
    layout = _resolve_layout(psi, layout)
    if len(psi.literals) == 1:
        pred = psi.literals[0].predicate
        x = np.zeros(layout.total_dim)
        pos = layout.positions(pred.selector)
        if pred.family is PredicateFamily.NORM_BALL:
            center, *_ = np.linalg.lstsq(pred.S, pred.c, rcond=None)
            x[pos] = center
            return RhoOptimum(float(pred.d), x)
        if pred.family is PredicateFamily.CONCAVE_QUADRATIC:
            x[pos] = pred.c
            return RhoOptimum(float(pred.d), x)
        raise ConcavityError(
            "a single linear literal has no finite maximum (not well-posed)"
        )

    def neg_value_grad(x):
        g = grad_boolean_robust(psi, x, layout)
        return -g.value, -g.gradient

    res = scipy.optimize.minimize(
        neg_value_grad,
        _ascent_seed(psi, layout),
        jac=True,
        method="BFGS",
        options={"gtol": tol, "maxiter": max_iter},
    )
    # BFGS may stop on line-search precision right at the optimum; accept
    # any terminal point whose gradient already meets the tolerance.
    if not res.success and np.linalg.norm(res.jac) > math.sqrt(tol):
        raise ConvergenceError(f"rho_opt ascent did not converge: {res.message}")
    return RhoOptimum(float(-res.fun), np.asarray(res.x))
