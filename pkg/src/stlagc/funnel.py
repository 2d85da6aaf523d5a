"""Exponential performance funnels and the error transformation chain.

A task with body robustness rho(t) is enforced by keeping

    rho_max - gamma(t)  <  rho(t)  <  rho_max,
    gamma(t) = (gamma0 - gamma_inf) exp(-l t) + gamma_inf,

for all t.  The funnel parameters are designed so that by the critical
time ``t_star`` the lower bound has risen above the target robustness
``r``; containment then implies the timed task holds with margin r.

The controller does not work on rho directly but on the transformed error

    e      = rho - rho_max                  (negative inside the funnel)
    e_hat  = e / gamma(t)                   in (-1, 0)
    eps    = ln(-(e_hat + 1) / e_hat)       unbounded coordinate
    J      = -1 / (gamma * e_hat * (1 + e_hat)) > 0,

whose boundedness certifies funnel containment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np

from .stl_core import TemporalFormula, TemporalOp

__all__ = [
    "FunnelParams",
    "ErrorState",
    "DesignError",
    "gamma",
    "gamma_dot",
    "alpha",
    "error_chain",
    "transform_error",
    "design_funnel",
    "verify_design",
    "t_star_interval",
    "CLAMP_DELTA",
    "DESIGN_MARGIN",
]

#: Half-open-interval guard on the modulated error: e_hat is clamped to
#: [-1 + CLAMP_DELTA, -CLAMP_DELTA] so eps and J stay finite if numerics
#: graze the funnel boundary.  Clamp events are surfaced, never hidden.
CLAMP_DELTA = 1e-9

#: Slack used when checking the strict inequalities of the design rules.
DESIGN_MARGIN = 1e-12


class DesignError(ValueError):
    """Funnel design is infeasible for the given task and overrides."""


@dataclass(frozen=True)
class FunnelParams:
    """Parameters of one funnel: shape, target robustness, critical time."""

    gamma0: float
    gamma_inf: float
    l: float
    rho_max: float
    r: float
    t_star: float

    def __post_init__(self):
        if not self.gamma0 >= self.gamma_inf > 0:
            raise ValueError(
                f"need gamma0 >= gamma_inf > 0, got {self.gamma0}, {self.gamma_inf}"
            )
        if self.l < 0:
            raise ValueError(f"decay rate must be nonnegative, got {self.l}")
        if not 0 < self.r < self.rho_max:
            raise ValueError(f"need 0 < r < rho_max, got r={self.r}, rho_max={self.rho_max}")
        if self.t_star < 0:
            raise ValueError(f"critical time must be nonnegative, got {self.t_star}")

    def lower(self, t):
        return self.rho_max - gamma(self, t)

    def upper(self, t):
        t = np.asarray(t, dtype=float)
        return self.rho_max if t.ndim == 0 else np.full(t.shape, self.rho_max)

    def as_dict(self) -> dict:
        return {
            "gamma0": self.gamma0,
            "gamma_inf": self.gamma_inf,
            "l": self.l,
            "rho_max": self.rho_max,
            "r": self.r,
            "t_star": self.t_star,
        }


def gamma(p: FunnelParams, t):
    """Funnel width at time t (vectorized over t)."""
    t = np.asarray(t, dtype=float)
    out = (p.gamma0 - p.gamma_inf) * np.exp(-p.l * t) + p.gamma_inf
    return float(out) if out.ndim == 0 else out


def gamma_dot(p: FunnelParams, t):
    t = np.asarray(t, dtype=float)
    out = -p.l * (p.gamma0 - p.gamma_inf) * np.exp(-p.l * t)
    return float(out) if out.ndim == 0 else out


def alpha(p: FunnelParams, t):
    """Normalized shrink rate -gamma'/gamma >= 0."""
    t = np.asarray(t, dtype=float)
    out = -gamma_dot(p, t) / gamma(p, t)
    return float(out) if np.ndim(out) == 0 else out


def transform_error(e_hat: float) -> float:
    """Strictly increasing bijection (-1, 0) -> R, zero at -1/2."""
    return math.log(-(e_hat + 1.0) / e_hat)


@dataclass(frozen=True)
class ErrorState:
    """Error chain rho -> e -> e_hat -> eps with the controller gain J."""

    e: float
    e_hat: float
    epsilon: float
    jacobian: float
    alpha: float
    clamped: bool


def error_chain(rho_val: float, p: FunnelParams, t: float) -> ErrorState:
    """Evaluate the full transformation chain at one sample.

    ``e_hat`` is clamped into [-1 + delta, -delta]; the flag signals
    funnel-boundary contact and must be treated as a potential violation
    by whoever monitors the run.
    """
    g = gamma(p, t)
    e = rho_val - p.rho_max
    e_hat = e / g
    clamped = False
    if e_hat >= -CLAMP_DELTA:
        e_hat, clamped = -CLAMP_DELTA, True
    elif e_hat <= -1.0 + CLAMP_DELTA:
        e_hat, clamped = -1.0 + CLAMP_DELTA, True
    eps = transform_error(e_hat)
    jac = -1.0 / (g * e_hat * (1.0 + e_hat))
    return ErrorState(e, e_hat, eps, jac, alpha(p, t), clamped)


# ---------------------------------------------------------------------------
# design


def t_star_interval(phi: TemporalFormula) -> tuple[float, float]:
    """Admissible critical times for the operator of ``phi``.

    G pins t* to the window start; F may place it anywhere in [a, b]; for
    FG any outer witness t1 in [a, b] makes t* = t1 + a_inner admissible.
    """
    a, b = phi.interval
    if phi.op is TemporalOp.ALWAYS:
        return a, a
    if phi.op is TemporalOp.EVENTUALLY:
        return a, b
    ai, _ = phi.inner
    return a + ai, b + ai


def design_funnel(
    phi: TemporalFormula,
    rho_x0: float,
    rho_opt: float,
    r: float | None = None,
    overrides: Mapping[str, float] | None = None,
) -> FunnelParams:
    """Pick funnel parameters realizing the task with target robustness r.

    Every free parameter has a deterministic default inside its admissible
    interval; ``overrides`` may pin any of ``t_star``, ``rho_max``, ``r``,
    ``gamma0``, ``gamma_inf``, ``l``.  The returned parameters always pass
    :func:`verify_design`; infeasible combinations raise ``DesignError``
    instead of being silently adjusted.
    """
    ov = dict(overrides or {})
    if "r" in ov and r is None:
        r = ov.pop("r")
    elif "r" in ov:
        raise DesignError("target robustness given both positionally and in overrides")
    unknown = set(ov) - {"t_star", "rho_max", "gamma0", "gamma_inf", "l"}
    if unknown:
        raise DesignError(f"unknown funnel overrides: {sorted(unknown)}")

    if rho_opt <= 0:
        raise DesignError(f"global body optimum must be positive, got {rho_opt}")
    if r is None:
        r = 0.05 * rho_opt
    if not 0 < r < rho_opt:
        raise DesignError(f"target robustness must lie in (0, {rho_opt}), got {r}")
    if rho_x0 >= rho_opt - _AT_OPTIMUM_TOL * max(1.0, abs(rho_opt)):
        return _design_at_optimum(phi, rho_x0, rho_opt, r, ov)

    lo_ts, hi_ts = t_star_interval(phi)
    # Latest admissible critical time by default: maximal transient time.
    t_star = float(ov.get("t_star", hi_ts))
    if not lo_ts - DESIGN_MARGIN <= t_star <= hi_ts + DESIGN_MARGIN:
        raise DesignError(
            f"critical time {t_star} outside admissible [{lo_ts}, {hi_ts}] "
            f"for operator {phi.op.value}"
        )

    floor = max(0.0, rho_x0)
    rho_max = float(ov.get("rho_max", floor + 0.9 * (rho_opt - floor)))
    if not floor + DESIGN_MARGIN < rho_max < rho_opt - DESIGN_MARGIN:
        raise DesignError(
            f"rho_max={rho_max} outside (max(0, rho(x0)), rho_opt) = "
            f"({floor}, {rho_opt})"
        )
    if r >= rho_max:
        raise DesignError(f"target robustness {r} must stay below rho_max {rho_max}")

    gap0 = rho_max - rho_x0  # > 0 by the rho_max interval
    if "gamma0" in ov:
        gamma0 = float(ov["gamma0"])
    elif t_star > 0:
        gamma0 = 1.2 * gap0
    else:
        if rho_max - r <= gap0:
            raise DesignError(
                "infeasible at t*=0: need rho(x0) > r so that "
                f"(rho_max - rho(x0), rho_max - r] is nonempty "
                f"(rho(x0)={rho_x0}, r={r})"
            )
        gamma0 = 0.5 * (gap0 + (rho_max - r))
    if gamma0 <= gap0 + DESIGN_MARGIN:
        raise DesignError(
            f"gamma0={gamma0} must exceed rho_max - rho(x0) = {gap0}"
        )
    if t_star <= 0 and gamma0 > rho_max - r + DESIGN_MARGIN:
        raise DesignError(
            f"gamma0={gamma0} must not exceed rho_max - r = {rho_max - r} when t*=0"
        )

    cap_inf = min(gamma0, rho_max - r)
    gamma_inf = float(ov.get("gamma_inf", 0.5 * cap_inf))
    if not DESIGN_MARGIN < gamma_inf <= cap_inf + DESIGN_MARGIN:
        raise DesignError(
            f"gamma_inf={gamma_inf} outside (0, min(gamma0, rho_max - r)] = (0, {cap_inf}]"
        )

    if rho_max - gamma0 >= r:
        l = float(ov.get("l", 0.0))
        if l < 0:
            raise DesignError(f"decay rate must be nonnegative, got {l}")
    else:
        if gamma_inf >= rho_max - r - DESIGN_MARGIN:
            raise DesignError(
                f"gamma_inf={gamma_inf} leaves no room below rho_max - r = {rho_max - r}; "
                "the lower bound could never reach the target"
            )
        l_req = -math.log((r + gamma_inf - rho_max) / (gamma_inf - gamma0)) / t_star
        l = float(ov.get("l", l_req))
        if l < l_req - DESIGN_MARGIN:
            raise DesignError(
                f"decay rate {l} too slow: the funnel cannot reach the target "
                f"by t*={t_star} (need at least {l_req})"
            )

    params = FunnelParams(gamma0, gamma_inf, l, rho_max, r, t_star)
    failures = [name for name, ok, _ in verify_design(params, phi, rho_x0, rho_opt) if not ok]
    if failures:  # pragma: no cover - defensive; construction implies these
        raise DesignError(f"designed parameters fail verification: {failures}")
    return params


#: Relative slack below the body optimum under which the standard design
#: rules degenerate (the admissible rho_max interval becomes empty).
_AT_OPTIMUM_TOL = 1e-9


def _design_at_optimum(
    phi: TemporalFormula,
    rho_x0: float,
    rho_opt: float,
    r: float,
    ov: dict,
) -> FunnelParams:
    """Funnel for a task that starts at (or numerically at) its optimum.

    The standard rules place rho_max strictly between rho(x0) and the
    optimum, which is impossible here.  Instead rho_max sits a headroom
    above the optimum: the upper funnel bound becomes unreachable, the
    error transform stays well-defined, and the asymptotic lower bound is
    kept strictly below the optimum so containment remains feasible.
    """
    if r >= rho_x0:
        raise DesignError(
            f"task starts at its optimum {rho_x0} but the target {r} is not "
            "below it; nothing to enforce"
        )
    lo_ts, hi_ts = t_star_interval(phi)
    t_star = float(ov.get("t_star", hi_ts))
    if not lo_ts - DESIGN_MARGIN <= t_star <= hi_ts + DESIGN_MARGIN:
        raise DesignError(
            f"critical time {t_star} outside admissible [{lo_ts}, {hi_ts}]"
        )
    headroom = 0.25 * max(abs(rho_opt), r)
    rho_max = float(ov.get("rho_max", rho_x0 + headroom))
    if rho_max <= rho_x0 + DESIGN_MARGIN:
        raise DesignError(f"rho_max={rho_max} must exceed rho(x0)={rho_x0}")
    gap0 = rho_max - rho_x0
    # loosest admissible funnel: constant width with the lower bound pinned
    # at the target, so an already-satisfied task is not forced to track
    # its optimum more tightly than the target demands
    gamma0 = float(ov.get("gamma0", rho_max - r))
    if gamma0 <= gap0 + DESIGN_MARGIN:
        raise DesignError(f"gamma0={gamma0} must exceed rho_max - rho(x0) = {gap0}")
    # keep the asymptotic lower bound strictly below the achievable optimum
    inf_floor = rho_max - rho_opt
    cap_inf = min(gamma0, rho_max - r)
    if cap_inf <= inf_floor + DESIGN_MARGIN:
        raise DesignError(
            "no admissible asymptotic width: need "
            f"gamma_inf in ({inf_floor}, {cap_inf}]"
        )
    gamma_inf = float(ov.get("gamma_inf", cap_inf))
    if not inf_floor + DESIGN_MARGIN < gamma_inf <= cap_inf + DESIGN_MARGIN:
        raise DesignError(
            f"gamma_inf={gamma_inf} outside ({inf_floor}, {cap_inf}]"
        )
    if rho_max - gamma0 >= r:
        l = float(ov.get("l", 0.0))
        if l < 0:
            raise DesignError(f"decay rate must be nonnegative, got {l}")
    else:
        if t_star <= 0 or gamma_inf >= rho_max - r - DESIGN_MARGIN:
            raise DesignError(
                "the lower bound cannot reach the target: need t* > 0 and "
                "gamma_inf < rho_max - r"
            )
        l_req = -math.log((r + gamma_inf - rho_max) / (gamma_inf - gamma0)) / t_star
        l = float(ov.get("l", l_req))
        if l < l_req - DESIGN_MARGIN:
            raise DesignError(f"decay rate {l} below required {l_req}")
    params = FunnelParams(gamma0, gamma_inf, l, rho_max, r, t_star)
    failures = [
        name for name, ok, _ in verify_design(params, phi, rho_x0, rho_opt) if not ok
    ]
    if failures:  # pragma: no cover - defensive
        raise DesignError(f"designed parameters fail verification: {failures}")
    return params


def verify_design(
    params: FunnelParams,
    phi: TemporalFormula,
    rho_x0: float,
    rho_opt: float,
) -> list[tuple[str, bool, str]]:
    """Independently re-check every design-rule membership.

    Returns (name, ok, detail) triples; used by the design routine itself,
    by the check command, and as the oracle of the randomized design test.
    """
    p = params
    m = DESIGN_MARGIN
    lo_ts, hi_ts = t_star_interval(phi)
    floor = max(0.0, rho_x0)
    at_optimum = rho_x0 >= rho_opt - _AT_OPTIMUM_TOL * max(1.0, abs(rho_opt))
    checks = [
        ("t_star_in_operator_interval", lo_ts - m <= p.t_star <= hi_ts + m,
         f"t*={p.t_star} in [{lo_ts}, {hi_ts}]"),
        ("r_interval", m < p.r < p.rho_max - m, f"r={p.r} in (0, {p.rho_max})"),
        ("l_nonnegative", p.l >= 0, f"l={p.l}"),
    ]
    if at_optimum:
        # degenerate regime: the task starts at its optimum, rho_max sits
        # above it and the asymptotic lower bound must stay reachable
        checks.append(
            ("rho_max_above_start", p.rho_max > rho_x0 + m,
             f"rho_max={p.rho_max} > rho(x0)={rho_x0}")
        )
        inf_floor = p.rho_max - rho_opt
        checks.append(
            ("gamma_inf_interval",
             inf_floor + m < p.gamma_inf <= min(p.gamma0, p.rho_max - p.r) + m,
             f"gamma_inf={p.gamma_inf} in ({inf_floor}, min(gamma0, rho_max - r)]"),
        )
    else:
        checks.append(
            ("rho_max_interval", floor + m < p.rho_max < rho_opt - m,
             f"rho_max={p.rho_max} in ({floor}, {rho_opt})")
        )
        checks.append(
            ("gamma_inf_interval",
             m < p.gamma_inf <= min(p.gamma0, p.rho_max - p.r) + m,
             f"gamma_inf={p.gamma_inf} in (0, min(gamma0, rho_max - r)]"),
        )
    if p.t_star > 0 or at_optimum:
        ok = p.gamma0 > p.rho_max - rho_x0 + m
        detail = f"gamma0={p.gamma0} > rho_max - rho(x0) = {p.rho_max - rho_x0}"
    else:
        ok = (p.rho_max - rho_x0 + m < p.gamma0 <= p.rho_max - p.r + m)
        detail = f"gamma0={p.gamma0} in (rho_max - rho(x0), rho_max - r]"
    checks.append(("gamma0_interval", ok, detail))
    if p.rho_max - p.gamma0 >= p.r:
        checks.append(("decay_rule", p.l >= 0, "any l >= 0 admissible"))
    else:
        num, den = p.r + p.gamma_inf - p.rho_max, p.gamma_inf - p.gamma0
        if num >= 0 or den >= 0 or p.t_star <= 0:
            checks.append(("decay_rule", False, "required decay rate undefined"))
        else:
            l_req = -math.log(num / den) / p.t_star
            checks.append(
                ("decay_rule", p.l >= l_req - m, f"l={p.l} >= required {l_req}")
            )
    reach = p.rho_max - gamma(p, p.t_star)
    checks.append(
        ("target_reached_at_t_star", reach >= p.r - m,
         f"rho_max - gamma(t*) = {reach} >= r = {p.r}")
    )
    checks.append(
        ("initial_containment",
         p.rho_max - gamma(p, 0.0) + m < rho_x0 < p.rho_max - m,
         f"rho(x0)={rho_x0} in ({p.rho_max - gamma(p, 0.0)}, {p.rho_max})")
    )
    return checks
