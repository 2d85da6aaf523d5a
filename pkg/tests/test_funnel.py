import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stlagc.funnel import (
    CLAMP_DELTA,
    DesignError,
    FunnelParams,
    alpha,
    design_funnel,
    error_chain,
    gamma,
    gamma_dot,
    t_star_interval,
    transform_error,
    verify_design,
)
from stlagc.parsing import parse_formula


def phi_of(text):
    return parse_formula(text)


# -- funnel evaluation -------------------------------------------------------


def test_gamma_endpoints_and_value():
    p = FunnelParams(gamma0=2.0, gamma_inf=0.5, l=1.0, rho_max=1.0, r=0.1, t_star=0.0)
    assert gamma(p, 0.0) == pytest.approx(2.0)
    assert gamma(p, 1e6) == pytest.approx(0.5)
    assert gamma(p, 1.0) == pytest.approx(1.5 * math.exp(-1.0) + 0.5)
    assert alpha(p, 0.0) == pytest.approx(1.5 / 2.0)
    assert gamma_dot(p, 0.0) == pytest.approx(-1.5)


def test_gamma_monotone_and_bounded():
    p = FunnelParams(gamma0=3.0, gamma_inf=0.2, l=0.7, rho_max=1.0, r=0.1, t_star=0.0)
    t = np.linspace(0, 30, 500)
    g = gamma(p, t)
    assert np.all(np.diff(g) <= 1e-15)
    assert np.all(g <= 3.0 + 1e-12) and np.all(g >= 0.2 - 1e-12)


def test_param_validation():
    with pytest.raises(ValueError):
        FunnelParams(0.5, 1.0, 0.0, 1.0, 0.1, 0.0)  # gamma0 < gamma_inf
    with pytest.raises(ValueError):
        FunnelParams(1.0, 0.5, -0.1, 1.0, 0.1, 0.0)  # negative decay
    with pytest.raises(ValueError):
        FunnelParams(1.0, 0.5, 0.0, 1.0, 1.5, 0.0)  # r >= rho_max


# -- error transform -----------------------------------------------------------


def test_transform_midpoint_and_antisymmetry():
    assert transform_error(-0.5) == pytest.approx(0.0)
    assert transform_error(-0.1) == pytest.approx(math.log(9.0))
    assert transform_error(-0.9) == pytest.approx(-math.log(9.0))


def test_error_chain_hand_values(unit_funnel):
    p = FunnelParams(gamma0=1.0, gamma_inf=1.0, l=0.0, rho_max=2.0, r=0.5, t_star=0.0)
    es = error_chain(1.5, p, 0.0)  # e = -0.5, gamma = 1 -> e_hat = -0.5
    assert es.e == pytest.approx(-0.5)
    assert es.e_hat == pytest.approx(-0.5)
    assert es.epsilon == pytest.approx(0.0)
    assert es.jacobian == pytest.approx(4.0)
    assert not es.clamped


def test_error_chain_clamps_at_boundary(unit_funnel):
    es = error_chain(unit_funnel.rho_max + 1.0, unit_funnel, 0.0)
    assert es.clamped and es.e_hat == pytest.approx(-CLAMP_DELTA)
    es_low = error_chain(unit_funnel.rho_max - 10.0, unit_funnel, 0.0)
    assert es_low.clamped and es_low.e_hat == pytest.approx(-1.0 + CLAMP_DELTA)


@given(st.floats(-0.999, -0.001), st.floats(-0.999, -0.001))
def test_transform_strictly_increasing(a, b):
    if a < b:
        assert transform_error(a) < transform_error(b)


@given(st.floats(-0.999, -0.001), st.floats(0.01, 5.0))
def test_jacobian_lower_bound(e_hat, g):
    p = FunnelParams(gamma0=g, gamma_inf=g, l=0.0, rho_max=1.0, r=0.5, t_star=0.0)
    es = error_chain(1.0 + e_hat * g, p, 0.0)
    assert es.jacobian >= 4.0 / g - 1e-9 * (4.0 / g)


# -- design ---------------------------------------------------------------------


def test_design_worked_example():
    # F[0,8] task, overrides pinning everything except the decay rate
    phi = phi_of("F[0,8] (x1 <= 0)")
    params = design_funnel(
        phi, rho_x0=-1.0, rho_opt=2.0, r=0.1,
        overrides={"t_star": 6.0, "rho_max": 1.0, "gamma0": 2.5, "gamma_inf": 0.05},
    )
    assert params.l == pytest.approx(math.log(2.45 / 0.85) / 6.0)
    assert params.rho_max - gamma(params, 6.0) == pytest.approx(0.1, abs=1e-12)


def test_always_pins_critical_time():
    phi = phi_of("G[3,9] (x1 <= 0)")
    assert t_star_interval(phi) == (3.0, 3.0)
    params = design_funnel(phi, rho_x0=0.5, rho_opt=2.0)
    assert params.t_star == 3.0


def test_flat_funnel_keeps_zero_decay():
    # when the initial bound already clears the target, any l >= 0 works
    phi = phi_of("F[0,8] (x1 <= 0)")
    params = design_funnel(
        phi, rho_x0=1.5, rho_opt=2.0, r=0.1, overrides={"rho_max": 1.9, "gamma0": 1.0}
    )
    assert params.l == 0.0
    assert params.rho_max - params.gamma0 >= params.r


def test_fg_default_critical_time_is_latest():
    phi = phi_of("F[0,5] G[10,20] (x1 <= 0)")
    params = design_funnel(phi, rho_x0=-1.0, rho_opt=2.0)
    assert params.t_star == pytest.approx(15.0)


def test_eventually_default_critical_time_is_deadline():
    phi = phi_of("F[2,8] (x1 <= 0)")
    params = design_funnel(phi, rho_x0=-1.0, rho_opt=2.0)
    assert params.t_star == pytest.approx(8.0)


def test_design_output_passes_independent_recheck():
    rng = np.random.default_rng(2)
    shapes = [
        "G[1,7] (x1 <= 0)", "F[0,8] (x1 <= 0)",
        "F[0,5] G[2,6] (x1 <= 0)", "G[0,4] (x1 <= 0)",
    ]
    count = 0
    for _ in range(200):
        phi = phi_of(shapes[rng.integers(len(shapes))])
        rho_opt = float(rng.uniform(0.2, 10.0))
        rho_x0 = float(rho_opt - rng.uniform(0.05, 10.0))
        r = float(rng.uniform(0.01, 0.4) * rho_opt)
        lo_ts, _ = t_star_interval(phi)
        if lo_ts == 0.0 and rho_x0 <= r:
            continue  # infeasible by the t*=0 corner; covered below
        params = design_funnel(phi, rho_x0, rho_opt, r=r)
        for name, ok, detail in verify_design(params, phi, rho_x0, rho_opt):
            assert ok, f"{name}: {detail}"
        count += 1
    assert count > 120


def test_infeasible_at_t0_reported():
    phi = phi_of("G[0,4] (x1 <= 0)")
    with pytest.raises(DesignError, match="t\\*=0"):
        design_funnel(phi, rho_x0=-1.0, rho_opt=2.0, r=0.5)


def test_inconsistent_overrides_rejected():
    phi = phi_of("F[0,8] (x1 <= 0)")
    with pytest.raises(DesignError):
        design_funnel(phi, -1.0, 2.0, overrides={"rho_max": 5.0})  # above optimum
    with pytest.raises(DesignError):
        design_funnel(phi, -1.0, 2.0, overrides={"gamma0": 0.1})  # below the gap
    with pytest.raises(DesignError):
        design_funnel(phi, -1.0, 2.0, r=0.1, overrides={"t_star": 6.0, "l": 0.0001})


def test_at_optimum_design_branch():
    # task already at its global optimum: standard rho_max interval is empty
    phi = phi_of("F[0,5] G[10,20] (x1 <= 0)")
    params = design_funnel(phi, rho_x0=2.0, rho_opt=2.0, r=0.1)
    assert params.rho_max > 2.0
    # lower bound must start and stay below the achievable optimum
    assert params.rho_max - gamma(params, 0.0) < 2.0
    assert params.rho_max - params.gamma_inf < 2.0
    # and still deliver the target at the critical time
    assert params.rho_max - gamma(params, params.t_star) >= params.r - 1e-12
    for name, ok, detail in verify_design(params, phi, 2.0, 2.0):
        assert ok, f"{name}: {detail}"


def test_at_optimum_needs_target_below_start():
    phi = phi_of("F[0,5] G[10,20] (x1 <= 0)")
    with pytest.raises(DesignError, match="target"):
        design_funnel(phi, rho_x0=0.05, rho_opt=0.05, r=0.1)


def test_design_funnel_containment_postconditions():
    phi = phi_of("F[0,8] (x1 <= 0)")
    rho_x0 = -1.0
    params = design_funnel(phi, rho_x0, rho_opt=2.0)
    assert params.rho_max - gamma(params, 0.0) < rho_x0 < params.rho_max
