from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from therapycert import _kernels
from therapycert.controller import ControllerState, e_metric, feedback_step, u_max, x3_cap
from therapycert.dynamics import ControlInput, State, nominal_params, rhs
from therapycert.errors import DomainError
from therapycert.therapy import PRESETS, Protocol

X0 = State(5e9, 1e8, 0.0, 1e9, 0.0, 0.0, 60.0)


def test_e_metric_at_initial_state():
    # a(1 - b x1) - c1 x4 - k3 x3 = 4.31e-3 * (1 - 5.1e-5) - 0.341
    assert e_metric(X0, nominal_params()) == pytest.approx(-0.33669, abs=1e-5)


def test_e_metric_equals_relative_growth():
    p = nominal_params()
    x = X0.replace(x3=0.3)
    assert e_metric(x, p) == pytest.approx(rhs(x, ControlInput(), p)[0] / x.x1, rel=1e-12)


def test_e_metric_undefined_without_tumor():
    with pytest.raises(DomainError):
        e_metric(X0.replace(x1=0.0), nominal_params())


def test_x3_cap_value_and_identity():
    p = nominal_params()
    cap = x3_cap(X0, p, 1.05, 1.0, 5e7)
    # (mu2 (beta Cmin - x2) + dl x2 - s2) / (-k2 x2)
    assert cap == pytest.approx((1.0 * (5.25e7 - 1e8) + 1.2e6 - 7.5e8) / (-0.6 * 1e8), rel=1e-12)
    assert cap == pytest.approx(13.2717, abs=1e-4)
    dx2 = rhs(X0.replace(x3=cap), ControlInput(), p)[1]
    assert dx2 == pytest.approx(1.0 * (5.25e7 - 1e8), rel=1e-9)


def test_x3_cap_is_floored_at_zero():
    p = nominal_params()
    # the cap is a concentration and never goes negative
    tight = x3_cap(X0.replace(x2=1e7), p, 1.05, 1.0, 5e7)
    assert tight >= 0.0
    assert _kernels.x3_cap(-1.0, p.to_array(), 1.05, 1.0, 5e7) == 0.0
    with pytest.raises(DomainError):
        x3_cap(X0.replace(x2=0.0), p, 1.05, 1.0, 5e7)


@settings(max_examples=200, deadline=None)
@given(st.floats(1e6, 1e10), st.floats(1.01, 3.0), st.floats(0.1, 5.0), st.floats(1e6, 1e8))
def test_barrier_identity_property(x2, beta, mu2, c_min):
    p = nominal_params()
    x = X0.replace(x2=x2)
    cap = x3_cap(x, p, beta, mu2, c_min)
    if cap > 0:
        resid = rhs(x.replace(x3=cap), ControlInput(), p)[1] - mu2 * (beta * c_min - x2)
        scale = max(abs(p.s2), abs(mu2 * (beta * c_min - x2)), p.delta_l * x2)
        assert abs(resid) <= 1e-9 * scale


def test_u_max_initial_state_sim1():
    p, proto = nominal_params(), Protocol()
    u1, u2 = u_max(X0, p, PRESETS["sim1"], proto)
    # budgets 900 and 18, spread over gamma * x7 = 24 days
    assert u1 == pytest.approx(37.5)
    assert u2 == pytest.approx(0.75)


def test_u_max_respects_barrier_and_exhaustion():
    p, proto = nominal_params(), Protocol()
    design = PRESETS["sim1"]
    low = X0.replace(x2=5.2e7)
    cap = x3_cap(low, p, design.beta, design.mu2, proto.C_min)
    assert u_max(low, p, design, proto)[1] <= p.gamma0 * cap + 1e-15
    d1, d2 = design.budgets(proto)
    spent = X0.replace(x5=d1, x6=d2)
    assert u_max(spent, p, design, proto) == (0.0, 0.0)


def test_u_max_never_overdraws_one_interval():
    p, proto = nominal_params(), Protocol()
    design = PRESETS["sim1"]
    d1, d2 = design.budgets(proto)
    rng = np.random.default_rng(0)
    for _ in range(500):
        used1, used2 = rng.uniform(0, d1), rng.uniform(0, d2)
        x = X0.replace(x5=used1, x6=used2, x7=rng.uniform(0, 60))
        u1, u2 = u_max(x, p, design, proto)
        assert used1 + proto.tau * u1 <= d1
        assert used2 + proto.tau * u2 <= d2


@pytest.mark.parametrize("e, prev, expected", [
    (-0.1, math.inf, True),     # above -alpha r
    (-0.6, -0.1, False),        # below -r
    (-0.3, -0.2, True),         # in band, decreasing
    (-0.3, -0.4, False),        # in band, increasing
    (-0.3, -0.3, False),        # in band, flat
    (-0.25, -0.1, True),        # exactly -alpha r
    (-0.5, -0.6, False),        # exactly -r
])
def test_hysteresis_switching(e, prev, expected):
    assert _kernels.hysteresis_on(e, prev, 0.5, 0.5) is expected


def test_feedback_first_sample_injects_saturation():
    p, proto = nominal_params(), Protocol()
    u, cs = feedback_step(X0, ControllerState(), 0.0, PRESETS["sim1"], proto, p)
    assert (u.u1, u.u2) == pytest.approx((37.5, 0.75))
    assert cs.prev_E == pytest.approx(e_metric(X0, p))


def test_feedback_off_outside_window_but_tracks_e():
    p, proto = nominal_params(), Protocol()
    x = X0.replace(x7=55.0)
    u, cs = feedback_step(x, ControllerState(prev_E=1.0), 5.0, PRESETS["sim1"], proto, p)
    assert (u.u1, u.u2) == (0.0, 0.0)
    assert cs.prev_E == pytest.approx(e_metric(x, p))


def test_feedback_off_below_tumor_threshold():
    p, proto = nominal_params(), Protocol()
    u, _ = feedback_step(X0.replace(x1=5e3), ControllerState(), 0.0, PRESETS["sim1"], proto, p)
    assert (u.u1, u.u2) == (0.0, 0.0)
