"""Compiled numerical core.

Every hot-path computation (model right-hand side, RK4, barrier cap,
saturations, hysteresis switching and the closed-loop loop) lives here as a
``numba`` function over flat float arrays. The public modules wrap these
with dataclasses, so the Python API and the batch engine share one
implementation of the control law.

Array layouts (index constants below):

* parameters ``p``: a, b, c1, r_death, g_stim, h, k1, k2, k3, p0, s1, s2,
  delta_l, gamma0
* controller vector ``cv``: beta, r_target, alpha, mu2, gamma, T_s, D1, D2
* protocol vector ``pv``: T, tau, C_min, u_bar1, u_bar2, x1_threshold
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

# parameter vector
P_A, P_B, P_C1, P_RD, P_GS, P_H, P_K1, P_K2, P_K3, P_P0, P_S1, P_S2, P_DL, P_G0 = range(14)
# controller vector
C_BETA, C_R, C_ALPHA, C_MU2, C_GAMMA, C_TS, C_D1, C_D2 = range(8)
N_CV = 8
# protocol vector
V_T, V_TAU, V_CMIN, V_UB1, V_UB2, V_THR = range(6)
N_PV = 6

STATUS_OK = 0
STATUS_BLOWUP = 1

# relative tolerance used when locating sampling instants inside sub-periods
_WINDOW_RTOL = 1e-9

_jit = njit(cache=True, nogil=True)


@_jit
def rhs4(x1, x2, x3, x4, u1, u2, p):
    """Derivatives of the four biological states."""
    return (
        p[P_A] * x1 * (1.0 - p[P_B] * x1) - p[P_C1] * x4 * x1 - p[P_K3] * x3 * x1,
        -p[P_DL] * x2 - p[P_K2] * x3 * x2 + p[P_S2],
        -p[P_G0] * x3 + u2,
        (p[P_GS] * x1 / (p[P_H] + x1) * x4 - p[P_RD] * x4 - p[P_P0] * x4 * x1
         - p[P_K1] * x4 * x3 + p[P_S1] * u1),
    )


@_jit
def rhs_into(x, u1, u2, p, out):
    d1, d2, d3, d4 = rhs4(x[0], x[1], x[2], x[3], u1, u2, p)
    out[0] = d1
    out[1] = d2
    out[2] = d3
    out[3] = d4
    out[4] = u1
    out[5] = u2
    out[6] = -1.0


@_jit
def rk4_bio(x1, x2, x3, x4, u1, u2, p, h):
    hh = 0.5 * h
    a1, a2, a3, a4 = rhs4(x1, x2, x3, x4, u1, u2, p)
    b1, b2, b3, b4 = rhs4(x1 + hh * a1, x2 + hh * a2, x3 + hh * a3, x4 + hh * a4, u1, u2, p)
    c1, c2, c3, c4 = rhs4(x1 + hh * b1, x2 + hh * b2, x3 + hh * b3, x4 + hh * b4, u1, u2, p)
    d1, d2, d3, d4 = rhs4(x1 + h * c1, x2 + h * c2, x3 + h * c3, x4 + h * c4, u1, u2, p)
    w = h / 6.0
    return (x1 + w * (a1 + 2.0 * b1 + 2.0 * c1 + d1),
            x2 + w * (a2 + 2.0 * b2 + 2.0 * c2 + d2),
            x3 + w * (a3 + 2.0 * b3 + 2.0 * c3 + d3),
            x4 + w * (a4 + 2.0 * b4 + 2.0 * c4 + d4))


@_jit
def rk4_into(x, u1, u2, p, h, out):
    """Classical RK4 step of the full state; the three linear states
    (accumulators and clock) are integrated exactly by RK4 anyway."""
    y1, y2, y3, y4 = rk4_bio(x[0], x[1], x[2], x[3], u1, u2, p, h)
    out[0] = y1
    out[1] = y2
    out[2] = y3
    out[3] = y4
    out[4] = x[4] + h * u1
    out[5] = x[5] + h * u2
    out[6] = x[6] - h


@_jit
def hold_inplace(x, u1, u2, p, h, n_steps, guard, clamp):
    """Advance ``x`` in place by ``n_steps`` RK4 steps with frozen input,
    optionally clamping x1..x4 at zero after each step.

    Returns (status, index of the last attempted step, clamp count, min x2).
    """
    x1 = x[0]
    x2 = x[1]
    x3 = x[2]
    x4 = x[3]
    clamps = 0
    min_x2 = x2
    status = STATUS_OK
    applied = 0
    for j in range(n_steps):
        y1, y2, y3, y4 = rk4_bio(x1, x2, x3, x4, u1, u2, p, h)
        # NaN fails every comparison, so this also rejects non-finite values
        if not (abs(y1) <= guard and abs(y2) <= guard and abs(y3) <= guard
                and abs(y4) <= guard):
            status = STATUS_BLOWUP
            break
        if clamp:
            if y1 < 0.0:
                y1 = 0.0
                clamps += 1
            if y2 < 0.0:
                y2 = 0.0
                clamps += 1
            if y3 < 0.0:
                y3 = 0.0
                clamps += 1
            if y4 < 0.0:
                y4 = 0.0
                clamps += 1
        x1 = y1
        x2 = y2
        x3 = y3
        x4 = y4
        applied += 1
        if x2 < min_x2:
            min_x2 = x2
    x[0] = x1
    x[1] = x2
    x[2] = x3
    x[3] = x4
    x[4] += applied * h * u1
    x[5] += applied * h * u2
    x[6] -= applied * h
    return status, applied + (status != STATUS_OK), clamps, min_x2


@_jit
def e_metric(x, p):
    # F1(x)/x1 with the x1 factor cancelled analytically
    return p[P_A] * (1.0 - p[P_B] * x[0]) - p[P_C1] * x[3] - p[P_K3] * x[2]


@_jit
def x3_cap(x2, p, beta, mu2, c_min):
    if x2 <= 0.0:
        return 0.0
    num = mu2 * (beta * c_min - x2) + p[P_DL] * x2 - p[P_S2]
    val = num / (-p[P_K2] * x2)
    return val if val > 0.0 else 0.0


@_jit
def _budget_cap(u_bar, budget, used, gamma, x7, tau):
    remaining = budget - used
    cap = u_bar
    if x7 > 0.0:
        v = remaining / (gamma * x7)
        if v < cap:
            cap = v
    v = remaining / tau
    if v < cap:
        cap = v
    if cap <= 0.0:
        return 0.0
    # one held interval must never overdraw the budget in floating point
    while cap > 0.0 and used + tau * cap > budget:
        cap = np.nextafter(cap, 0.0)
    return cap


@_jit
def u_max(x, p, cv, pv):
    tau = pv[V_TAU]
    gamma = cv[C_GAMMA]
    u1 = _budget_cap(pv[V_UB1], cv[C_D1], x[4], gamma, x[6], tau)
    u2 = _budget_cap(pv[V_UB2], cv[C_D2], x[5], gamma, x[6], tau)
    barrier = p[P_G0] * x3_cap(x[1], p, cv[C_BETA], cv[C_MU2], pv[V_CMIN])
    if barrier < u2:
        u2 = barrier
    return u1, u2


@_jit
def in_window(t, t_s, gamma):
    tol = _WINDOW_RTOL * t_s
    n = math.floor((t + tol) / t_s)
    phase = t - n * t_s
    if phase < 0.0:
        phase = 0.0
    return phase < gamma * t_s - tol


@_jit
def hysteresis_on(e, prev_e, r, alpha):
    if e >= -alpha * r:
        return True
    if e <= -r:
        return False
    return (e - prev_e) < 0.0


@_jit
def feedback(x, prev_e, t, p_ctrl, cv, pv):
    """Returns (u1, u2, new prev_E)."""
    new_prev = prev_e
    if x[0] > 0.0:
        new_prev = e_metric(x, p_ctrl)
    if not in_window(t, cv[C_TS], cv[C_GAMMA]) or x[0] <= pv[V_THR]:
        return 0.0, 0.0, new_prev
    if not hysteresis_on(new_prev, prev_e, cv[C_R], cv[C_ALPHA]):
        return 0.0, 0.0, new_prev
    u1, u2 = u_max(x, p_ctrl, cv, pv)
    return u1, u2, new_prev


@_jit
def simulate(x0, p_true, p_ctrl, cv, pv, n_intervals, n_sub, h, guard,
             states, controls):
    """Closed loop over ``n_intervals`` sampling periods.

    Fills ``states`` (n_intervals+1, 7) and ``controls`` (n_intervals, 2).
    Returns (status, fail_time, last good sample index, clamp count,
    min x2 over every internal step).
    """
    tau = pv[V_TAU]
    x = x0.copy()
    for i in range(7):
        states[0, i] = x[i]
    prev_e = np.inf
    clamps = 0
    min_fine = x[1]
    for k in range(n_intervals):
        t = k * tau
        u1, u2, prev_e = feedback(x, prev_e, t, p_ctrl, cv, pv)
        controls[k, 0] = u1
        controls[k, 1] = u2
        # accumulators and clock integrate exactly under a held input
        x5 = x[4] + tau * u1
        x6 = x[5] + tau * u2
        x7 = x0[6] - (k + 1) * tau
        if x7 < 0.0:
            x7 = 0.0
        status, j, c, m = hold_inplace(x, u1, u2, p_true, h, n_sub, guard, True)
        clamps += c
        if m < min_fine:
            min_fine = m
        if status != STATUS_OK:
            return status, t + j * h, k, clamps, min_fine
        x[4] = x5
        x[5] = x6
        x[6] = x7
        for i in range(7):
            states[k + 1, i] = x[i]
    return STATUS_OK, n_intervals * tau, n_intervals, clamps, min_fine


@_jit
def run_batch(x0, params, p_nom, knows_truth, cv, pv, n_intervals, n_sub, h,
              guard, gamma_c, fine, g, blowup, ratio, min_x2, used1, used2):
    """Simulate one design against a block of scenarios and score each one."""
    states = np.empty((n_intervals + 1, 7))
    controls = np.empty((n_intervals, 2))
    c_min = pv[V_CMIN]
    for s in range(params.shape[0]):
        p = params[s]
        p_ctrl = p if knows_truth else p_nom
        status, _, _, _, min_fine = simulate(x0, p, p_ctrl, cv, pv, n_intervals,
                                             n_sub, h, guard, states, controls)
        if status != STATUS_OK:
            blowup[s] = 1
            g[s] = 1
            ratio[s] = np.nan
            min_x2[s] = np.nan
            used1[s] = np.nan
            used2[s] = np.nan
            continue
        blowup[s] = 0
        mx = states[0, 1]
        for k in range(1, n_intervals + 1):
            if states[k, 1] < mx:
                mx = states[k, 1]
        if fine and min_fine < mx:
            mx = min_fine
        rt = states[n_intervals, 0] / states[0, 0]
        ratio[s] = rt
        min_x2[s] = mx
        used1[s] = states[n_intervals, 4]
        used2[s] = states[n_intervals, 5]
        g[s] = 0 if (rt <= gamma_c and mx >= c_min) else 1
