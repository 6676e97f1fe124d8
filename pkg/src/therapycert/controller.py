"""Sampled state feedback: barrier cap on chemo, budget-aware saturations and
hysteresis switching on the tumor contraction rate E = F1(x)/x1.

The controller evaluates its model on an *assumed* parameter vector (the
nominal one during certification) and never sees a scenario's true
coefficients unless explicitly asked to.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from . import _kernels
from .dynamics import ControlInput, ModelParams, State
from .errors import DomainError
from .therapy import Protocol, TherapyDesign


@dataclass(frozen=True)
class ControllerState:
    prev_E: float = math.inf
    last_u: ControlInput = field(default_factory=ControlInput)


def e_metric(x: State, p: ModelParams, r_target: float | None = None) -> float:
    """Instantaneous relative tumor growth rate dx1/dt / x1.

    ``r_target`` is accepted for symmetry with E(x, r); it only enters the
    downstream comparisons.
    """
    if not x.x1 > 0:
        raise DomainError(f"E is undefined for x1 <= 0 (got {x.x1})")
    return float(_kernels.e_metric(x.to_array(), p.to_array()))


def x3_cap(x: State, p: ModelParams, beta: float, mu2: float, C_min: float) -> float:
    """Largest chemo concentration that keeps dx2/dt >= mu2 (beta C_min - x2)."""
    if not x.x2 > 0:
        raise DomainError(f"barrier cap is undefined for x2 <= 0 (got {x.x2})")
    return float(_kernels.x3_cap(x.x2, p.to_array(), beta, mu2, C_min))


def u_max(x: State, p: ModelParams, design: TherapyDesign, proto: Protocol) -> tuple[float, float]:
    """Saturation levels (u1_max, u2_max) at state ``x``.

    Each is the minimum of the technical rate, the budget spread over the
    remaining treatment time (duty cycle times x7), and the remaining budget
    over one sampling period; u2 is further capped by gamma0 times the
    barrier cap.
    """
    if x.x7 < 0:
        raise DomainError(f"remaining time x7 must be >= 0 (got {x.x7})")
    u1, u2 = _kernels.u_max(x.to_array(), p.to_array(), design.controller_vector(proto),
                            proto.to_vector())
    return float(u1), float(u2)


def feedback_step(x: State, cs: ControllerState, t: float, design: TherapyDesign,
                  proto: Protocol, p_assumed: ModelParams) -> tuple[ControlInput, ControllerState]:
    u1, u2, e = _kernels.feedback(x.to_array(), cs.prev_E, float(t), p_assumed.to_array(),
                                  design.controller_vector(proto), proto.to_vector())
    u = ControlInput(float(u1), float(u2))
    return u, ControllerState(prev_E=float(e), last_u=u)
