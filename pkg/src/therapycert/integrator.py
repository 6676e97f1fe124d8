"""Fixed-step RK4 integration of the closed loop with sample-and-hold inputs."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels
from .dynamics import ControlInput, ModelParams, State, nominal_params
from .errors import BlowUpError, ConfigError, DomainError
from .therapy import Protocol, TherapyDesign, validate_protocol

log = logging.getLogger(__name__)

DEFAULT_SUBSTEPS = 8
DEFAULT_BLOWUP_GUARD = 1e16


@dataclass(frozen=True)
class SimConfig:
    """Numerical settings. ``h=None`` means tau / 8."""

    h: float | None = None
    record_stride: int = 1
    blowup_guard: float = DEFAULT_BLOWUP_GUARD
    fine_health_check: bool = False

    def __post_init__(self) -> None:
        if self.h is not None and not (self.h > 0 and math.isfinite(self.h)):
            raise ConfigError(f"integration step must be finite and > 0 (got {self.h})")
        if not (isinstance(self.record_stride, int) and self.record_stride >= 1):
            raise ConfigError(f"record_stride must be a positive integer (got {self.record_stride})")
        if not (math.isfinite(self.blowup_guard) and self.blowup_guard > 0):
            raise ConfigError(f"blowup_guard must be finite and > 0 (got {self.blowup_guard})")

    def step(self, tau: float) -> float:
        return tau / DEFAULT_SUBSTEPS if self.h is None else self.h

    def substeps(self, tau: float) -> int:
        n = tau / self.step(tau)
        if abs(n - round(n)) > 1e-9 * n or round(n) < 1:
            raise ConfigError(f"tau/h must be a positive integer (got {n:.12g})")
        return int(round(n))

    def to_dict(self) -> dict:
        return {"h": self.h, "record_stride": self.record_stride,
                "blowup_guard": self.blowup_guard, "fine_health_check": self.fine_health_check}

    @classmethod
    def from_dict(cls, data: dict) -> SimConfig:
        unknown = set(data) - {"h", "record_stride", "blowup_guard", "fine_health_check"}
        if unknown:
            raise ConfigError(f"unknown sim key(s): {', '.join(sorted(unknown))}")
        return cls(**data)


@dataclass(frozen=True)
class Trajectory:
    """States at every sampling instant k*tau and the inputs held after them."""

    times: np.ndarray      # (K+1,)
    states: np.ndarray     # (K+1, 7)
    controls: np.ndarray   # (K, 2)
    blown_up: bool = False
    fail_time: float | None = None
    clamp_count: int = 0
    min_x2_fine: float = math.nan

    @property
    def n_samples(self) -> int:
        return self.states.shape[0]

    @property
    def min_x2(self) -> float:
        return float(self.states[:, 1].min())

    @property
    def contraction_ratio(self) -> float:
        return float(self.states[-1, 0] / self.states[0, 0])

    @property
    def x5_total(self) -> float:
        return float(self.states[-1, 4])

    @property
    def x6_total(self) -> float:
        return float(self.states[-1, 5])

    def summary(self) -> dict:
        return {
            "contraction_ratio": self.contraction_ratio,
            "min_x2": self.min_x2,
            "min_x2_fine": self.min_x2_fine,
            "drug1_used": self.x5_total,
            "drug2_used": self.x6_total,
            "clamp_count": self.clamp_count,
            "blown_up": self.blown_up,
            "fail_time": self.fail_time,
        }

    def write_csv(self, path: str | Path, stride: int = 1) -> None:
        """Columns t, x1..x7, u1, u2; the final row has no applied input."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x1", "x2", "x3", "x4", "x5", "x6", "x7", "u1", "u2"])
            n_ctrl = self.controls.shape[0]
            for k in range(0, self.n_samples, stride):
                u = self.controls[k] if k < n_ctrl else ("", "")
                w.writerow([repr(float(self.times[k]))]
                           + [repr(float(v)) for v in self.states[k]]
                           + [repr(float(v)) if v != "" else "" for v in u])


def rk4_step(x: State, u: ControlInput, p: ModelParams, h: float, t: float = math.nan) -> State:
    """One classical Runge-Kutta step with ``u`` frozen. ``t`` only labels errors."""
    xa = x.to_array()
    if not np.all(np.isfinite(xa)):
        raise DomainError(f"non-finite state {xa}")
    out = np.empty(7)
    _kernels.rk4_into(xa, float(u.u1), float(u.u2), p.to_array(), float(h), out)
    if not np.all(np.isfinite(out)):
        raise BlowUpError(t + h if math.isfinite(t) else h, detail="non-finite RK4 update")
    return State.from_array(out)


def integrate_hold(x: State, u: ControlInput, p: ModelParams, duration: float,
                   cfg: SimConfig, tau: float = 1.0 / 6.0, t0: float = 0.0) -> State:
    """Integrate over ``duration`` with ``u`` held, clamping x1..x4 at zero.

    The step is ``cfg.h``, or ``tau / 8`` when unset.
    """
    step = cfg.step(tau)
    if duration == 0:
        return x
    n = duration / step
    if abs(n - round(n)) > 1e-9 * max(1.0, n) or round(n) < 1:
        raise ConfigError(f"duration {duration} is not a multiple of h={step}")
    xa = x.to_array()
    status, j, _, _ = _kernels.hold_inplace(xa, float(u.u1), float(u.u2), p.to_array(),
                                             float(step), int(round(n)), cfg.blowup_guard, True)
    if status != _kernels.STATUS_OK:
        raise BlowUpError(t0 + j * step)
    return State.from_array(xa)


def simulate_closed_loop(design: TherapyDesign, p: ModelParams, x0: State | None = None,
                         proto: Protocol | None = None, cfg: SimConfig | None = None,
                         p_assumed: ModelParams | None = None, raise_on_blowup: bool = True,
                         design_id: int | None = None, scenario_id: int | None = None) -> Trajectory:
    """Run the sampled feedback therapy ``design`` on the model with coefficients ``p``.

    The controller uses ``p_assumed`` (nominal coefficients by default).
    """
    proto = proto or Protocol()
    cfg = cfg or SimConfig()
    x0 = x0 if x0 is not None else proto.x0
    problems = validate_protocol(design, proto)
    if problems:
        raise ConfigError("; ".join(problems))
    p_assumed = p_assumed or nominal_params()
    n_int = proto.n_intervals
    states = np.empty((n_int + 1, 7))
    controls = np.zeros((n_int, 2))
    status, fail_time, last_k, clamps, min_fine = _kernels.simulate(
        x0.to_array(), p.to_array(), p_assumed.to_array(), design.controller_vector(proto),
        proto.to_vector(), n_int, cfg.substeps(proto.tau), cfg.step(proto.tau),
        cfg.blowup_guard, states, controls)
    if clamps:
        log.debug("population clamp activated %d times", clamps)
    times = np.arange(n_int + 1) * proto.tau
    if status != _kernels.STATUS_OK:
        if raise_on_blowup:
            raise BlowUpError(fail_time, design_id, scenario_id)
        return Trajectory(times[: last_k + 1], states[: last_k + 1], controls[:last_k],
                          blown_up=True, fail_time=float(fail_time), clamp_count=int(clamps),
                          min_x2_fine=float(min_fine))
    return Trajectory(times, states, controls, clamp_count=int(clamps), min_x2_fine=float(min_fine))
