"""Therapy time structure, design vectors, drug budgets and the design grid."""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import _kernels
from .dynamics import State
from .errors import ConfigError

# canonical dimension order of the design grid; the last one varies fastest
GRID_DIMS: tuple[str, ...] = ("beta", "r_target", "alpha", "mu2", "N_T", "gamma", "gamma_c", "d")

_DIVISIBILITY_TOL = 1e-9


def _default_x0() -> State:
    return State(5e9, 1e8, 0.0, 1e9, 0.0, 0.0, 60.0)


@dataclass(frozen=True)
class Protocol:
    T: float = 60.0
    tau: float = 1.0 / 6.0
    C_min: float = 5e7
    u_bar: tuple[float, float] = (50.0, 1.0)
    x1_threshold: float = 1e4
    x0: State = field(default_factory=_default_x0)

    def __post_init__(self) -> None:
        object.__setattr__(self, "u_bar", tuple(float(v) for v in self.u_bar))
        errs = []
        if not self.T > 0:
            errs.append(f"T must be > 0 (got {self.T})")
        if not self.tau > 0:
            errs.append(f"tau must be > 0 (got {self.tau})")
        elif abs(self.T / self.tau - round(self.T / self.tau)) > _DIVISIBILITY_TOL * self.T / self.tau:
            errs.append(f"T/tau must be an integer (got {self.T / self.tau:.12g})")
        if not self.C_min > 0:
            errs.append(f"C_min must be > 0 (got {self.C_min})")
        if len(self.u_bar) != 2 or any(not (v >= 0 and math.isfinite(v)) for v in self.u_bar):
            errs.append(f"u_bar must be two finite non-negative rates (got {self.u_bar})")
        if not self.x1_threshold > 0:
            errs.append(f"x1_threshold must be > 0 (got {self.x1_threshold})")
        x0 = self.x0.to_array()
        if not np.all(np.isfinite(x0)) or np.any(x0[:6] < 0) or not (0 <= x0[6] <= self.T):
            errs.append(f"x0 must be finite, x1..x6 >= 0 and x7 in [0, T] (got {x0.tolist()})")
        elif x0[0] <= 0:
            errs.append("x0 must have a positive tumor size")
        if errs:
            raise ConfigError("; ".join(errs))

    @property
    def n_intervals(self) -> int:
        return int(round(self.T / self.tau))

    def to_vector(self) -> np.ndarray:
        return np.array([self.T, self.tau, self.C_min, self.u_bar[0], self.u_bar[1],
                         self.x1_threshold])

    def to_dict(self) -> dict:
        d = asdict(self)
        d["u_bar"] = list(self.u_bar)
        d["x0"] = self.x0.to_array().tolist()
        return d

    @classmethod
    def from_dict(cls, data: dict) -> Protocol:
        allowed = {"T", "tau", "C_min", "u_bar", "x1_threshold", "x0"}
        unknown = set(data) - allowed
        if unknown:
            raise ConfigError(f"unknown protocol key(s): {', '.join(sorted(unknown))}")
        kw = dict(data)
        if "x0" in kw:
            kw["x0"] = State.from_array(kw["x0"])
        elif "T" in kw:
            kw["x0"] = _default_x0().replace(x7=float(kw["T"]))
        if "u_bar" in kw:
            kw["u_bar"] = tuple(kw["u_bar"])
        return cls(**kw)


@dataclass(frozen=True)
class TherapyDesign:
    """One candidate therapy: feedback gains plus protocol knobs."""

    beta: float = 1.05       # health-barrier margin on C_min
    r_target: float = 0.5    # targeted contraction rate, 1/day
    alpha: float = 0.5       # hysteresis fraction
    mu2: float = 1.0         # barrier pull-back rate, 1/day
    N_T: int = 6
    gamma: float = 0.4       # duty cycle
    gamma_c: float = 0.1     # required final/initial tumor ratio
    d: float = 0.75          # drug budget fraction

    def sub_period(self, proto: Protocol) -> float:
        return proto.T / self.N_T

    def n_s(self, proto: Protocol) -> int:
        """Number of sampling periods in each treatment window."""
        return int(round(self.gamma * self.sub_period(proto) / proto.tau))

    def budgets(self, proto: Protocol) -> tuple[float, float]:
        return (drug_budget(self.d, self.gamma, proto.T, proto.u_bar[0]),
                drug_budget(self.d, self.gamma, proto.T, proto.u_bar[1]))

    def controller_vector(self, proto: Protocol) -> np.ndarray:
        d1, d2 = self.budgets(proto)
        return np.array([self.beta, self.r_target, self.alpha, self.mu2, self.gamma,
                         self.sub_period(proto), d1, d2])

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> TherapyDesign:
        unknown = set(data) - set(GRID_DIMS)
        if unknown:
            raise ConfigError(f"unknown design key(s): {', '.join(sorted(unknown))}")
        kw = {k: (int(v) if k == "N_T" else float(v)) for k, v in data.items()}
        return cls(**kw)


_SIM1 = TherapyDesign(beta=1.05, r_target=0.5, alpha=0.5, N_T=6, gamma=0.4, d=0.75)
# reference therapies: a baseline, longer duty cycle, tighter hysteresis, smaller budget
PRESETS: dict[str, TherapyDesign] = {
    "sim1": _SIM1,
    "sim2": replace(_SIM1, gamma=0.7),
    "sim3": replace(_SIM1, gamma=0.7, alpha=0.1),
    "sim4": replace(_SIM1, gamma=0.7, d=0.5),
}


def drug_budget(d: float, gamma: float, T: float, u_bar_i: float) -> float:
    """Total quantity of drug allotted to the therapy, d * gamma * T * u_bar."""
    if min(d, gamma, T, u_bar_i) < 0:
        raise ConfigError("drug budget arguments must be non-negative")
    return d * gamma * T * u_bar_i


def validate_protocol(design: TherapyDesign, proto: Protocol) -> list[str]:
    """List every structural or range violation of ``design`` (empty when valid)."""
    out = []
    if not (isinstance(design.N_T, (int, np.integer)) and design.N_T >= 1):
        out.append(f"N_T must be a positive integer (got {design.N_T!r})")
    if not (0.0 < design.gamma <= 1.0):
        out.append(f"gamma must lie in (0, 1] (got {design.gamma})")
    if not design.beta > 1.0:
        out.append(f"beta must be > 1 (got {design.beta})")
    if not (0.0 < design.alpha < 1.0):
        out.append(f"alpha must lie in (0, 1) (got {design.alpha})")
    if not (0.0 <= design.gamma_c < 1.0):
        out.append(f"gamma_c must lie in [0, 1) (got {design.gamma_c})")
    if not (0.0 < design.d <= 1.0):
        out.append(f"d must lie in (0, 1] (got {design.d})")
    if not (design.r_target >= 0.0 and math.isfinite(design.r_target)):
        out.append(f"r_target must be finite and >= 0 (got {design.r_target})")
    if not (design.mu2 >= 0.0 and math.isfinite(design.mu2)):
        out.append(f"mu2 must be finite and >= 0 (got {design.mu2})")
    if isinstance(design.N_T, (int, np.integer)) and design.N_T >= 1 and design.gamma > 0:
        steps = design.gamma * (proto.T / design.N_T) / proto.tau
        if abs(steps - round(steps)) > _DIVISIBILITY_TOL * max(1.0, steps):
            out.append(
                f"gamma*T/N_T = {design.gamma * proto.T / design.N_T:.12g} d is not a multiple "
                f"of tau ({steps:.12g} sampling periods)")
    return out


def in_treatment_window(t: float, design: TherapyDesign, proto: Protocol) -> bool:
    """Whether injection is allowed at time ``t`` (window [0, gamma T_s) of each sub-period)."""
    return bool(_kernels.in_window(float(t), design.sub_period(proto), float(design.gamma)))


@dataclass(frozen=True)
class DesignGrid:
    """Cartesian product of per-dimension candidate values, enumerated row-major.

    Indices are 0-based; the last entry of ``GRID_DIMS`` varies fastest.
    """

    dims: dict[str, tuple]
    designs: tuple[TherapyDesign, ...]

    def __len__(self) -> int:
        return len(self.designs)

    def __getitem__(self, i: int) -> TherapyDesign:
        return self.designs[i]

    def __iter__(self):
        return iter(self.designs)

    @property
    def n_theta(self) -> int:
        return len(self.designs)

    def index_of(self, design: TherapyDesign) -> int:
        idx = 0
        for name in GRID_DIMS:
            values = self.dims[name]
            try:
                pos = values.index(getattr(design, name))
            except ValueError:
                raise KeyError(f"{name}={getattr(design, name)!r} not on the grid") from None
            idx = idx * len(values) + pos
        return idx

    def to_dict(self) -> dict:
        return {name: list(self.dims[name]) for name in GRID_DIMS}


def build_design_grid(values: dict, proto: Protocol, defaults: TherapyDesign | None = None) -> DesignGrid:
    """Enumerate every combination of the per-dimension candidate lists.

    Dimensions missing from ``values`` take a single value from ``defaults``.
    Any invalid combination aborts construction so that the grid size used by
    the sample-size bound is always the enumerated size.
    """
    defaults = defaults or TherapyDesign()
    unknown = set(values) - set(GRID_DIMS)
    if unknown:
        raise ConfigError(f"unknown grid dimension(s): {', '.join(sorted(unknown))}")
    dims: dict[str, tuple] = {}
    for name in GRID_DIMS:
        raw = values.get(name, [getattr(defaults, name)])
        if not isinstance(raw, (list, tuple)):
            raw = [raw]
        if len(raw) == 0:
            raise ConfigError(f"grid dimension {name!r} is empty")
        cast = int if name == "N_T" else float
        if name == "N_T" and any(float(v) != int(v) for v in raw):
            raise ConfigError(f"N_T values must be integers (got {list(raw)})")
        vals = tuple(cast(v) for v in raw)
        if len(set(vals)) != len(vals):
            raise ConfigError(f"grid dimension {name!r} has duplicate values {list(vals)}")
        dims[name] = vals

    designs = []
    for combo in itertools.product(*(dims[n] for n in GRID_DIMS)):
        design = TherapyDesign(**dict(zip(GRID_DIMS, combo)))
        problems = validate_protocol(design, proto)
        if problems:
            raise ConfigError(f"invalid grid point {design}: " + "; ".join(problems))
        designs.append(design)
    return DesignGrid(dims=dims, designs=tuple(designs))
