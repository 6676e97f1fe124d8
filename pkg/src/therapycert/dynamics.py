"""Tumor / immune / chemotherapy model with seven states and two inputs.

States: tumor cells x1, circulating lymphocytes x2, chemo concentration x3,
effector immune cells x4, delivered immuno drug x5, delivered chemo drug x6
and remaining therapy time x7. Inputs: immune-cell injection rate u1 and
chemo injection rate u2.
"""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import _kernels
from .errors import ConfigError, DomainError

PARAM_NAMES: tuple[str, ...] = (
    "a", "b", "c1", "r_death", "g_stim", "h", "k1", "k2", "k3",
    "p0", "s1", "s2", "delta_l", "gamma0",
)
STATE_NAMES: tuple[str, ...] = ("x1", "x2", "x3", "x4", "x5", "x6", "x7")

# resampling budget for Gaussian draws that produce a non-positive coefficient
MAX_GAUSSIAN_ATTEMPTS = 100


@dataclass(frozen=True)
class ModelParams:
    a: float         # tumor growth rate, 1/day
    b: float         # inverse carrying capacity, 1/cell
    c1: float        # effector kill coefficient, 1/(cell day)
    r_death: float   # effector natural death rate, 1/day
    g_stim: float    # effector stimulation gain, 1/day
    h: float         # stimulation half-saturation
    k1: float        # chemo kill rate on effectors, 1/day
    k2: float        # chemo kill rate on lymphocytes, 1/day
    k3: float        # chemo kill rate on tumor, 1/day
    p0: float        # effector inactivation by tumor, 1/(cell day)
    s1: float        # effector conversion of injected immuno drug
    s2: float        # lymphocyte source, cell/day
    delta_l: float   # lymphocyte death rate, 1/day
    gamma0: float    # chemo decay rate, 1/day

    def __post_init__(self) -> None:
        bad = [n for n in PARAM_NAMES
               if not (math.isfinite(getattr(self, n)) and getattr(self, n) > 0.0)]
        if bad:
            raise ConfigError(f"model parameters must be finite and > 0: {', '.join(bad)}")

    def to_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in PARAM_NAMES], dtype=float)

    @classmethod
    def from_array(cls, arr) -> ModelParams:
        arr = np.asarray(arr, dtype=float)
        if arr.shape != (len(PARAM_NAMES),):
            raise ConfigError(f"expected {len(PARAM_NAMES)} parameters, got shape {arr.shape}")
        return cls(*(float(v) for v in arr))

    def as_dict(self) -> dict[str, float]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> ModelParams:
        unknown = set(data) - set(PARAM_NAMES)
        if unknown:
            raise ConfigError(f"unknown model parameter(s): {', '.join(sorted(unknown))}")
        missing = [n for n in PARAM_NAMES if n not in data]
        if missing:
            raise ConfigError(f"missing model parameter(s): {', '.join(missing)}")
        return cls(**{n: float(data[n]) for n in PARAM_NAMES})


def nominal_params(gamma0: float = 0.9) -> ModelParams:
    """Nominal coefficients of the combined immuno/chemotherapy model.

    The published table leaves the chemo decay rate unusable (printed as
    zero), which would forbid any chemo injection through the barrier cap;
    ``gamma0`` therefore defaults to 0.9/day and can be overridden.
    """
    return ModelParams(
        a=4.31e-3, b=1.02e-14, c1=3.41e-10,
        r_death=4.12e-2, g_stim=1.5e-2, h=2.02e1,
        k1=8e-1, k2=6e-1, k3=6e-1,
        p0=2e-11, s1=1.2e4, s2=7.5e8, delta_l=1.2e-2,
        gamma0=gamma0,
    )


@dataclass(frozen=True)
class State:
    x1: float
    x2: float
    x3: float
    x4: float
    x5: float
    x6: float
    x7: float

    def to_array(self) -> np.ndarray:
        return np.array([self.x1, self.x2, self.x3, self.x4, self.x5, self.x6, self.x7],
                        dtype=float)

    @classmethod
    def from_array(cls, arr) -> State:
        arr = np.asarray(arr, dtype=float)
        if arr.shape != (7,):
            raise ConfigError(f"state must have 7 components, got shape {arr.shape}")
        return cls(*(float(v) for v in arr))

    def replace(self, **kw) -> State:
        return replace(self, **kw)


@dataclass(frozen=True)
class ControlInput:
    u1: float = 0.0
    u2: float = 0.0

    def __post_init__(self) -> None:
        if not (self.u1 >= 0.0 and self.u2 >= 0.0):
            raise DomainError(f"control inputs must be non-negative, got ({self.u1}, {self.u2})")


def rhs(x: State, u: ControlInput, p: ModelParams) -> np.ndarray:
    """Time derivative of the seven states under input ``u``."""
    xa = x.to_array()
    if not np.all(np.isfinite(xa)):
        raise DomainError(f"non-finite state {xa}")
    if not (math.isfinite(u.u1) and math.isfinite(u.u2)):
        raise DomainError(f"non-finite input ({u.u1}, {u.u2})")
    out = np.empty(7)
    _kernels.rhs_into(xa, float(u.u1), float(u.u2), p.to_array(), out)
    return out


class UncertaintyKind(str, enum.Enum):
    UNIFORM_INTERVAL = "uniform_interval"
    GAUSSIAN = "gaussian"
    TRUNCATED_GAUSSIAN = "truncated_gaussian"


@dataclass(frozen=True)
class UncertaintyModel:
    """Probability measure over the 14 model coefficients.

    ``lam1``/``lam2`` scale the nominal vector into per-parameter intervals
    (uniform support, or truncation bounds for the truncated Gaussian).
    Gaussian spread is given either by ``rel_std`` (diagonal, relative to
    nominal) or by an explicit 14x14 ``cov``.
    """

    kind: UncertaintyKind = UncertaintyKind.UNIFORM_INTERVAL
    lam1: float = 0.9
    lam2: float = 1.1
    rel_std: float | tuple[float, ...] = 0.1
    cov: tuple[tuple[float, ...], ...] | None = None
    _factor: np.ndarray | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", UncertaintyKind(self.kind))
        if self.kind is not UncertaintyKind.GAUSSIAN:
            if not (0.0 < self.lam1 <= 1.0 <= self.lam2 and math.isfinite(self.lam2)):
                raise ConfigError(
                    f"interval factors must satisfy 0 < lam1 <= 1 <= lam2, got ({self.lam1}, {self.lam2})")
        if self.kind is not UncertaintyKind.UNIFORM_INTERVAL and self.cov is not None:
            cov = np.asarray(self.cov, dtype=float)
            if cov.shape != (14, 14) or not np.all(np.isfinite(cov)):
                raise ConfigError("covariance must be a finite 14x14 matrix")
            if not np.allclose(cov, cov.T, rtol=1e-12, atol=0.0):
                raise ConfigError("covariance must be symmetric")
            w, v = np.linalg.eigh(cov)
            if w.min() < -1e-10 * max(1.0, abs(w).max()):
                raise ConfigError("covariance must be positive semidefinite")
            object.__setattr__(self, "cov", tuple(tuple(float(c) for c in row) for row in cov))
            object.__setattr__(self, "_factor", v * np.sqrt(np.clip(w, 0.0, None)))
        elif self.kind is not UncertaintyKind.UNIFORM_INTERVAL:
            std = np.broadcast_to(np.asarray(self.rel_std, dtype=float), (14,))
            if not np.all(np.isfinite(std)) or np.any(std < 0.0):
                raise ConfigError("relative standard deviations must be finite and >= 0")

    def _gaussian_draw(self, nom: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        z = rng.standard_normal(14)
        if self._factor is not None:
            return nom + self._factor @ z
        std = np.broadcast_to(np.asarray(self.rel_std, dtype=float), (14,))
        return nom * (1.0 + std * z)

    def to_dict(self) -> dict:
        d = {"kind": self.kind.value, "lam1": self.lam1, "lam2": self.lam2,
             "rel_std": list(self.rel_std) if isinstance(self.rel_std, tuple) else self.rel_std}
        if self.cov is not None:
            d["cov"] = [list(r) for r in self.cov]
        return d

    @classmethod
    def from_dict(cls, data: dict) -> UncertaintyModel:
        allowed = {"kind", "lam1", "lam2", "rel_std", "cov"}
        unknown = set(data) - allowed
        if unknown:
            raise ConfigError(f"unknown uncertainty key(s): {', '.join(sorted(unknown))}")
        kw = dict(data)
        if isinstance(kw.get("rel_std"), list):
            kw["rel_std"] = tuple(float(v) for v in kw["rel_std"])
        if kw.get("cov") is not None:
            kw["cov"] = tuple(tuple(float(c) for c in row) for row in kw["cov"])
        try:
            kw["kind"] = UncertaintyKind(kw.get("kind", UncertaintyKind.UNIFORM_INTERVAL))
        except ValueError as exc:
            raise ConfigError(f"unknown uncertainty kind {data.get('kind')!r}") from exc
        return cls(**kw)


def sample_params(model: UncertaintyModel, p_nom: ModelParams,
                  rng: np.random.Generator) -> ModelParams:
    """Draw one parameter vector from ``model`` around ``p_nom``."""
    nom = p_nom.to_array()
    if model.kind is UncertaintyKind.UNIFORM_INTERVAL:
        if model.lam1 == model.lam2:
            return replace(p_nom)
        return ModelParams.from_array(nom * rng.uniform(model.lam1, model.lam2, size=14))
    if model.kind is UncertaintyKind.TRUNCATED_GAUSSIAN:
        draw = np.clip(model._gaussian_draw(nom, rng), model.lam1 * nom, model.lam2 * nom)
        return ModelParams.from_array(draw)
    for _ in range(MAX_GAUSSIAN_ATTEMPTS):
        draw = model._gaussian_draw(nom, rng)
        if np.all(draw > 0.0):
            return ModelParams.from_array(draw)
    raise ConfigError(
        f"Gaussian model produced non-positive parameters in {MAX_GAUSSIAN_ATTEMPTS} attempts; "
        "reduce the spread or use the truncated Gaussian")

