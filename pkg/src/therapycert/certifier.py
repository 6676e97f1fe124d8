"""Scenario-based certification of a finite set of therapy designs.

Pipeline: sample size -> scenario draw -> design x scenario failure matrix
-> admissible set (at most ``m`` failures) -> cheapest admissible design,
plus out-of-sample validation of a chosen design on fresh scenarios.
"""

from __future__ import annotations

import csv
import enum
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .dynamics import PARAM_NAMES, ModelParams, UncertaintyModel, nominal_params, sample_params
from .errors import ConfigError
from .integrator import SimConfig, Trajectory
from .rng import CERT_LABEL, VALID_LABEL, stream
from .therapy import DesignGrid, Protocol, TherapyDesign, validate_protocol

log = logging.getLogger(__name__)

# scenarios handed to one worker call; fixed so work layout never depends on thread count
CHUNK = 64

SAMPLE_SIZE_NOTE = (
    "published reference sample sizes are about 10-13% larger than this bound "
    "(e.g. 132 vs 117 at n_theta=1, eta=0.1; 2155 vs 1942 at n_theta=576, eta=0.01); "
    "set N_explicit to force a specific N"
)


# ---------------------------------------------------------------- sample size

def sample_size_bound(eta: float, delta: float, m: int, n_theta: int) -> float:
    """Real-valued right-hand side of the discrete-design sample-size bound."""
    if not (0.0 < eta < 1.0):
        raise ConfigError(f"eta must lie in (0, 1) (got {eta})")
    if not (0.0 < delta < 1.0):
        raise ConfigError(f"delta must lie in (0, 1) (got {delta})")
    if int(m) != m or m < 0:
        raise ConfigError(f"m must be a non-negative integer (got {m})")
    if int(n_theta) != n_theta or n_theta < 1:
        raise ConfigError(f"n_theta must be a positive integer (got {n_theta})")
    log_term = math.log(n_theta / delta)
    return (m + log_term + math.sqrt(2.0 * m * log_term)) / eta


def sample_size(eta: float, delta: float, m: int, n_theta: int) -> int:
    """Smallest N with N >= (m + L + sqrt(2 m L)) / eta, L = ln(n_theta / delta)."""
    n = math.ceil(sample_size_bound(eta, delta, m, n_theta))
    check_failure_budget(m, n, eta)
    return n


def check_failure_budget(m: int, n: int, eta: float) -> None:
    if n < 1 or m / n > eta:
        raise ConfigError(
            f"m/N = {m}/{n} exceeds eta = {eta}: raise N or lower m")


# ------------------------------------------------------------------ costs

class CostKind(str, enum.Enum):
    MIN_DRUG = "min-drug"
    MIN_HOSPITALIZATION = "min-hospitalization"
    CONVEX = "convex"


@dataclass(frozen=True)
class Cost:
    kind: CostKind = CostKind.MIN_DRUG
    weight: float = 1.0   # on d, for CONVEX only

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", CostKind(self.kind))
        if not (0.0 <= self.weight <= 1.0):
            raise ConfigError(f"convex weight must lie in [0, 1] (got {self.weight})")

    def __call__(self, design: TherapyDesign) -> float:
        if self.kind is CostKind.MIN_DRUG:
            return design.d
        if self.kind is CostKind.MIN_HOSPITALIZATION:
            return design.gamma
        return self.weight * design.d + (1.0 - self.weight) * design.gamma

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "weight": self.weight}


@dataclass(frozen=True)
class CertificationSpec:
    delta: float = 1e-3
    eta: float = 0.01
    m: int = 1
    master_seed: int = 0
    cost: Cost = field(default_factory=Cost)
    N_explicit: int | None = None

    def __post_init__(self) -> None:
        if not (0.0 < self.delta < 1.0 and 0.0 < self.eta < 1.0):
            raise ConfigError(f"delta and eta must lie in (0, 1) (got {self.delta}, {self.eta})")
        if int(self.m) != self.m or self.m < 0:
            raise ConfigError(f"m must be a non-negative integer (got {self.m})")
        if not (0 <= int(self.master_seed) < 2**64):
            raise ConfigError(f"master_seed must fit in 64 bits (got {self.master_seed})")
        if self.N_explicit is not None and int(self.N_explicit) < 1:
            raise ConfigError(f"N_explicit must be >= 1 (got {self.N_explicit})")

    def resolve_n(self, n_theta: int) -> int:
        if self.N_explicit is not None:
            check_failure_budget(self.m, int(self.N_explicit), self.eta)
            return int(self.N_explicit)
        return sample_size(self.eta, self.delta, self.m, n_theta)

    def to_dict(self) -> dict:
        return {"delta": self.delta, "eta": self.eta, "m": self.m,
                "master_seed": self.master_seed, "cost": self.cost.to_dict(),
                "N_explicit": self.N_explicit}

    @classmethod
    def from_dict(cls, data: dict) -> CertificationSpec:
        unknown = set(data) - {"delta", "eta", "m", "master_seed", "cost", "N_explicit"}
        if unknown:
            raise ConfigError(f"unknown certification key(s): {', '.join(sorted(unknown))}")
        kw = dict(data)
        if "cost" in kw:
            c = kw["cost"]
            if isinstance(c, str):
                c = {"kind": c}
            bad = set(c) - {"kind", "weight"}
            if bad:
                raise ConfigError(f"unknown cost key(s): {', '.join(sorted(bad))}")
            try:
                kw["cost"] = Cost(**c)
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
        return cls(**kw)


# ----------------------------------------------------------- failure test

def failure_indicator(traj: Trajectory, gamma_c: float, C_min: float,
                      fine_grained: bool = False) -> int:
    """0 when the tumor shrank to at most gamma_c of its size and lymphocytes
    never dropped below C_min; 1 otherwise (including diverged runs)."""
    if traj.blown_up:
        return 1
    min_x2 = traj.min_x2
    if fine_grained and traj.min_x2_fine < min_x2:
        min_x2 = traj.min_x2_fine
    return 0 if (traj.contraction_ratio <= gamma_c and min_x2 >= C_min) else 1


# -------------------------------------------------------------- scenarios

def draw_scenarios(model: UncertaintyModel, N: int, master_seed: int,
                   p_nom: ModelParams | None = None, label: str = CERT_LABEL) -> np.ndarray:
    """Draw ``N`` parameter vectors, one independent stream per index.

    Returns an (N, 14) array whose columns follow ``PARAM_NAMES``.
    """
    if N < 0:
        raise ConfigError(f"scenario count must be >= 0 (got {N})")
    p_nom = p_nom or nominal_params()
    out = np.empty((N, len(PARAM_NAMES)))
    for ell in range(N):
        try:
            out[ell] = sample_params(model, p_nom, stream(master_seed, label, ell)).to_array()
        except ConfigError as exc:
            raise ConfigError(f"scenario {ell}: {exc}") from exc
    return out


@dataclass
class GMatrix:
    """Failure bits g[sigma, ell] of design sigma on scenario ell."""

    g: np.ndarray          # (n_theta, N) uint8
    blowup: np.ndarray     # (n_theta, N) uint8
    pruned: np.ndarray     # (n_theta,) bool
    stats: dict = field(default_factory=dict)

    @property
    def shape(self) -> tuple[int, int]:
        return self.g.shape

    @property
    def row_sums(self) -> np.ndarray:
        return self.g.sum(axis=1, dtype=np.int64)

    def write_csv(self, path: str | Path) -> None:
        n_theta, n = self.g.shape
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sigma"] + [f"s{ell}" for ell in range(n)])
            for s in range(n_theta):
                if self.pruned[s]:
                    w.writerow([s] + ["NA"] * n)
                else:
                    w.writerow([s] + self.g[s].tolist())

    def write_row_sums_csv(self, path: str | Path) -> None:
        sums = self.row_sums
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sigma", "failures", "blowups", "pruned"])
            for s in range(self.g.shape[0]):
                if self.pruned[s]:
                    w.writerow([s, "NA", "NA", 1])
                else:
                    w.writerow([s, int(sums[s]), int(self.blowup[s].sum()), 0])


@dataclass(frozen=True)
class _Job:
    x0: np.ndarray
    p_nom: np.ndarray
    pv: np.ndarray
    n_intervals: int
    n_sub: int
    h: float
    guard: float
    fine: bool
    knows_truth: bool


def _make_job(proto: Protocol, cfg: SimConfig, p_nom: ModelParams, knows_truth: bool) -> _Job:
    return _Job(proto.x0.to_array(), p_nom.to_array(), proto.to_vector(), proto.n_intervals,
                cfg.substeps(proto.tau), cfg.step(proto.tau), cfg.blowup_guard,
                cfg.fine_health_check, knows_truth)


def _simulate_block(job: _Job, design: TherapyDesign, proto: Protocol, params: np.ndarray):
    n = params.shape[0]
    g = np.empty(n, dtype=np.uint8)
    blowup = np.empty(n, dtype=np.uint8)
    ratio, min_x2, used1, used2 = (np.empty(n) for _ in range(4))
    _kernels.run_batch(job.x0, np.ascontiguousarray(params), job.p_nom, job.knows_truth,
                       design.controller_vector(proto), job.pv, job.n_intervals, job.n_sub,
                       job.h, job.guard, design.gamma_c, job.fine,
                       g, blowup, ratio, min_x2, used1, used2)
    return g, blowup, ratio, min_x2, used1, used2


def _chunks(n: int):
    return [(a, min(a + CHUNK, n)) for a in range(0, n, CHUNK)]


def _resolve_threads(threads: int | None) -> int:
    return max(1, threads if threads else (os.cpu_count() or 1))


def _run_rows(rows, job, grid, proto, scenarios, g, blowup, pool):
    """Simulate every (row, chunk) cell of ``rows``; returns simulations run."""
    tasks = [(s, a, b) for s in rows for a, b in _chunks(scenarios.shape[0])]

    def work(task):
        s, a, b = task
        return task, _simulate_block(job, grid[s], proto, scenarios[a:b])

    results = pool.map(work, tasks) if pool is not None else map(work, tasks)
    count = 0
    for (s, a, b), res in results:
        g[s, a:b] = res[0]
        blowup[s, a:b] = res[1]
        count += b - a
    return count


def _prune_groups(grid: DesignGrid) -> list[list[int]]:
    """Designs equal in everything but d, each group sorted by decreasing d."""
    groups: dict[tuple, list[int]] = {}
    for s, design in enumerate(grid):
        key = tuple(v for k, v in design.to_dict().items() if k != "d")
        groups.setdefault(key, []).append(s)
    return [sorted(idx, key=lambda s: (-grid[s].d, s)) for idx in groups.values()]


def run_scenarios(grid: DesignGrid, scenarios: np.ndarray, proto: Protocol, cfg: SimConfig,
                  spec: CertificationSpec, pruning: bool = False, threads: int | None = None,
                  p_nom: ModelParams | None = None, knows_truth: bool = False,
                  dry_run: bool = False) -> GMatrix:
    """Fill the design x scenario failure matrix.

    With ``pruning`` a design failing the m-failure test marks every
    same-group design with smaller d as pruned, without simulating it.
    ``dry_run`` only counts the simulations the pruning-off schedule would run.
    """
    scenarios = np.asarray(scenarios, dtype=float)
    n_theta, n = len(grid), scenarios.shape[0]
    g = np.zeros((n_theta, n), dtype=np.uint8)
    blowup = np.zeros((n_theta, n), dtype=np.uint8)
    pruned = np.zeros(n_theta, dtype=bool)
    stats = {"scheduled": 0, "simulated": 0, "pruned_rows": 0, "pruning": bool(pruning)}
    if dry_run:
        stats["scheduled"] = sum(b - a for _ in range(n_theta) for a, b in _chunks(n))
        return GMatrix(g, blowup, pruned, stats)
    job = _make_job(proto, cfg, p_nom or nominal_params(), knows_truth)
    n_threads = _resolve_threads(threads)
    pool = ThreadPoolExecutor(n_threads) if n_threads > 1 else None
    try:
        if not pruning:
            stats["simulated"] = _run_rows(range(n_theta), job, grid, proto, scenarios,
                                           g, blowup, pool)
        else:
            for group in _prune_groups(grid):
                failed = False
                for s in group:
                    if failed:
                        pruned[s] = True
                        continue
                    stats["simulated"] += _run_rows([s], job, grid, proto, scenarios,
                                                    g, blowup, pool)
                    failed = int(g[s].sum()) > spec.m
    finally:
        if pool is not None:
            pool.shutdown()
    stats["scheduled"] = stats["simulated"]
    stats["pruned_rows"] = int(pruned.sum())
    stats["blowups"] = int(blowup.sum())
    log.info("scenario matrix %dx%d: %d simulations, %d rows pruned",
             n_theta, n, stats["simulated"], stats["pruned_rows"])
    return GMatrix(g, blowup, pruned, stats)


def admissible_set(gm: GMatrix, m: int) -> list[int]:
    """Indices of non-pruned designs with at most ``m`` scenario failures."""
    sums = gm.row_sums
    return [s for s in range(len(sums)) if not gm.pruned[s] and sums[s] <= m]


@dataclass(frozen=True)
class Selection:
    index: int
    design: TherapyDesign
    cost: float


def select_optimal(admissible: list[int], grid: DesignGrid, cost: Cost) -> Selection | None:
    """Cheapest admissible design, ties going to the smallest grid index.

    Returns None when the admissible set is empty.
    """
    best = None
    for s in sorted(admissible):
        j = cost(grid[s])
        if best is None or j < best.cost:
            best = Selection(s, grid[s], j)
    return best


# ---------------------------------------------------------------- reports

@dataclass
class CertificationReport:
    spec: CertificationSpec
    N: int
    N_formula: int
    grid: DesignGrid
    protocol: Protocol
    uncertainty: UncertaintyModel
    sim: SimConfig
    row_sums: list[int]
    pruned: list[int]
    admissible: list[int]
    selection: Selection | None
    stats: dict
    extra: dict = field(default_factory=dict)

    @property
    def status(self) -> str:
        return "certified" if self.selection is not None else "empty_admissible_set"

    def to_dict(self) -> dict:
        cost = self.spec.cost
        designs = []
        for s, design in enumerate(self.grid):
            designs.append({"index": s, **design.to_dict(), "cost": cost(design),
                            "failures": None if s in self.pruned else self.row_sums[s]})
        sel = None
        if self.selection is not None:
            sel = {"index": self.selection.index, "design": self.selection.design.to_dict(),
                   "cost": self.selection.cost}
        return {
            "status": self.status,
            "note": SAMPLE_SIZE_NOTE,
            "certification": self.spec.to_dict(),
            "N": self.N,
            "N_formula": self.N_formula,
            "n_theta": len(self.grid),
            "seeds": {"master_seed": self.spec.master_seed, "scenario_stream": CERT_LABEL,
                      "validation_stream": VALID_LABEL},
            "protocol": self.protocol.to_dict(),
            "uncertainty": self.uncertainty.to_dict(),
            "sim": self.sim.to_dict(),
            "grid": self.grid.to_dict(),
            "designs": designs,
            "admissible": self.admissible,
            "optimal": sel,
            "pruning": {"enabled": bool(self.stats.get("pruning", False)),
                        "pruned_rows": len(self.pruned), "pruned": self.pruned},
            "work": {k: self.stats[k] for k in ("scheduled", "simulated", "blowups")
                     if k in self.stats},
            **self.extra,
        }


def certify(grid: DesignGrid, model: UncertaintyModel, spec: CertificationSpec,
            proto: Protocol, cfg: SimConfig, pruning: bool = False, threads: int | None = None,
            p_nom: ModelParams | None = None, knows_truth: bool = False):
    """Full pipeline; returns (report, g-matrix, scenarios)."""
    n_formula = sample_size(spec.eta, spec.delta, spec.m, len(grid))
    n = spec.resolve_n(len(grid))
    scenarios = draw_scenarios(model, n, spec.master_seed, p_nom)
    gm = run_scenarios(grid, scenarios, proto, cfg, spec, pruning=pruning, threads=threads,
                       p_nom=p_nom, knows_truth=knows_truth)
    adm = admissible_set(gm, spec.m)
    sel = select_optimal(adm, grid, spec.cost)
    report = CertificationReport(
        spec=spec, N=n, N_formula=n_formula, grid=grid, protocol=proto, uncertainty=model,
        sim=cfg, row_sums=gm.row_sums.tolist(), pruned=np.flatnonzero(gm.pruned).tolist(),
        admissible=adm, selection=sel, stats=gm.stats,
        extra={"nominal_params": (p_nom or nominal_params()).as_dict(),
               "controller_knows_truth": bool(knows_truth)})
    return report, gm, scenarios


@dataclass
class ValidationReport:
    design: TherapyDesign
    multiplier: int
    n_base: int
    budgets: tuple[float, float]
    violated: np.ndarray
    blowup: np.ndarray
    contraction_ratio: np.ndarray
    min_lymphocytes: np.ndarray
    drug1_used: np.ndarray
    drug2_used: np.ndarray

    @property
    def n_scenarios(self) -> int:
        return int(self.violated.shape[0])

    @property
    def violations(self) -> int:
        return int(self.violated.sum())

    @property
    def violation_rate(self) -> float | None:
        return self.violations / self.n_scenarios if self.n_scenarios else None

    def to_dict(self) -> dict:
        return {
            "design": self.design.to_dict(),
            "multiplier": self.multiplier,
            "N": self.n_base,
            "scenarios": self.n_scenarios,
            "violations": self.violations,
            "violation_rate": self.violation_rate,
            "blowups": int(self.blowup.sum()),
            "drug1_available": self.budgets[0],
            "drug2_available": self.budgets[1],
            "seeds": {"stream": VALID_LABEL},
        }

    def write_scatter_csv(self, path: str | Path) -> None:
        d1, d2 = self.budgets
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["scenario_id", "contraction_ratio", "min_lymphocytes", "drug1_used",
                        "drug1_available", "drug2_used", "drug2_available", "violated"])
            for i in range(self.n_scenarios):
                w.writerow([i, repr(float(self.contraction_ratio[i])),
                            repr(float(self.min_lymphocytes[i])), repr(float(self.drug1_used[i])),
                            repr(d1), repr(float(self.drug2_used[i])), repr(d2),
                            int(self.violated[i])])


def validate_out_of_sample(design: TherapyDesign, model: UncertaintyModel, multiplier: int,
                           N: int, proto: Protocol, cfg: SimConfig, master_seed: int,
                           p_nom: ModelParams | None = None, knows_truth: bool = False,
                           threads: int | None = None) -> ValidationReport:
    """Re-evaluate ``design`` on ``multiplier * N`` scenarios from the validation stream."""
    if multiplier < 0 or int(multiplier) != multiplier:
        raise ConfigError(f"multiplier must be a non-negative integer (got {multiplier})")
    problems = validate_protocol(design, proto)
    if problems:
        raise ConfigError("; ".join(problems))
    n = int(multiplier) * int(N)
    scenarios = draw_scenarios(model, n, master_seed, p_nom, label=VALID_LABEL)
    job = _make_job(proto, cfg, p_nom or nominal_params(), knows_truth)
    cols = [np.empty(n, dtype=np.uint8), np.empty(n, dtype=np.uint8)] + [np.empty(n) for _ in range(4)]

    def work(span):
        a, b = span
        return span, _simulate_block(job, design, proto, scenarios[a:b])

    n_threads = _resolve_threads(threads)
    spans = _chunks(n)
    if n_threads > 1 and spans:
        with ThreadPoolExecutor(n_threads) as pool:
            results = list(pool.map(work, spans))
    else:
        results = [work(sp) for sp in spans]
    for (a, b), res in results:
        for col, part in zip(cols, res):
            col[a:b] = part
    g, blow, ratio, min_x2, used1, used2 = cols
    return ValidationReport(design, int(multiplier), int(N), design.budgets(proto), g, blow,
                            ratio, min_x2, used1, used2)
