"""Run configuration (a single JSON document) and run manifests."""

from __future__ import annotations

import hashlib
import json
import platform
import sys
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .certifier import CertificationSpec
from .dynamics import ModelParams, UncertaintyModel, nominal_params
from .errors import ConfigError
from .integrator import SimConfig
from .therapy import GRID_DIMS, DesignGrid, Protocol, build_design_grid

# full illustrative instance: 24 feedback settings x 24 protocol settings
DEFAULT_GRID: dict[str, list] = {
    "beta": [1.05, 2.0],
    "r_target": [0.05, 0.25, 0.5, 0.8],
    "alpha": [0.1, 0.5, 0.8],
    "mu2": [1.0],
    "N_T": [4, 6],
    "gamma": [0.3, 0.5, 0.8],
    "gamma_c": [0.1],
    "d": [0.25, 0.5, 0.75, 1.0],
}


@dataclass(frozen=True)
class Flags:
    pruning: bool = False
    controller_knows_truth: bool = False
    N_explicit: int | None = None
    threads: int | None = None

    def __post_init__(self) -> None:
        if self.threads is not None and int(self.threads) < 1:
            raise ConfigError(f"threads must be >= 1 (got {self.threads})")

    def to_dict(self) -> dict:
        return {"pruning": self.pruning, "controller_knows_truth": self.controller_knows_truth,
                "N_explicit": self.N_explicit, "threads": self.threads}


def _check_keys(section: str, data, allowed) -> dict:
    if not isinstance(data, dict):
        raise ConfigError(f"section {section!r} must be an object")
    unknown = set(data) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {section!r}: {', '.join(sorted(unknown))}")
    return data


@dataclass(frozen=True)
class RunConfig:
    protocol: Protocol = field(default_factory=Protocol)
    grid: dict = field(default_factory=lambda: {k: list(v) for k, v in DEFAULT_GRID.items()})
    uncertainty: UncertaintyModel = field(default_factory=UncertaintyModel)
    certification: CertificationSpec = field(default_factory=CertificationSpec)
    sim: SimConfig = field(default_factory=SimConfig)
    nominal_params: ModelParams = field(default_factory=nominal_params)
    validation_multiplier: int = 5
    output_dir: str = "out"
    flags: Flags = field(default_factory=Flags)

    SECTIONS = ("protocol", "grid", "uncertainty", "certification", "sim", "nominal_params",
                "validation", "output_dir", "flags")

    def build_grid(self) -> DesignGrid:
        return build_design_grid(self.grid, self.protocol)

    def cert_spec(self) -> CertificationSpec:
        if self.flags.N_explicit is None:
            return self.certification
        return CertificationSpec(**{**self.certification.__dict__,
                                    "N_explicit": int(self.flags.N_explicit)})

    def to_dict(self) -> dict:
        cert = self.certification.to_dict()
        cert.pop("N_explicit")
        return {
            "protocol": self.protocol.to_dict(),
            "grid": {k: list(self.grid[k]) for k in GRID_DIMS if k in self.grid},
            "uncertainty": self.uncertainty.to_dict(),
            "certification": cert,
            "sim": self.sim.to_dict(),
            "nominal_params": self.nominal_params.as_dict(),
            "validation": {"multiplier": self.validation_multiplier},
            "output_dir": self.output_dir,
            "flags": self.flags.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> RunConfig:
        _check_keys("<root>", data, cls.SECTIONS)
        kw = {}
        if "protocol" in data:
            kw["protocol"] = Protocol.from_dict(data["protocol"])
        if "grid" in data:
            grid = _check_keys("grid", data["grid"], GRID_DIMS)
            kw["grid"] = {k: list(v) if isinstance(v, (list, tuple)) else [v] for k, v in grid.items()}
        if "uncertainty" in data:
            kw["uncertainty"] = UncertaintyModel.from_dict(data["uncertainty"])
        if "certification" in data:
            cert = _check_keys("certification", data["certification"],
                               ("delta", "eta", "m", "master_seed", "cost"))
            kw["certification"] = CertificationSpec.from_dict(cert)
        if "sim" in data:
            kw["sim"] = SimConfig.from_dict(data["sim"])
        if "nominal_params" in data:
            kw["nominal_params"] = ModelParams.from_dict(data["nominal_params"])
        if "validation" in data:
            val = _check_keys("validation", data["validation"], ("multiplier",))
            if "multiplier" in val:
                kw["validation_multiplier"] = int(val["multiplier"])
        if "output_dir" in data:
            kw["output_dir"] = str(data["output_dir"])
        if "flags" in data:
            kw["flags"] = Flags(**_check_keys("flags", data["flags"],
                                              ("pruning", "controller_knows_truth",
                                               "N_explicit", "threads")))
        try:
            return cls(**kw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    return RunConfig.from_dict(data)


def file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


class RunManifest:
    """Written when a command starts and finalized with an output inventory."""

    def __init__(self, path: str | Path, command: str, config: RunConfig, argv: list[str]):
        self.path = Path(path)
        self._t0 = time.perf_counter()
        self.data = {
            "command": command,
            "argv": argv,
            "status": "running",
            "engine_version": __version__,
            "python": sys.version.split()[0],
            "numpy": np.__version__,
            "platform": platform.platform(),
            "config_hash": config.hash(),
            "master_seed": config.certification.master_seed,
            "config": config.to_dict(),
            "started": _now(),
            "finished": None,
            "wall_clock_s": None,
            "files": [],
        }
        self._write()

    def _write(self) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text(json.dumps(self.data, indent=2) + "\n")

    def finalize(self, status: str, files: list[str | Path], extra: dict | None = None) -> None:
        inventory = []
        for f in files:
            f = Path(f)
            inventory.append({"path": f.name, "bytes": f.stat().st_size, "sha256": file_sha256(f)})
        self.data.update(status=status, finished=_now(),
                         wall_clock_s=round(time.perf_counter() - self._t0, 6), files=inventory)
        if extra:
            self.data.update(extra)
        self._write()

