"""Probabilistic certification of feedback cancer-therapy designs by the
scenario approach: sample a finite set of uncertain patient models, simulate
every candidate design against them, keep the designs failing at most ``m``
times and pick the cheapest."""

__version__ = "0.1.0"

from .certifier import (  # noqa: E402
    CertificationSpec, Cost, CostKind, admissible_set, certify, draw_scenarios,
    failure_indicator, run_scenarios, sample_size, select_optimal, validate_out_of_sample,
)
from .dynamics import (  # noqa: E402
    ControlInput, ModelParams, State, UncertaintyKind, UncertaintyModel, nominal_params, rhs,
    sample_params,
)
from .integrator import SimConfig, Trajectory, integrate_hold, rk4_step, simulate_closed_loop  # noqa: E402
from .therapy import (  # noqa: E402
    DesignGrid, Protocol, TherapyDesign, build_design_grid, drug_budget, in_treatment_window,
    validate_protocol,
)
