"""Exception hierarchy shared across the engine."""

from __future__ import annotations


class TherapyCertError(Exception):
    """Base class for every error raised by therapycert."""


class ConfigError(TherapyCertError, ValueError):
    """Invalid configuration, parameter set, grid or certification spec."""


class DomainError(TherapyCertError, ValueError):
    """A function was evaluated outside its mathematical domain."""


class BlowUpError(TherapyCertError, ArithmeticError):
    """A closed-loop simulation diverged (non-finite or guarded state).

    Carries the simulated time of failure plus optional design/scenario ids
    so that batch reports can be triaged.
    """

    def __init__(self, time: float, design_id: int | None = None,
                 scenario_id: int | None = None, detail: str = ""):
        self.time = time
        self.design_id = design_id
        self.scenario_id = scenario_id
        msg = f"simulation blew up at t={time:.6g} d"
        if design_id is not None:
            msg += f" (design {design_id}"
            msg += f", scenario {scenario_id})" if scenario_id is not None else ")"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)
