"""Exception hierarchy shared across the package."""


class SoftlatError(Exception):
    """Base class for all package errors."""


class InvalidValueError(SoftlatError, ValueError):
    """A domain object failed construction-time validation."""


class UnknownHandleError(SoftlatError, LookupError):
    """Handle does not resolve and no last-known copy is retained."""


class StaleHandleError(SoftlatError, LookupError):
    """Handle refers to a deleted or superseded object and the operation
    requires a live one."""


class SimulationRunningError(SoftlatError, RuntimeError):
    """Direct store mutation attempted while the step loop owns the store.

    Writes must be staged through the controller's mutation queue.
    """


class ControlStateError(SoftlatError, RuntimeError):
    """Illegal controller state transition (e.g. resume after stop)."""


class NumericalAbort(SoftlatError, ArithmeticError):
    """Non-finite state detected during integration."""

    def __init__(self, message: str, mass_slot: int | None = None,
                 sim_time: float | None = None):
        super().__init__(message)
        self.mass_slot = mass_slot
        self.sim_time = sim_time


class MeshError(SoftlatError, ValueError):
    """STL parsing or mesh-fill failure."""

    def __init__(self, message: str, byte_offset: int | None = None):
        if byte_offset is not None:
            message = f"{message} (at byte offset {byte_offset})"
        super().__init__(message)
        self.byte_offset = byte_offset


class ScenarioError(SoftlatError, ValueError):
    """Scenario file could not be parsed or validated."""
