"""softlat: portable spring-mass lattice simulation engine.

Builds soft bodies as spring-mass lattices (cubic grids or STL-bounded
fills), integrates them with a data-parallel fixed-timestep solver, and
exposes an asynchronous controller for breakpoint-driven simulate/control
workflows plus a scenario-driven CLI.
"""

from .actuation import ActuationParams, actuation_factor, assign_wave_offsets, \
    configure_worm
from .core import (ContactBall, ContactPlane, Environment, LocalConstraint,
                   Mass, Material, Spring, Vec3)
from .engine import (EnergyBreakdown, StepConfig, check_stability,
                     contact_forces, mass_pass, mechanical_energy,
                     spring_loads, spring_pass, step, throughput)
from .errors import (ControlStateError, InvalidValueError, MeshError,
                     NumericalAbort, ScenarioError, SimulationRunningError,
                     SoftlatError, StaleHandleError, UnknownHandleError)
from .store import HandleBatch, MassHandle, ObjectStore, SpringHandle

__version__ = "0.1.0"
