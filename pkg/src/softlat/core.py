"""Plain domain types and 3-vector math shared by every other module.

Everything here is a value type: safe to copy between threads, no shared
mutability. All quantities are SI (meters, seconds, kilograms, newtons).
The coordinate convention is z-up; default gravity is (0, 0, -9.81).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .errors import InvalidValueError

if TYPE_CHECKING:
    from .store import MassHandle


@dataclass(frozen=True)
class Vec3:
    """Immutable 3-vector of finite 64-bit floats."""

    x: float
    y: float
    z: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)
                and math.isfinite(self.z)):
            raise InvalidValueError(f"non-finite vector component: {self!r}")

    @staticmethod
    def zero() -> "Vec3":
        return Vec3(0.0, 0.0, 0.0)

    @staticmethod
    def of(v: "Vec3 | Sequence[float] | np.ndarray") -> "Vec3":
        """Coerce a Vec3, sequence, or length-3 array to Vec3."""
        if isinstance(v, Vec3):
            return v
        x, y, z = v
        return Vec3(float(x), float(y), float(z))

    def __add__(self, other: "Vec3") -> "Vec3":
        return Vec3(self.x + other.x, self.y + other.y, self.z + other.z)

    def __sub__(self, other: "Vec3") -> "Vec3":
        return Vec3(self.x - other.x, self.y - other.y, self.z - other.z)

    def __mul__(self, s: float) -> "Vec3":
        return Vec3(self.x * s, self.y * s, self.z * s)

    __rmul__ = __mul__

    def __neg__(self) -> "Vec3":
        return Vec3(-self.x, -self.y, -self.z)

    def dot(self, other: "Vec3") -> float:
        return self.x * other.x + self.y * other.y + self.z * other.z

    def norm(self) -> float:
        return math.sqrt(self.dot(self))

    def normalized(self) -> "Vec3":
        n = self.norm()
        if n == 0.0:
            raise InvalidValueError("cannot normalize a zero vector")
        return Vec3(self.x / n, self.y / n, self.z / n)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=np.float64)

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.z)


def _unit_or_raise(v: Vec3, what: str) -> Vec3:
    if abs(v.norm() - 1.0) > 1e-9:
        raise InvalidValueError(f"{what} must be unit length, got |v|={v.norm()}")
    return v


@dataclass(frozen=True)
class LocalConstraint:
    """Kinematic constraint on a single mass: motion along a line or in a plane.

    Velocity is projected every mass pass; ``direction`` keeps the component
    along the line, ``plane`` removes the component along the normal.
    """

    kind: str                     # "direction" | "plane"
    vector: Vec3                  # unit line direction or plane normal

    def __post_init__(self):
        if self.kind not in ("direction", "plane"):
            raise InvalidValueError(f"unknown constraint kind {self.kind!r}")
        _unit_or_raise(self.vector, "constraint vector")

    @staticmethod
    def direction(v: Vec3 | Sequence[float]) -> "LocalConstraint":
        return LocalConstraint("direction", Vec3.of(v).normalized())

    @staticmethod
    def plane(normal: Vec3 | Sequence[float]) -> "LocalConstraint":
        return LocalConstraint("plane", Vec3.of(normal).normalized())


@dataclass
class Mass:
    """Point body with a force accumulator.

    ``f_ext`` collects spring (and queued external) forces during a step and
    is cleared at the end of every mass pass. ``acc`` holds the last applied
    acceleration, for diagnostics only.
    """

    pos: Vec3
    m: float
    vel: Vec3 = field(default_factory=Vec3.zero)
    acc: Vec3 = field(default_factory=Vec3.zero)
    f_ext: Vec3 = field(default_factory=Vec3.zero)
    fixed: bool = False
    local_constraints: tuple[LocalConstraint, ...] = ()

    def __post_init__(self):
        self.pos = Vec3.of(self.pos)
        self.vel = Vec3.of(self.vel)
        self.acc = Vec3.of(self.acc)
        self.f_ext = Vec3.of(self.f_ext)
        self.local_constraints = tuple(self.local_constraints)
        if not (math.isfinite(self.m) and self.m > 0):
            raise InvalidValueError(f"mass must be positive and finite, got {self.m}")


#: Periodic rest-length multiplier attached to a spring. Defined in
#: :mod:`softlat.actuation`; stored here only as a forward-declared field type.
ActuationParams = "ActuationParams"


@dataclass
class Spring:
    """Ideal spring between two mass handles.

    ``yield_stress`` of ``None`` means the spring never breaks. ``actuation``
    optionally modulates the rest length over time.
    """

    m1: "MassHandle"
    m2: "MassHandle"
    rest_length: float
    stiffness: float
    diameter: float = 0.0
    yield_stress: float | None = None
    actuation: "ActuationParams | None" = None

    def __post_init__(self):
        if not (math.isfinite(self.rest_length) and self.rest_length > 0):
            raise InvalidValueError(
                f"rest length must be positive, got {self.rest_length}")
        if not (math.isfinite(self.stiffness) and self.stiffness >= 0):
            raise InvalidValueError(
                f"stiffness must be non-negative, got {self.stiffness}")
        if self.diameter < 0:
            raise InvalidValueError(f"diameter must be >= 0, got {self.diameter}")
        if self.yield_stress is not None and self.yield_stress <= 0:
            raise InvalidValueError(
                f"yield stress must be positive, got {self.yield_stress}")
        if self.m1 == self.m2:
            raise InvalidValueError("spring endpoints must differ")

    def cross_section(self) -> float:
        """Cross-sectional area implied by the stored diameter."""
        return math.pi * (self.diameter * 0.5) ** 2


@dataclass(frozen=True)
class Material:
    """Bulk material parameters used to derive spring/mass values."""

    elastic_modulus: float        # Pa
    density: float                # kg/m^3
    yield_stress: float | None = None

    def __post_init__(self):
        if self.elastic_modulus <= 0:
            raise InvalidValueError("elastic modulus must be positive")
        if self.density <= 0:
            raise InvalidValueError("density must be positive")


@dataclass(frozen=True)
class ContactPlane:
    """Half-space contact: the solid region is {p : p.normal <= offset}.

    Penetration depth offset - p.normal > 0 produces a linear penalty force
    along the normal plus Coulomb friction in the tangent plane.
    """

    normal: Vec3
    offset: float
    stiffness: float
    static_friction: float = 0.0
    kinetic_friction: float = 0.0

    def __post_init__(self):
        _unit_or_raise(self.normal, "plane normal")
        if self.stiffness < 0:
            raise InvalidValueError("contact stiffness must be >= 0")
        if self.static_friction < 0 or self.kinetic_friction < 0:
            raise InvalidValueError("friction coefficients must be >= 0")
        if self.kinetic_friction > self.static_friction:
            raise InvalidValueError(
                "kinetic friction must not exceed static friction")


@dataclass(frozen=True)
class ContactBall:
    """Solid sphere contact; penalty force along the radial normal."""

    center: Vec3
    radius: float
    stiffness: float

    def __post_init__(self):
        if self.radius <= 0:
            raise InvalidValueError("ball radius must be positive")
        if self.stiffness < 0:
            raise InvalidValueError("contact stiffness must be >= 0")


@dataclass
class Environment:
    """Global forces and contact solids.

    Drag is a linear velocity damping F = -drag_coeff * v, off by default.
    """

    gravity: Vec3 = field(default_factory=lambda: Vec3(0.0, 0.0, -9.81))
    drag_coeff: float = 0.0
    contacts: list[ContactPlane | ContactBall] = field(default_factory=list)

    def __post_init__(self):
        self.gravity = Vec3.of(self.gravity)
        if self.drag_coeff < 0:
            raise InvalidValueError("drag coefficient must be >= 0")

    def planes(self) -> list[ContactPlane]:
        return [c for c in self.contacts if isinstance(c, ContactPlane)]

    def balls(self) -> list[ContactBall]:
        return [c for c in self.contacts if isinstance(c, ContactBall)]
