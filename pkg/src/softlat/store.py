"""Slot-indexed object store with lazy deletion and generational handles.

Masses and springs live in growable structure-of-arrays storage so the
integration kernels can run over contiguous memory. A handle is a
(slot, generation) pair; it resolves only while the slot's generation
matches, so a reused slot can never be confused with the object that
previously occupied it.

Deletion is O(1): the slot is flagged dead, its generation is bumped, and
the index goes on a free list. Springs are never traversed on mass
deletion; the engine invalidates springs with dead endpoints the first
time it touches them. A copy of every deleted object is retained (until
``compact``) so holders of old handles can still read its last-known
state.

Thread discipline: exactly one context mutates the store at a time. While
a simulation loop owns it (``lock_for_run``), direct writes raise and
reads are served from the snapshot taken at lock time.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .core import LocalConstraint, Mass, Spring, Vec3
from .errors import (InvalidValueError, SimulationRunningError,
                     StaleHandleError, UnknownHandleError)

_MASS_FIELDS = ("pos", "vel", "acc", "f_ext", "m", "fixed", "local_constraints")
_SPRING_FIELDS = ("rest_length", "stiffness", "diameter", "yield_stress",
                  "actuation")

# actuation waveform encoding used by the kernels
ACT_NONE = 0
ACT_SINE = 1
ACT_SINE_QUIESCENT = 2
ACT_CUSTOM = 3


@dataclass(frozen=True)
class MassHandle:
    slot: int
    generation: int


@dataclass(frozen=True)
class SpringHandle:
    slot: int
    generation: int


class HandleBatch(Sequence):
    """Compact sequence of handles produced by bulk creation."""

    def __init__(self, kind: type, slots: np.ndarray, generations: np.ndarray):
        self._kind = kind
        self.slots = slots
        self.generations = generations

    def __len__(self) -> int:
        return len(self.slots)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return HandleBatch(self._kind, self.slots[i], self.generations[i])
        return self._kind(int(self.slots[i]), int(self.generations[i]))

    def __iter__(self) -> Iterator:
        kind = self._kind
        for s, g in zip(self.slots, self.generations):
            yield kind(int(s), int(g))


class _SyncState:
    """Copies of the loop-mutable arrays, captured at lock time.

    Arrays the loop never touches (stiffness, endpoints, ...) are shared.
    """

    def __init__(self, store: "ObjectStore"):
        n, s = store._m_n, store._s_n
        self.m_pos = store._m_pos[:n].copy()
        self.m_vel = store._m_vel[:n].copy()
        self.m_acc = store._m_acc[:n].copy()
        self.m_fext = store._m_fext[:n].copy()
        self.m_alive = store._m_alive[:n].copy()
        self.s_alive = store._s_alive[:s].copy()


class ObjectStore:
    """Mutable container for the complete simulation state."""

    _INITIAL_CAPACITY = 64

    def __init__(self):
        self._m_gen_floor = 0             # lowest legal fresh generation
        self._s_gen_floor = 0
        self._alloc_mass(self._INITIAL_CAPACITY)
        self._alloc_spring(self._INITIAL_CAPACITY)
        self._m_n = 0                     # high-water slot count
        self._s_n = 0
        self._m_alive_count = 0
        self._s_alive_count = 0
        self._m_free: list[int] = []
        self._s_free: list[int] = []
        self._m_constraints: dict[int, tuple[LocalConstraint, ...]] = {}
        self._s_custom: dict[int, object] = {}     # slot -> waveform callable
        self._s_actuation: dict[int, object] = {}  # slot -> ActuationParams
        self._m_tombs: dict[tuple[int, int], Mass] = {}
        self._s_tombs: dict[tuple[int, int], Spring] = {}
        self.global_constraints: list[LocalConstraint] = []
        # bumped whenever spring topology changes; engine caches keyed on it
        self.topology_version = 0
        self.constraint_version = 0
        self._locked = False
        self._sync: _SyncState | None = None

    # ---------------------------------------------------------------- alloc

    def _alloc_mass(self, cap: int):
        self._m_pos = np.zeros((cap, 3))
        self._m_vel = np.zeros((cap, 3))
        self._m_acc = np.zeros((cap, 3))
        self._m_fext = np.zeros((cap, 3))
        self._m_load = np.zeros((cap, 3))      # persistent applied load
        self._m_mass = np.zeros(cap)
        self._m_fixed = np.zeros(cap, dtype=np.bool_)
        self._m_alive = np.zeros(cap, dtype=np.bool_)
        self._m_gen = np.full(cap, self._m_gen_floor, dtype=np.int64)

    def _alloc_spring(self, cap: int):
        self._s_m1 = np.zeros(cap, dtype=np.int64)
        self._s_m2 = np.zeros(cap, dtype=np.int64)
        self._s_m1gen = np.zeros(cap, dtype=np.int64)
        self._s_m2gen = np.zeros(cap, dtype=np.int64)
        self._s_rest = np.zeros(cap)
        self._s_k = np.zeros(cap)
        self._s_diam = np.zeros(cap)
        self._s_yield = np.full(cap, np.inf)
        self._s_act_mode = np.zeros(cap, dtype=np.int8)
        self._s_act_amp = np.zeros(cap)
        self._s_act_freq = np.zeros(cap)
        self._s_act_off = np.zeros(cap)
        self._s_act_per = np.ones(cap)
        self._s_alive = np.zeros(cap, dtype=np.bool_)
        self._s_booked = np.zeros(cap, dtype=np.bool_)  # store-side liveness book
        self._s_degen = np.zeros(cap, dtype=np.bool_)   # zero-length logged flag
        self._s_gen = np.full(cap, self._s_gen_floor, dtype=np.int64)

    def _grow(self, which: str, needed: int):
        arrays = [a for a in vars(self) if a.startswith(f"_{which}_")
                  and isinstance(getattr(self, a), np.ndarray)]
        cap = len(getattr(self, arrays[0]))
        new_cap = max(cap, 1)
        while new_cap < needed:
            new_cap *= 2
        if new_cap == cap:
            return
        # fresh slots start at the generation floor so they can never be
        # confused with handles issued before a compaction
        fills = {"_s_yield": np.inf, "_s_act_per": 1.0,
                 "_m_gen": self._m_gen_floor, "_s_gen": self._s_gen_floor}
        for name in arrays:
            old = getattr(self, name)
            if name in fills:
                fresh = np.full(new_cap, fills[name], dtype=old.dtype)
            else:
                fresh = np.zeros((new_cap,) + old.shape[1:], dtype=old.dtype)
            fresh[:cap] = old
            setattr(self, name, fresh)

    # ------------------------------------------------------------- counters

    @property
    def mass_count(self) -> int:
        return self._m_alive_count

    @property
    def spring_count(self) -> int:
        return self._s_alive_count

    @property
    def mass_slot_count(self) -> int:
        return self._m_n

    @property
    def spring_slot_count(self) -> int:
        return self._s_n

    def alive_mass_slots(self) -> np.ndarray:
        return np.flatnonzero(self._m_alive[:self._m_n])

    def alive_spring_slots(self) -> np.ndarray:
        self.reconcile_spring_deaths()
        return np.flatnonzero(self._s_alive[:self._s_n])

    # ------------------------------------------------------------ lock/sync

    @property
    def locked(self) -> bool:
        return self._locked

    def lock_for_run(self):
        """Hand exclusive write access to a step loop.

        Captures the synchronization snapshot served to readers while the
        loop runs.
        """
        if self._locked:
            raise SimulationRunningError("store is already locked")
        self._sync = _SyncState(self)
        self._locked = True

    def unlock(self):
        self._locked = False
        self._sync = None

    def _check_writable(self):
        if self._locked:
            raise SimulationRunningError(
                "simulation is running; stage writes through the mutation queue")

    # -------------------------------------------------------------- creates

    def create_mass(self, mass: Mass) -> MassHandle:
        self._check_writable()
        if not isinstance(mass, Mass):
            raise InvalidValueError(f"expected Mass, got {type(mass).__name__}")
        slot = self._take_mass_slot()
        self._write_mass(slot, mass)
        self._m_alive_count += 1
        return MassHandle(slot, int(self._m_gen[slot]))

    def create_masses(self, positions: np.ndarray, masses: np.ndarray,
                      velocities: np.ndarray | None = None,
                      fixed: np.ndarray | None = None) -> HandleBatch:
        """Bulk mass creation; used by the builder for whole bodies."""
        self._check_writable()
        positions = np.asarray(positions, dtype=np.float64)
        masses = np.asarray(masses, dtype=np.float64)
        n = len(positions)
        if positions.shape != (n, 3):
            raise InvalidValueError("positions must have shape (n, 3)")
        if masses.shape != (n,):
            raise InvalidValueError("masses must have shape (n,)")
        if not np.all(np.isfinite(positions)):
            raise InvalidValueError("non-finite mass position")
        if not (np.all(np.isfinite(masses)) and np.all(masses > 0)):
            raise InvalidValueError("mass values must be positive and finite")
        slots = np.empty(n, dtype=np.int64)
        reuse = min(len(self._m_free), n)
        for i in range(reuse):
            slots[i] = self._m_free.pop()
        fresh = n - reuse
        if fresh:
            self._grow("m", self._m_n + fresh)
            slots[reuse:] = np.arange(self._m_n, self._m_n + fresh)
            self._m_n += fresh
        self._m_pos[slots] = positions
        self._m_vel[slots] = 0.0 if velocities is None else velocities
        self._m_acc[slots] = 0.0
        self._m_fext[slots] = 0.0
        self._m_load[slots] = 0.0
        self._m_mass[slots] = masses
        self._m_fixed[slots] = False if fixed is None else fixed
        self._m_alive[slots] = True
        self._m_alive_count += n
        return HandleBatch(MassHandle, slots, self._m_gen[slots].copy())

    def create_spring(self, spring: Spring) -> SpringHandle:
        self._check_writable()
        if not isinstance(spring, Spring):
            raise InvalidValueError(f"expected Spring, got {type(spring).__name__}")
        for h in (spring.m1, spring.m2):
            if not self.mass_is_live(h):
                raise StaleHandleError(f"spring endpoint does not resolve: {h}")
        if spring.m1.slot == spring.m2.slot:
            raise InvalidValueError("spring endpoints must be distinct masses")
        slot = self._take_spring_slot()
        self._write_spring(slot, spring)
        self._s_alive_count += 1
        self.topology_version += 1
        return SpringHandle(slot, int(self._s_gen[slot]))

    def create_springs(self, m1: HandleBatch | np.ndarray,
                       m2: HandleBatch | np.ndarray,
                       rest_lengths: np.ndarray, stiffnesses: np.ndarray,
                       diameters: np.ndarray | float = 0.0,
                       yield_stress: np.ndarray | float | None = None,
                       ) -> HandleBatch:
        """Bulk spring creation over live masses.

        Endpoints may be handle batches or raw slot arrays (current
        generations are used for raw slots).
        """
        self._check_writable()
        s1, g1 = self._endpoint_arrays(m1)
        s2, g2 = self._endpoint_arrays(m2)
        n = len(s1)
        rest = np.broadcast_to(np.asarray(rest_lengths, dtype=np.float64), (n,))
        stiff = np.broadcast_to(np.asarray(stiffnesses, dtype=np.float64), (n,))
        diam = np.broadcast_to(np.asarray(diameters, dtype=np.float64), (n,))
        if np.any(s1 == s2):
            raise InvalidValueError("spring endpoints must be distinct masses")
        if not np.all(rest > 0):
            raise InvalidValueError("rest lengths must be positive")
        if not np.all(stiff >= 0):
            raise InvalidValueError("stiffnesses must be non-negative")
        if np.any(diam < 0):
            raise InvalidValueError("diameters must be >= 0")
        for s, g in ((s1, g1), (s2, g2)):
            bad = (s < 0) | (s >= self._m_n)
            if np.any(bad) or not np.all(self._m_alive[s] & (self._m_gen[s] == g)):
                raise StaleHandleError("spring endpoint does not resolve")
        slots = np.empty(n, dtype=np.int64)
        reuse = min(len(self._s_free), n)
        for i in range(reuse):
            slots[i] = self._s_free.pop()
        fresh = n - reuse
        if fresh:
            self._grow("s", self._s_n + fresh)
            slots[reuse:] = np.arange(self._s_n, self._s_n + fresh)
            self._s_n += fresh
        self._s_m1[slots] = s1
        self._s_m2[slots] = s2
        self._s_m1gen[slots] = g1
        self._s_m2gen[slots] = g2
        self._s_rest[slots] = rest
        self._s_k[slots] = stiff
        self._s_diam[slots] = diam
        if yield_stress is None:
            self._s_yield[slots] = np.inf
        else:
            ys = np.broadcast_to(np.asarray(yield_stress, dtype=np.float64), (n,))
            if not np.all(ys > 0):
                raise InvalidValueError("yield stress must be positive")
            self._s_yield[slots] = ys
        self._s_act_mode[slots] = ACT_NONE
        self._s_alive[slots] = True
        self._s_booked[slots] = True
        self._s_degen[slots] = False
        self._s_alive_count += n
        self.topology_version += 1
        return HandleBatch(SpringHandle, slots, self._s_gen[slots].copy())

    def _endpoint_arrays(self, ep) -> tuple[np.ndarray, np.ndarray]:
        if isinstance(ep, HandleBatch):
            return ep.slots, ep.generations
        slots = np.asarray(ep, dtype=np.int64)
        ok = (slots >= 0) & (slots < self._m_n)
        if not np.all(ok):
            raise StaleHandleError("spring endpoint slot out of range")
        return slots, self._m_gen[slots]

    def _take_mass_slot(self) -> int:
        if self._m_free:
            return self._m_free.pop()
        self._grow("m", self._m_n + 1)
        self._m_n += 1
        return self._m_n - 1

    def _take_spring_slot(self) -> int:
        if self._s_free:
            return self._s_free.pop()
        self._grow("s", self._s_n + 1)
        self._s_n += 1
        return self._s_n - 1

    def _write_mass(self, slot: int, mass: Mass):
        self._m_pos[slot] = mass.pos.as_array()
        self._m_vel[slot] = mass.vel.as_array()
        self._m_acc[slot] = mass.acc.as_array()
        self._m_fext[slot] = mass.f_ext.as_array()
        self._m_load[slot] = 0.0
        self._m_mass[slot] = mass.m
        self._m_fixed[slot] = mass.fixed
        self._m_alive[slot] = True
        if mass.local_constraints:
            self._m_constraints[slot] = tuple(mass.local_constraints)
            self.constraint_version += 1
        elif self._m_constraints.pop(slot, None) is not None:
            self.constraint_version += 1

    def _write_spring(self, slot: int, spring: Spring):
        self._s_m1[slot] = spring.m1.slot
        self._s_m2[slot] = spring.m2.slot
        self._s_m1gen[slot] = spring.m1.generation
        self._s_m2gen[slot] = spring.m2.generation
        self._s_rest[slot] = spring.rest_length
        self._s_k[slot] = spring.stiffness
        self._s_diam[slot] = spring.diameter
        self._s_yield[slot] = (np.inf if spring.yield_stress is None
                               else spring.yield_stress)
        self._s_alive[slot] = True
        self._s_booked[slot] = True
        self._s_degen[slot] = False
        self._set_actuation_slot(slot, spring.actuation)

    def _set_actuation_slot(self, slot: int, params):
        self._s_custom.pop(slot, None)
        self._s_actuation.pop(slot, None)
        if params is None:
            self._s_act_mode[slot] = ACT_NONE
            return
        self._s_actuation[slot] = params
        self._s_act_amp[slot] = params.amplitude
        self._s_act_freq[slot] = params.frequency
        self._s_act_off[slot] = params.offset
        self._s_act_per[slot] = params.period
        if callable(params.waveform):
            self._s_act_mode[slot] = ACT_CUSTOM
            self._s_custom[slot] = params.waveform
        elif params.quiescent_before_offset:
            self._s_act_mode[slot] = ACT_SINE_QUIESCENT
        else:
            self._s_act_mode[slot] = ACT_SINE

    # -------------------------------------------------------------- deletes

    def delete_mass(self, h: MassHandle) -> bool:
        """Mark a mass dead in O(1). Returns False (stale no-op) if the
        handle no longer resolves. Attached springs are not traversed; the
        engine invalidates them lazily."""
        self._check_writable()
        if not self.mass_is_live(h):
            return False
        slot = h.slot
        self._m_tombs[(slot, h.generation)] = self._mass_from_slot(slot)
        self._m_alive[slot] = False
        self._m_gen[slot] += 1
        self._m_free.append(slot)
        self._m_alive_count -= 1
        if self._m_constraints.pop(slot, None) is not None:
            self.constraint_version += 1
        return True

    def delete_spring(self, h: SpringHandle) -> bool:
        self._check_writable()
        self.reconcile_spring_deaths()
        if not self.spring_is_live(h):
            return False
        slot = h.slot
        self._s_tombs[(slot, h.generation)] = self._spring_from_slot(slot)
        self._retire_spring_slot(slot)
        self.topology_version += 1
        return True

    def _retire_spring_slot(self, slot: int):
        self._s_alive[slot] = False
        self._s_booked[slot] = False
        self._s_gen[slot] += 1
        self._s_free.append(slot)
        self._s_alive_count -= 1
        self._s_custom.pop(slot, None)
        self._s_actuation.pop(slot, None)

    def reconcile_spring_deaths(self):
        """Fold engine-side spring deaths (yield breaks, dangling endpoints)
        into the store's books: tombstone, bump generation, free the slot."""
        if self._locked:
            return
        dead = np.flatnonzero(self._s_booked[:self._s_n]
                              & ~self._s_alive[:self._s_n])
        for slot in dead:
            slot = int(slot)
            self._s_tombs[(slot, int(self._s_gen[slot]))] = \
                self._spring_from_slot(slot)
            self._retire_spring_slot(slot)
        if len(dead):
            self.topology_version += 1

    # ---------------------------------------------------------- resolution

    def mass_is_live(self, h: MassHandle) -> bool:
        return (0 <= h.slot < self._m_n
                and bool(self._m_alive[h.slot])
                and int(self._m_gen[h.slot]) == h.generation)

    def spring_is_live(self, h: SpringHandle) -> bool:
        if not (0 <= h.slot < self._s_n
                and int(self._s_gen[h.slot]) == h.generation):
            return False
        alive = self._sync.s_alive if self._locked else self._s_alive
        return h.slot < len(alive) and bool(alive[h.slot])

    def _mass_from_slot(self, slot: int, sync: _SyncState | None = None) -> Mass:
        if sync is not None and slot < len(sync.m_pos):
            pos, vel = sync.m_pos[slot], sync.m_vel[slot]
            acc, fext = sync.m_acc[slot], sync.m_fext[slot]
        else:
            pos, vel = self._m_pos[slot], self._m_vel[slot]
            acc, fext = self._m_acc[slot], self._m_fext[slot]
        return Mass(pos=Vec3.of(pos), m=float(self._m_mass[slot]),
                    vel=Vec3.of(vel), acc=Vec3.of(acc), f_ext=Vec3.of(fext),
                    fixed=bool(self._m_fixed[slot]),
                    local_constraints=self._m_constraints.get(slot, ()))

    def _spring_from_slot(self, slot: int) -> Spring:
        ys = float(self._s_yield[slot])
        return Spring(
            m1=MassHandle(int(self._s_m1[slot]), int(self._s_m1gen[slot])),
            m2=MassHandle(int(self._s_m2[slot]), int(self._s_m2gen[slot])),
            rest_length=float(self._s_rest[slot]),
            stiffness=float(self._s_k[slot]),
            diameter=float(self._s_diam[slot]),
            yield_stress=None if math.isinf(ys) else ys,
            actuation=self._s_actuation.get(slot))

    def get_mass(self, h: MassHandle) -> Mass:
        """Read a mass. Live handles read current (or, while the loop runs,
        last-synchronized) state; deleted ones read the retained copy."""
        if 0 <= h.slot < self._m_n and int(self._m_gen[h.slot]) == h.generation:
            sync = self._sync if self._locked else None
            alive = sync.m_alive if sync is not None else self._m_alive
            if alive[h.slot]:
                return self._mass_from_slot(h.slot, sync)
        tomb = self._m_tombs.get((h.slot, h.generation))
        if tomb is None:
            raise UnknownHandleError(f"no mass for handle {h}")
        return tomb

    def get_spring(self, h: SpringHandle) -> Spring:
        if 0 <= h.slot < self._s_n and int(self._s_gen[h.slot]) == h.generation:
            # slot data intact even if the engine has already flagged it dead
            return self._spring_from_slot(h.slot)
        tomb = self._s_tombs.get((h.slot, h.generation))
        if tomb is None:
            raise UnknownHandleError(f"no spring for handle {h}")
        return tomb

    # ------------------------------------------------------------- mutation

    def set_mass_field(self, h: MassHandle, field: str, value):
        self._check_writable()
        if not self.mass_is_live(h):
            raise StaleHandleError(f"cannot write through stale handle {h}")
        slot = h.slot
        if field in ("pos", "vel", "acc", "f_ext"):
            vec = Vec3.of(value)
            {"pos": self._m_pos, "vel": self._m_vel,
             "acc": self._m_acc, "f_ext": self._m_fext}[field][slot] = vec.as_array()
        elif field == "m":
            if not (math.isfinite(value) and value > 0):
                raise InvalidValueError(f"mass must be positive, got {value}")
            self._m_mass[slot] = value
        elif field == "fixed":
            self._m_fixed[slot] = bool(value)
        elif field == "local_constraints":
            cs = tuple(value)
            if any(not isinstance(c, LocalConstraint) for c in cs):
                raise InvalidValueError("local_constraints must hold LocalConstraint")
            if cs:
                self._m_constraints[slot] = cs
            else:
                self._m_constraints.pop(slot, None)
            self.constraint_version += 1
        else:
            raise InvalidValueError(f"unknown mass field {field!r}")

    def set_spring_field(self, h: SpringHandle, field: str, value):
        self._check_writable()
        self.reconcile_spring_deaths()
        if not self.spring_is_live(h):
            raise StaleHandleError(f"cannot write through stale handle {h}")
        slot = h.slot
        if field == "rest_length":
            if value <= 0:
                raise InvalidValueError("rest length must be positive")
            self._s_rest[slot] = value
        elif field == "stiffness":
            if value < 0:
                raise InvalidValueError("stiffness must be >= 0")
            self._s_k[slot] = value
        elif field == "diameter":
            if value < 0:
                raise InvalidValueError("diameter must be >= 0")
            self._s_diam[slot] = value
        elif field == "yield_stress":
            if value is not None and value <= 0:
                raise InvalidValueError("yield stress must be positive")
            self._s_yield[slot] = np.inf if value is None else value
        elif field == "actuation":
            self._set_actuation_slot(slot, value)
        else:
            raise InvalidValueError(f"unknown spring field {field!r}")

    def set_applied_load(self, h: MassHandle, load: Vec3):
        """Persistent external force on a mass, added every step (unlike the
        per-step ``f_ext`` accumulator)."""
        self._check_writable()
        if not self.mass_is_live(h):
            raise StaleHandleError(f"cannot write through stale handle {h}")
        self._m_load[h.slot] = Vec3.of(load).as_array()

    def applied_load(self, h: MassHandle) -> Vec3:
        if not self.mass_is_live(h):
            raise StaleHandleError(f"handle is stale: {h}")
        return Vec3.of(self._m_load[h.slot])

    def add_global_constraint(self, c: LocalConstraint):
        self._check_writable()
        if not isinstance(c, LocalConstraint):
            raise InvalidValueError("expected LocalConstraint")
        self.global_constraints.append(c)
        self.constraint_version += 1

    # -------------------------------------------------------------- compact

    def compact(self) -> tuple[dict[MassHandle, MassHandle],
                               dict[SpringHandle, SpringHandle]]:
        """Reclaim dead slots, preserving alive iteration order.

        Returns translation tables mapping every outstanding live handle to
        its new handle. Retained copies of deleted objects are dropped.
        """
        if self._locked:
            raise SimulationRunningError("cannot compact while running")
        self.reconcile_spring_deaths()
        # springs dangling on deleted masses would otherwise survive with
        # remapped endpoints; invalidate them the way a traversal would
        s_idx = np.flatnonzero(self._s_alive[:self._s_n])
        if len(s_idx):
            e1, e2 = self._s_m1[s_idx], self._s_m2[s_idx]
            ok = (self._m_alive[e1] & (self._m_gen[e1] == self._s_m1gen[s_idx])
                  & self._m_alive[e2]
                  & (self._m_gen[e2] == self._s_m2gen[s_idx]))
            dangling = s_idx[~ok]
            self._s_alive[dangling] = False
            self._s_booked[dangling] = False
            self._s_alive_count -= len(dangling)
        m_old = np.flatnonzero(self._m_alive[:self._m_n])
        s_old = np.flatnonzero(self._s_alive[:self._s_n])
        m_map_arr = np.full(self._m_n, -1, dtype=np.int64)
        m_map_arr[m_old] = np.arange(len(m_old))

        # all surviving objects restart at a generation strictly above any
        # ever issued, so no un-remapped (or ancient) handle can alias
        # whatever lands on its slot
        m_floor = int(self._m_gen.max()) + 1 if len(self._m_gen) else \
            self._m_gen_floor + 1
        s_floor = int(self._s_gen.max()) + 1 if len(self._s_gen) else \
            self._s_gen_floor + 1
        mass_map = {MassHandle(int(o), int(self._m_gen[o])):
                    MassHandle(int(n), m_floor)
                    for n, o in enumerate(m_old)}
        spring_map = {SpringHandle(int(o), int(self._s_gen[o])):
                      SpringHandle(int(n), s_floor)
                      for n, o in enumerate(s_old)}

        for name in vars(self).copy():
            if not isinstance(getattr(self, name), np.ndarray):
                continue
            if name.startswith("_m_"):
                setattr(self, name, getattr(self, name)[m_old].copy())
            elif name.startswith("_s_"):
                setattr(self, name, getattr(self, name)[s_old].copy())
        self._m_gen_floor = m_floor
        self._s_gen_floor = s_floor
        self._m_gen[:] = m_floor
        self._s_gen[:] = s_floor
        # remap spring endpoints (all endpoints of alive springs are alive
        # masses; dangling springs were reconciled above)
        self._s_m1 = m_map_arr[self._s_m1]
        self._s_m2 = m_map_arr[self._s_m2]
        self._s_m1gen[:] = m_floor
        self._s_m2gen[:] = m_floor
        self._m_constraints = {int(m_map_arr[s]): c
                               for s, c in self._m_constraints.items()
                               if m_map_arr[s] >= 0}
        s_kept = {int(x) for x in s_old}
        self._s_custom = {int(np.searchsorted(s_old, s)): fn
                          for s, fn in self._s_custom.items() if s in s_kept}
        self._s_actuation = {int(np.searchsorted(s_old, s)): p
                             for s, p in self._s_actuation.items()
                             if s in s_kept}
        self._m_n = len(m_old)
        self._s_n = len(s_old)
        self._m_free = []
        self._s_free = []
        self._m_tombs.clear()
        self._s_tombs.clear()
        if len(self._m_pos) == 0:
            self._alloc_mass(self._INITIAL_CAPACITY)
        if len(self._s_m1) == 0:
            self._alloc_spring(self._INITIAL_CAPACITY)
        self.topology_version += 1
        self.constraint_version += 1
        return mass_map, spring_map

    # ----------------------------------------------------------- iteration

    def iter_masses(self) -> Iterator[tuple[MassHandle, Mass]]:
        for slot in self.alive_mass_slots():
            slot = int(slot)
            yield MassHandle(slot, int(self._m_gen[slot])), self._mass_from_slot(slot)

    def iter_springs(self) -> Iterator[tuple[SpringHandle, Spring]]:
        for slot in self.alive_spring_slots():
            slot = int(slot)
            yield (SpringHandle(slot, int(self._s_gen[slot])),
                   self._spring_from_slot(slot))
