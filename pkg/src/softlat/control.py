"""Asynchronous simulation controller.

A dedicated thread runs the step loop continuously; callers interact only
through breakpoints, the mutation queue, and pause-point snapshots:

* ``start()`` returns immediately; the loop steps as fast as it can.
* breakpoints (at a sim time, or on a predicate checked every N steps)
  pause the loop at a step boundary; ``wait_for_event()`` blocks the
  caller until then.
* writes are queued as :class:`MutationBatch` and applied atomically at
  the next pause point (immediately when already paused); no step ever
  observes a partially applied batch.
* while the loop runs, the store serves reads from the snapshot taken at
  the last run transition, so callers never see torn state.

All controller methods are thread-safe and internally serialized. Any
number of independent controllers may coexist in one process; controllers
that run concurrently should use the serial backend, because the parallel
kernels share one process-global thread pool.
"""
from __future__ import annotations

import heapq
import itertools
import logging
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from . import engine
from .core import Environment, Mass, Spring, Vec3
from .engine import StepConfig
from .errors import ControlStateError, InvalidValueError, NumericalAbort
from .store import MassHandle, ObjectStore, SpringHandle

log = logging.getLogger(__name__)

IDLE = "idle"
RUNNING = "running"
PAUSED = "paused"
DONE = "done"

_bp_seq = itertools.count()


@dataclass(frozen=True)
class Breakpoint:
    """Pause condition: a sim time, or a predicate over a read-only view."""

    kind: str                              # "at_time" | "on_condition"
    time: float | None = None
    predicate: Callable | None = None
    every: int = 100                       # predicate check interval, steps

    @staticmethod
    def at_time(t: float) -> "Breakpoint":
        return Breakpoint(kind="at_time", time=float(t))

    @staticmethod
    def on_condition(predicate: Callable, every: int = 100) -> "Breakpoint":
        if every < 1:
            raise InvalidValueError("check interval must be >= 1 step")
        return Breakpoint(kind="on_condition", predicate=predicate, every=every)


class StateView:
    """Cheap read-only view handed to condition-breakpoint predicates."""

    def __init__(self, store: ObjectStore, sim_time: float, step_count: int):
        n = store.mass_slot_count
        self.positions = store._m_pos[:n]
        self.velocities = store._m_vel[:n]
        self.alive = store._m_alive[:n]
        for arr in (self.positions, self.velocities, self.alive):
            arr.flags.writeable = False
        self.sim_time = sim_time
        self.step_count = step_count

    def release(self):
        for arr in (self.positions, self.velocities, self.alive):
            arr.flags.writeable = True


@dataclass(frozen=True)
class PauseReport:
    """Why and when the loop paused."""

    sim_time: float
    step_count: int
    reason: str                            # "breakpoint" | "pause" | "done" | "error"
    state: str                             # "paused" | "done"
    breakpoint: Breakpoint | None = None
    error: Exception | None = None


# ----------------------------------------------------------- mutation queue

@dataclass(frozen=True)
class SetMassField:
    handle: MassHandle
    field: str
    value: object


@dataclass(frozen=True)
class SetSpringField:
    handle: SpringHandle
    field: str
    value: object


@dataclass(frozen=True)
class SetAppliedLoad:
    handle: MassHandle
    load: Vec3


@dataclass(frozen=True)
class CreateMass:
    mass: Mass


@dataclass(frozen=True)
class CreateSpring:
    spring: Spring


@dataclass(frozen=True)
class DeleteMass:
    handle: MassHandle


@dataclass(frozen=True)
class DeleteSpring:
    handle: SpringHandle


@dataclass(frozen=True)
class SetEnvironment:
    env: Environment


Command = (SetMassField | SetSpringField | SetAppliedLoad | CreateMass
           | CreateSpring | DeleteMass | DeleteSpring | SetEnvironment)

_MASS_FIELD_NAMES = ("pos", "vel", "acc", "f_ext", "m", "fixed",
                     "local_constraints")
_SPRING_FIELD_NAMES = ("rest_length", "stiffness", "diameter", "yield_stress",
                       "actuation")


def _check_mass_value(field_name: str, value) -> str:
    import math as _math
    from .core import LocalConstraint
    if field_name in ("pos", "vel", "acc", "f_ext"):
        try:
            Vec3.of(value)
        except Exception:
            return f"rejected: {field_name} is not a finite 3-vector"
    elif field_name == "m":
        if not (isinstance(value, (int, float)) and _math.isfinite(value)
                and value > 0):
            return "rejected: mass must be positive and finite"
    elif field_name == "local_constraints":
        try:
            if any(not isinstance(c, LocalConstraint) for c in value):
                return "rejected: expected LocalConstraint items"
        except TypeError:
            return "rejected: local_constraints must be iterable"
    return "ok"


def _check_spring_value(field_name: str, value) -> str:
    from .actuation import ActuationParams
    if field_name == "rest_length" and not value > 0:
        return "rejected: rest length must be positive"
    if field_name == "stiffness" and not value >= 0:
        return "rejected: stiffness must be >= 0"
    if field_name == "diameter" and not value >= 0:
        return "rejected: diameter must be >= 0"
    if field_name == "yield_stress" and value is not None and not value > 0:
        return "rejected: yield stress must be positive"
    if field_name == "actuation" and value is not None \
            and not isinstance(value, ActuationParams):
        return "rejected: expected ActuationParams or None"
    return "ok"


@dataclass(frozen=True)
class MutationBatch:
    """Ordered commands applied all-or-nothing at one pause point.

    With the default ``abort_all`` policy any rejected command voids the
    whole batch; ``partial`` applies the valid ones. Deleting through a
    stale handle is an idempotent no-op, not a rejection.
    """

    commands: tuple
    policy: str = "abort_all"

    def __post_init__(self):
        object.__setattr__(self, "commands", tuple(self.commands))
        if self.policy not in ("abort_all", "partial"):
            raise InvalidValueError("policy must be abort_all or partial")


class MutationTicket:
    """Resolves once its batch has been applied or rejected."""

    def __init__(self, n_commands: int):
        self._event = threading.Event()
        self.applied = False
        self.statuses: list[str] = ["pending"] * n_commands
        self.created_handles: list[object] = [None] * n_commands

    def wait(self, timeout: float | None = None) -> bool:
        return self._event.wait(timeout)

    @property
    def resolved(self) -> bool:
        return self._event.is_set()

    def _finish(self, applied: bool, statuses: list[str], created: list):
        self.applied = applied
        self.statuses = statuses
        self.created_handles = created
        self._event.set()


# -------------------------------------------------------------- snapshots

@dataclass
class SimSnapshot:
    """Caller-owned deep copy of mass state at a pause point.

    ``stale`` marks snapshots served while the loop was running (they show
    the last synchronized state, not the live one).
    """

    sim_time: float
    step_count: int
    stale: bool
    ids: np.ndarray              # mass slot ids, ascending
    generations: np.ndarray
    positions: np.ndarray        # (n, 3)
    velocities: np.ndarray       # (n, 3)
    masses: np.ndarray
    fixed: np.ndarray

    def center_of_mass(self) -> Vec3:
        total = self.masses.sum()
        return Vec3.of((self.positions * self.masses[:, None]).sum(axis=0)
                       / total)


class SimController:
    """Owns a store and steps it on a dedicated thread."""

    def __init__(self, store: ObjectStore, env: Environment, cfg: StepConfig):
        self._store = store
        self._env = env
        self._cfg = cfg
        self._cond = threading.Condition()
        self._state = IDLE
        self._thread: threading.Thread | None = None
        self._t0 = 0.0
        self._step_count = 0
        self._pause_request = False
        self._at_time: list[tuple[float, int, Breakpoint]] = []
        self._conditions: list[list] = []    # [breakpoint, countdown]
        self._pending: list[tuple[MutationBatch, MutationTicket]] = []
        self._last_report: PauseReport | None = None
        self._step_hook: Callable | None = None

    # ------------------------------------------------------------- queries

    @property
    def state(self) -> str:
        with self._cond:
            return self._state

    @property
    def sim_time(self) -> float:
        with self._cond:
            return self._now()

    @property
    def step_count(self) -> int:
        with self._cond:
            return self._step_count

    @property
    def store(self) -> ObjectStore:
        return self._store

    @property
    def environment(self) -> Environment:
        return self._env

    @property
    def config(self) -> StepConfig:
        return self._cfg

    def _now(self) -> float:
        return self._t0 + self._step_count * self._cfg.dt

    # ----------------------------------------------------------- lifecycle

    def start(self, duration: float | None = None) -> None:
        """Begin or continue stepping; returns immediately.

        With ``duration`` an at-time breakpoint is installed at
        ``sim_time + duration``.
        """
        with self._cond:
            if self._state == DONE:
                raise ControlStateError("controller is stopped")
            if self._state == RUNNING:
                raise ControlStateError("already running")
            if duration is not None:
                if duration < 0:
                    raise InvalidValueError("duration must be >= 0")
                heapq.heappush(self._at_time,
                               (self._now() + duration, next(_bp_seq),
                                Breakpoint.at_time(self._now() + duration)))
            if self._state == IDLE:
                engine.check_stability(self._store, self._cfg.dt, self._env)
                self._thread = threading.Thread(
                    target=self._loop, name="softlat-sim", daemon=True)
                self._store.lock_for_run()
                self._state = RUNNING
                self._thread.start()
            else:  # PAUSED
                self._store.lock_for_run()
                self._state = RUNNING
                self._cond.notify_all()

    def pause(self) -> None:
        """Request a pause; takes effect within one step."""
        with self._cond:
            if self._state == PAUSED:
                return
            if self._state != RUNNING:
                raise ControlStateError(f"cannot pause from state {self._state}")
            self._pause_request = True

    def resume(self) -> None:
        with self._cond:
            if self._state != PAUSED:
                raise ControlStateError(f"cannot resume from state {self._state}")
            self._store.lock_for_run()
            self._state = RUNNING
            self._cond.notify_all()

    def stop(self) -> None:
        """Terminal; the loop exits at the next step boundary."""
        with self._cond:
            if self._state == DONE:
                return
            if self._state == IDLE:
                self._state = DONE
                self._last_report = PauseReport(
                    self._now(), self._step_count, "done", DONE)
                self._cond.notify_all()
                return
            self._state = DONE
            self._cond.notify_all()
        if self._thread is not None and self._thread is not threading.current_thread():
            self._thread.join()

    def set_breakpoint(self, bp: Breakpoint) -> None:
        """Install a breakpoint; the loop pauses at the first step boundary
        satisfying it (an at-time breakpoint already in the past fires at
        the next boundary)."""
        with self._cond:
            if self._state == DONE:
                raise ControlStateError("controller is stopped")
            if bp.kind == "at_time":
                heapq.heappush(self._at_time, (bp.time, next(_bp_seq), bp))
            elif bp.kind == "on_condition":
                self._conditions.append([bp, self._step_count + bp.every])
            else:
                raise InvalidValueError(f"unknown breakpoint kind {bp.kind!r}")

    def wait_for_event(self, timeout: float | None = None) -> PauseReport:
        """Block until the loop pauses or finishes; returns the report."""
        with self._cond:
            if self._state == IDLE:
                raise ControlStateError("controller has not been started")
            ok = self._cond.wait_for(
                lambda: self._state in (PAUSED, DONE), timeout)
            if not ok:
                raise TimeoutError("no pause event within timeout")
            report = self._last_report
            if report is None:
                report = PauseReport(self._now(), self._step_count, "done",
                                     self._state)
            return report

    # ------------------------------------------------------------ mutation

    def queue_mutations(self, batch: MutationBatch | Sequence) -> MutationTicket:
        """Queue a batch for atomic application at the next pause point
        (immediately when paused or idle)."""
        if not isinstance(batch, MutationBatch):
            batch = MutationBatch(commands=tuple(batch))
        ticket = MutationTicket(len(batch.commands))
        with self._cond:
            if self._state == DONE:
                raise ControlStateError("controller is stopped")
            # optimistic validation against the last synchronized state
            statuses = self._validate_batch(batch)
            hard = [s for s in statuses if s.startswith("rejected")]
            if hard and batch.policy == "abort_all":
                ticket._finish(False,
                               [s if s.startswith("rejected") else "aborted"
                                for s in statuses],
                               [None] * len(batch.commands))
                return ticket
            if self._state in (PAUSED, IDLE):
                self._apply_batch(batch, ticket)
            else:
                self._pending.append((batch, ticket))
        return ticket

    def _validate_batch(self, batch: MutationBatch) -> list[str]:
        """Per-command statuses, accounting for deletions earlier in the
        batch so application itself can never fail half-way."""
        deleted_m: set[MassHandle] = set()
        deleted_s: set[SpringHandle] = set()
        out = []
        for cmd in batch.commands:
            out.append(self._validate_cmd(cmd, deleted_m, deleted_s))
        return out

    def _validate_cmd(self, cmd, deleted_m: set, deleted_s: set) -> str:
        store = self._store
        if isinstance(cmd, SetMassField):
            if cmd.field not in _MASS_FIELD_NAMES:
                return f"rejected: unknown mass field {cmd.field!r}"
            if cmd.handle in deleted_m or not store.mass_is_live(cmd.handle):
                return "rejected: stale mass handle"
            return _check_mass_value(cmd.field, cmd.value)
        if isinstance(cmd, SetSpringField):
            if cmd.field not in _SPRING_FIELD_NAMES:
                return f"rejected: unknown spring field {cmd.field!r}"
            if cmd.handle in deleted_s or not store.spring_is_live(cmd.handle):
                return "rejected: stale spring handle"
            return _check_spring_value(cmd.field, cmd.value)
        if isinstance(cmd, SetAppliedLoad):
            if cmd.handle in deleted_m or not store.mass_is_live(cmd.handle):
                return "rejected: stale mass handle"
            try:
                Vec3.of(cmd.load)
            except Exception:
                return "rejected: load is not a 3-vector"
            return "ok"
        if isinstance(cmd, CreateMass):
            return "ok" if isinstance(cmd.mass, Mass) else "rejected: not a Mass"
        if isinstance(cmd, CreateSpring):
            if not isinstance(cmd.spring, Spring):
                return "rejected: not a Spring"
            for h in (cmd.spring.m1, cmd.spring.m2):
                if h in deleted_m or not store.mass_is_live(h):
                    return "rejected: stale spring endpoint"
            return "ok"
        if isinstance(cmd, DeleteMass):
            deleted_m.add(cmd.handle)   # stale delete is an idempotent no-op
            return "ok"
        if isinstance(cmd, DeleteSpring):
            deleted_s.add(cmd.handle)
            return "ok"
        if isinstance(cmd, SetEnvironment):
            return ("ok" if isinstance(cmd.env, Environment)
                    else "rejected: not an Environment")
        return f"rejected: unknown command {type(cmd).__name__}"

    def _apply_batch(self, batch: MutationBatch, ticket: MutationTicket):
        # authoritative validation, then apply; store must be unlocked
        statuses = self._validate_batch(batch)
        hard = any(s.startswith("rejected") for s in statuses)
        created: list = [None] * len(batch.commands)
        if hard and batch.policy == "abort_all":
            ticket._finish(False,
                           [s if s.startswith("rejected") else "aborted"
                            for s in statuses], created)
            return
        store = self._store
        for i, cmd in enumerate(batch.commands):
            if statuses[i].startswith("rejected"):
                continue
            if isinstance(cmd, SetMassField):
                store.set_mass_field(cmd.handle, cmd.field, cmd.value)
            elif isinstance(cmd, SetSpringField):
                store.set_spring_field(cmd.handle, cmd.field, cmd.value)
            elif isinstance(cmd, SetAppliedLoad):
                store.set_applied_load(cmd.handle, cmd.load)
            elif isinstance(cmd, CreateMass):
                created[i] = store.create_mass(cmd.mass)
            elif isinstance(cmd, CreateSpring):
                created[i] = store.create_spring(cmd.spring)
            elif isinstance(cmd, DeleteMass):
                if not store.delete_mass(cmd.handle):
                    statuses[i] = "stale_noop"
                    continue
            elif isinstance(cmd, DeleteSpring):
                if not store.delete_spring(cmd.handle):
                    statuses[i] = "stale_noop"
                    continue
            elif isinstance(cmd, SetEnvironment):
                self._env = cmd.env
            statuses[i] = "applied"
        ticket._finish(not hard, statuses, created)

    # ------------------------------------------------------------ snapshot

    def snapshot(self, selection: Iterable[MassHandle] | None = None
                 ) -> SimSnapshot:
        """Deep copy of mass state.

        Legal at any time; while the loop runs the copy reflects the last
        pause point and is flagged ``stale``. With ``selection`` the rows
        follow the given handles and may include last-known state of
        deleted masses.
        """
        with self._cond:
            store = self._store
            stale = self._state == RUNNING
            if selection is not None:
                rows = [store.get_mass(h) for h in selection]
                return SimSnapshot(
                    sim_time=self._now(), step_count=self._step_count,
                    stale=stale,
                    ids=np.array([h.slot for h in selection], dtype=np.int64),
                    generations=np.array([h.generation for h in selection],
                                         dtype=np.int64),
                    positions=np.array([m.pos.as_array() for m in rows])
                    .reshape(-1, 3),
                    velocities=np.array([m.vel.as_array() for m in rows])
                    .reshape(-1, 3),
                    masses=np.array([m.m for m in rows]),
                    fixed=np.array([m.fixed for m in rows], dtype=bool))
            n = store.mass_slot_count
            if stale:
                sync = store._sync
                alive = sync.m_alive
                pos, vel = sync.m_pos, sync.m_vel
            else:
                alive = store._m_alive[:n]
                pos, vel = store._m_pos[:n], store._m_vel[:n]
            ids = np.flatnonzero(alive)
            return SimSnapshot(
                sim_time=self._now(), step_count=self._step_count, stale=stale,
                ids=ids.astype(np.int64),
                generations=store._m_gen[ids].copy(),
                positions=pos[ids].copy(), velocities=vel[ids].copy(),
                masses=store._m_mass[ids].copy(),
                fixed=store._m_fixed[ids].copy())

    def set_step_hook(self, hook: Callable | None) -> None:
        """Test instrumentation: called as hook(controller) after each step
        inside the loop. Must be cheap and must not mutate state."""
        with self._cond:
            self._step_hook = hook

    # ----------------------------------------------------------- main loop

    def _due_breakpoint(self) -> tuple[str, Breakpoint | None] | None:
        if self._pause_request:
            self._pause_request = False
            return ("pause", None)
        tol = self._cfg.dt * 1e-9
        if self._at_time and self._at_time[0][0] <= self._now() + tol:
            _, _, bp = heapq.heappop(self._at_time)
            return ("breakpoint", bp)
        due = None
        if self._conditions:
            view = None
            for entry in self._conditions:
                if self._step_count < entry[1]:
                    continue
                entry[1] = self._step_count + entry[0].every
                if due is None:
                    if view is None:
                        view = StateView(self._store, self._now(),
                                         self._step_count)
                    try:
                        hit = bool(entry[0].predicate(view))
                    except Exception:
                        log.exception("condition breakpoint predicate failed")
                        hit = False
                    if hit:
                        due = entry
            if view is not None:
                view.release()
        if due is not None:
            self._conditions.remove(due)
            return ("breakpoint", due[0])
        return None

    def _enter_pause(self, reason: str, bp: Breakpoint | None):
        self._store.unlock()
        while self._pending:
            batch, ticket = self._pending.pop(0)
            self._apply_batch(batch, ticket)
        self._last_report = PauseReport(self._now(), self._step_count,
                                        reason, PAUSED, breakpoint=bp)
        self._state = PAUSED
        self._cond.notify_all()

    def _enter_done(self, error: Exception | None):
        if self._store.locked:
            self._store.unlock()
        for batch, ticket in self._pending:
            ticket._finish(False, ["aborted"] * len(batch.commands),
                           [None] * len(batch.commands))
        self._pending.clear()
        self._last_report = PauseReport(
            self._now(), self._step_count, "error" if error else "done",
            DONE, error=error)
        self._state = DONE
        self._cond.notify_all()

    def _loop(self):
        while True:
            with self._cond:
                if self._state == DONE:
                    self._enter_done(None)
                    return
                if self._state == PAUSED:
                    self._cond.wait()
                    continue
                due = self._due_breakpoint()
                if due is not None:
                    self._enter_pause(*due)
                    continue
                try:
                    engine.step(self._store, self._env, self._now(), self._cfg)
                    self._step_count += 1
                    if self._step_hook is not None:
                        self._step_hook(self)
                except Exception as exc:  # NumericalAbort or hook failure
                    if not isinstance(exc, NumericalAbort):
                        log.exception("simulation loop failed")
                    if isinstance(exc, NumericalAbort):
                        exc.sim_time = self._now()
                    self._enter_done(exc)
                    return
