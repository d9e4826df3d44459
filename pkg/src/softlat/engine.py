"""Integration core: alternating spring and mass passes at fixed timestep.

A step is one spring pass (Hooke forces accumulated into each mass's
``f_ext``) followed by one mass pass (semi-implicit Euler: velocity first,
then position). The spring pass never reads anything the current step's
mass pass wrote, so spring work items can run in any order; the mass pass
starts only after the spring pass returns.

Backends:

* ``serial`` — one thread, springs visited in slot order.
* ``parallel`` — numba threads. With ``slotted`` accumulation each spring
  writes a pre-assigned slot and a deterministic reduction sums slots in
  spring order, making results bit-identical to the serial backend. With
  ``linearizable`` accumulation workers accumulate privately and buffers
  are combined in worker order, so results match serial only up to
  floating-point reassociation.
"""
from __future__ import annotations

import logging
import math
import weakref
from dataclasses import dataclass

import numba
import numpy as np

from . import kernels
from .actuation import actuation_factor
from .core import Environment, Mass, Vec3
from .errors import InvalidValueError, NumericalAbort
from .store import ObjectStore

log = logging.getLogger(__name__)

#: tangential speeds below this count as sticking for static friction
V_STICK = 1e-6

ACCUMULATIONS = ("linearizable", "slotted")
BACKENDS = ("serial", "parallel")


@dataclass(frozen=True)
class StepConfig:
    """Timestep, force-accumulation strategy, and execution backend."""

    dt: float
    accumulation: str = "linearizable"
    backend: str = "serial"
    workers: int | None = None

    def __post_init__(self):
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise InvalidValueError(f"dt must be positive, got {self.dt}")
        if self.accumulation not in ACCUMULATIONS:
            raise InvalidValueError(
                f"accumulation must be one of {ACCUMULATIONS}")
        if self.backend not in BACKENDS:
            raise InvalidValueError(f"backend must be one of {BACKENDS}")
        if self.workers is not None and self.workers < 1:
            raise InvalidValueError("worker count must be >= 1")

    def effective_workers(self) -> int:
        limit = numba.config.NUMBA_NUM_THREADS
        if self.workers is None:
            return limit
        return min(self.workers, limit)


class _StoreCache:
    """Per-store scratch buffers and derived layouts, rebuilt on change."""

    def __init__(self):
        self.topo_version = -1
        self.constraint_version = -1
        self.slot_force = np.zeros((0, 3))
        self.red_off = np.zeros(1, dtype=np.int64)
        self.red_idx = np.zeros(0, dtype=np.int64)
        self.custom_factor = np.ones(0)
        self.counters = np.zeros(3, dtype=np.int64)
        self.err_slot = np.zeros(1, dtype=np.int64)
        self.bufs = np.zeros((0, 0, 3))
        self.worker_counters = np.zeros((0, 3), dtype=np.int64)
        self.lc_off = np.zeros(1, dtype=np.int64)
        self.lc_kind = np.zeros(0, dtype=np.int8)
        self.lc_vec = np.zeros((0, 3))
        self.gc_kind = np.zeros(0, dtype=np.int8)
        self.gc_vec = np.zeros((0, 3))
        self.degen_logged = np.zeros(0, dtype=np.bool_)


_caches: "weakref.WeakKeyDictionary[ObjectStore, _StoreCache]" = \
    weakref.WeakKeyDictionary()


def _cache_for(store: ObjectStore) -> _StoreCache:
    cache = _caches.get(store)
    if cache is None:
        cache = _StoreCache()
        _caches[store] = cache
    return cache


def _refresh_slotted_layout(store: ObjectStore, cache: _StoreCache):
    if cache.topo_version == store.topology_version and \
            len(cache.red_off) == store.mass_slot_count + 1:
        return
    s_n = store.spring_slot_count
    m_n = store.mass_slot_count
    owner = np.empty(2 * s_n, dtype=np.int64)
    owner[0::2] = store._s_m1[:s_n]
    owner[1::2] = store._s_m2[:s_n]
    order = np.argsort(owner, kind="stable")
    cache.red_idx = order
    cache.red_off = np.searchsorted(owner[order], np.arange(m_n + 1))
    cache.slot_force = np.zeros((2 * s_n, 3))
    cache.topo_version = store.topology_version


def _refresh_constraints(store: ObjectStore, cache: _StoreCache):
    if cache.constraint_version == store.constraint_version and \
            len(cache.lc_off) == store.mass_slot_count + 1:
        return
    m_n = store.mass_slot_count
    kinds: list[int] = []
    vecs: list[np.ndarray] = []
    off = np.zeros(m_n + 1, dtype=np.int64)
    for slot in range(m_n):
        for c in store._m_constraints.get(slot, ()):
            kinds.append(kernels.KIND_DIRECTION if c.kind == "direction"
                         else kernels.KIND_PLANE)
            vecs.append(c.vector.as_array())
        off[slot + 1] = len(kinds)
    cache.lc_off = off
    cache.lc_kind = np.array(kinds, dtype=np.int8)
    cache.lc_vec = (np.vstack(vecs) if vecs else np.zeros((0, 3)))
    gk: list[int] = []
    gv: list[np.ndarray] = []
    for c in store.global_constraints:
        gk.append(kernels.KIND_DIRECTION if c.kind == "direction"
                  else kernels.KIND_PLANE)
        gv.append(c.vector.as_array())
    cache.gc_kind = np.array(gk, dtype=np.int8)
    cache.gc_vec = (np.vstack(gv) if gv else np.zeros((0, 3)))
    cache.constraint_version = store.constraint_version


def _fill_custom_factors(store: ObjectStore, cache: _StoreCache, sim_t: float):
    s_n = store.spring_slot_count
    if len(cache.custom_factor) < s_n:
        cache.custom_factor = np.ones(s_n)
    for slot, params in store._s_actuation.items():
        if callable(params.waveform) and store._s_alive[slot]:
            cache.custom_factor[slot] = actuation_factor(params, sim_t)


def spring_pass(store: ObjectStore, sim_t: float, cfg: StepConfig) -> None:
    """Apply Hooke forces of all alive springs into the mass accumulators.

    Springs whose endpoints no longer resolve are invalidated; springs
    whose stress exceeds their yield stress apply their final force and
    are marked broken.
    """
    cache = _cache_for(store)
    _fill_custom_factors(store, cache, sim_t)
    s_n = store.spring_slot_count
    m_n = store.mass_slot_count
    cache.counters[:] = 0
    args = (s_n, store._s_alive, store._s_m1, store._s_m2,
            store._s_m1gen, store._s_m2gen,
            store._m_alive, store._m_gen, store._m_pos)
    tail = (store._s_rest, store._s_k, store._s_diam, store._s_yield,
            store._s_act_mode, store._s_act_amp, store._s_act_freq,
            store._s_act_off, store._s_act_per,
            cache.custom_factor, store._s_degen, sim_t, cache.counters)
    if cfg.backend == "serial":
        if cfg.accumulation == "linearizable":
            kernels.spring_linear_serial(*args, store._m_fext, *tail)
        else:
            _refresh_slotted_layout(store, cache)
            kernels.spring_slotted_serial(*args, cache.slot_force, *tail)
            kernels.reduce_slots_serial(m_n, store._m_fext, cache.slot_force,
                                        cache.red_off, cache.red_idx)
    else:
        workers = cfg.effective_workers()
        numba.set_num_threads(workers)
        if cfg.accumulation == "slotted":
            _refresh_slotted_layout(store, cache)
            kernels.spring_slotted_parallel(*args, cache.slot_force, *tail)
            kernels.reduce_slots_parallel(m_n, store._m_fext, cache.slot_force,
                                          cache.red_off, cache.red_idx)
        else:
            if cache.bufs.shape[:2] != (workers, m_n):
                cache.bufs = np.zeros((workers, m_n, 3))
                cache.worker_counters = np.zeros((workers, 3), dtype=np.int64)
            kernels.spring_linear_chunked(*args, cache.bufs, *tail[:-1],
                                          cache.worker_counters, workers)
            kernels.combine_buffers(m_n, store._m_fext, cache.bufs, workers)
            cache.counters += cache.worker_counters.sum(axis=0)
    if cache.counters[2]:
        _log_degenerate(store, cache)


def _log_degenerate(store: ObjectStore, cache: _StoreCache):
    s_n = store.spring_slot_count
    if len(cache.degen_logged) < s_n:
        grown = np.zeros(s_n, dtype=np.bool_)
        grown[:len(cache.degen_logged)] = cache.degen_logged
        cache.degen_logged = grown
    fresh = np.flatnonzero(store._s_degen[:s_n] & ~cache.degen_logged[:s_n])
    for slot in fresh:
        log.warning("spring slot %d has zero length; contributing zero force",
                    slot)
    cache.degen_logged[fresh] = True


def mass_pass(store: ObjectStore, env: Environment, cfg: StepConfig) -> None:
    """Integrate every alive non-fixed mass one timestep and clear the
    force accumulators."""
    cache = _cache_for(store)
    _refresh_constraints(store, cache)
    planes_list = env.planes()
    balls_list = env.balls()
    planes = np.zeros((len(planes_list), 7))
    for p, pl in enumerate(planes_list):
        planes[p, :3] = pl.normal.as_array()
        planes[p, 3] = pl.offset
        planes[p, 4] = pl.stiffness
        planes[p, 5] = pl.static_friction
        planes[p, 6] = pl.kinetic_friction
    balls = np.zeros((len(balls_list), 5))
    for b, bl in enumerate(balls_list):
        balls[b, :3] = bl.center.as_array()
        balls[b, 3] = bl.radius
        balls[b, 4] = bl.stiffness
    g = env.gravity
    cache.err_slot[0] = 0
    args = (store.mass_slot_count, store._m_alive, store._m_fixed,
            store._m_pos, store._m_vel, store._m_acc, store._m_fext,
            store._m_load, store._m_mass,
            g.x, g.y, g.z, env.drag_coeff, planes, balls,
            cache.gc_kind, cache.gc_vec,
            cache.lc_off, cache.lc_kind, cache.lc_vec,
            cfg.dt, V_STICK, cache.err_slot)
    if cfg.backend == "serial":
        kernels.mass_pass_serial(*args)
    else:
        numba.set_num_threads(cfg.effective_workers())
        kernels.mass_pass_parallel(*args)
    if cache.err_slot[0]:
        slot = int(cache.err_slot[0]) - 1
        raise NumericalAbort(
            f"non-finite state on mass slot {slot}; "
            f"reduce dt or stiffness", mass_slot=slot)


def step(store: ObjectStore, env: Environment, sim_t: float,
         cfg: StepConfig) -> float:
    """One full timestep: spring pass, then mass pass. Returns the new
    simulation time."""
    spring_pass(store, sim_t, cfg)
    mass_pass(store, env, cfg)
    return sim_t + cfg.dt


def throughput(springs: int, steps: int, wall_seconds: float) -> float:
    """Spring updates per second for a measured run."""
    if wall_seconds <= 0:
        raise InvalidValueError("wall_seconds must be positive")
    return springs * steps / wall_seconds


def check_stability(store: ObjectStore, dt: float,
                    env: Environment | None = None) -> float:
    """Ratio dt*sqrt(k_max/m_min); warns above 0.5 (non-fatal).

    Contact penalty stiffnesses count toward k_max: a penetrated contact is
    a spring too, and overstiff ground is the usual blow-up cause.
    """
    m_slots = store.alive_mass_slots()
    if len(m_slots) == 0:
        return 0.0
    s_slots = store.alive_spring_slots()
    k_max = float(store._s_k[s_slots].max()) if len(s_slots) else 0.0
    if env is not None:
        for c in env.contacts:
            k_max = max(k_max, c.stiffness)
    if k_max == 0.0:
        return 0.0
    m_min = float(store._m_mass[m_slots].min())
    ratio = dt * math.sqrt(k_max / m_min) if m_min > 0 else math.inf
    if ratio > 0.5:
        log.warning("dt*sqrt(k_max/m_min) = %.3g exceeds 0.5; "
                    "integration may be unstable", ratio)
    return ratio


def contact_forces(mass: Mass, env: Environment) -> Vec3:
    """Contact force on a single mass, reference implementation.

    Mirrors the kernel: force applied so far is the accumulator plus
    gravity and drag; each penetrated contact adds a penalty normal force
    and Coulomb friction resolved against the applied tangential force.
    """
    f = (mass.f_ext + env.gravity * mass.m - mass.vel * env.drag_coeff)
    total = Vec3.zero()
    for pl in env.planes():
        depth = pl.offset - mass.pos.dot(pl.normal)
        if depth <= 0:
            continue
        nmag = pl.stiffness * depth
        normal_force = pl.normal * nmag
        f_with_n = f + total + normal_force
        v_t = mass.vel - pl.normal * mass.vel.dot(pl.normal)
        f_t = f_with_n - pl.normal * f_with_n.dot(pl.normal)
        contrib = normal_force
        if v_t.norm() < V_STICK and f_t.norm() <= pl.static_friction * nmag:
            contrib = contrib - f_t
        elif v_t.norm() >= V_STICK:
            contrib = contrib - v_t * (pl.kinetic_friction * nmag / v_t.norm())
        elif f_t.norm() > 0:
            contrib = contrib - f_t * (pl.kinetic_friction * nmag / f_t.norm())
        total = total + contrib
    for bl in env.balls():
        d = mass.pos - bl.center
        dist = d.norm()
        depth = bl.radius - dist
        if depth > 0 and dist > 0:
            total = total + d * (bl.stiffness * depth / dist)
    return total


def actuation_factors(store: ObjectStore, sim_t: float,
                      slots: np.ndarray) -> np.ndarray:
    """Vectorized rest-length factors for the given spring slots."""
    mode = store._s_act_mode[slots]
    out = np.ones(len(slots))
    periodic = (mode == 1) | (mode == 2)
    if periodic.any():
        sel = slots[periodic]
        t = (sim_t - store._s_act_off[sel]) % store._s_act_per[sel]
        f = 1.0 + store._s_act_amp[sel] * np.sin(store._s_act_freq[sel] * t)
        if (mode == 2).any():
            quiet = (store._s_act_mode[sel] == 2) & (sim_t < store._s_act_off[sel])
            f = np.where(quiet, 1.0, f)
        out[periodic] = f
    custom = np.flatnonzero(mode == 3)
    for idx in custom:
        slot = int(slots[idx])
        out[idx] = actuation_factor(store._s_actuation[slot], sim_t)
    return out


@dataclass(frozen=True)
class EnergyBreakdown:
    kinetic: float
    spring_potential: float
    gravity_potential: float

    @property
    def total(self) -> float:
        return self.kinetic + self.spring_potential + self.gravity_potential


def mechanical_energy(store: ObjectStore, env: Environment,
                      sim_t: float = 0.0) -> EnergyBreakdown:
    """Kinetic, elastic, and gravitational energy of the alive state.

    Gravitational potential is measured from the coordinate origin. The
    elastic term uses the actuated rest length at ``sim_t``.
    """
    m = store.alive_mass_slots()
    ke = 0.0
    gpe = 0.0
    if len(m):
        masses = store._m_mass[m]
        vel = store._m_vel[m]
        pos = store._m_pos[m]
        ke = 0.5 * float(np.sum(masses * np.sum(vel * vel, axis=1)))
        gpe = -float(np.sum(masses * (pos @ env.gravity.as_array())))
    s = store.alive_spring_slots()
    spe = 0.0
    if len(s):
        d = store._m_pos[store._s_m2[s]] - store._m_pos[store._s_m1[s]]
        lengths = np.linalg.norm(d, axis=1)
        targets = actuation_factors(store, sim_t, s) * store._s_rest[s]
        spe = 0.5 * float(np.sum(store._s_k[s] * (lengths - targets) ** 2))
    return EnergyBreakdown(ke, spe, gpe)


@dataclass(frozen=True)
class SpringLoads:
    """Per-spring force magnitudes and stresses at one instant."""

    slots: np.ndarray
    lengths: np.ndarray
    force_magnitudes: np.ndarray
    stresses: np.ndarray          # |F| / cross-section; inf for zero diameter


def spring_loads(store: ObjectStore, sim_t: float = 0.0) -> SpringLoads:
    s = store.alive_spring_slots()
    d = store._m_pos[store._s_m2[s]] - store._m_pos[store._s_m1[s]]
    lengths = np.linalg.norm(d, axis=1)
    targets = actuation_factors(store, sim_t, s) * store._s_rest[s]
    fmag = np.abs(store._s_k[s] * (lengths - targets))
    area = 0.25 * np.pi * store._s_diam[s] ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        stress = np.where(area > 0, fmag / np.where(area > 0, area, 1.0),
                          np.where(fmag > 0, np.inf, 0.0))
    return SpringLoads(s, lengths, fmag, stress)
