import random
import time

import numpy as np
import pytest
from hypothesis.stateful import Bundle, RuleBasedStateMachine, invariant, rule

from softlat import (InvalidValueError, Mass, SimulationRunningError, Spring,
                     StaleHandleError, UnknownHandleError, Vec3)
from softlat.store import MassHandle, ObjectStore

from conftest import SOFT, free_env, make_lattice, run_steps, state_bytes
from softlat import StepConfig


def mk_mass(x=0.0, m=1.0):
    return Mass(pos=Vec3(x, 0, 0), m=m)


def test_create_and_resolve(store):
    h = store.create_mass(mk_mass())
    assert store.mass_is_live(h)
    assert store.get_mass(h).m == 1.0
    assert store.mass_count == 1


def test_create_invalid_mass_rejected(store):
    with pytest.raises(InvalidValueError):
        store.create_mass("not a mass")


def test_delete_then_resolve_stale(store):
    h = store.create_mass(mk_mass())
    assert store.delete_mass(h)
    assert not store.mass_is_live(h)
    assert store.mass_count == 0
    # last-known state still readable
    assert store.get_mass(h).m == 1.0


def test_double_delete_idempotent(store):
    h = store.create_mass(mk_mass())
    assert store.delete_mass(h) is True
    assert store.delete_mass(h) is False


def test_slot_reuse_bumps_generation(store):
    h1 = store.create_mass(mk_mass(m=1.0))
    store.delete_mass(h1)
    h2 = store.create_mass(mk_mass(m=2.0))
    assert h2.slot == h1.slot
    assert h2.generation != h1.generation
    # the stale handle never resolves to the new object
    assert not store.mass_is_live(h1)
    assert store.get_mass(h1).m == 1.0
    assert store.get_mass(h2).m == 2.0


def test_spring_create_requires_live_distinct_endpoints(store):
    a = store.create_mass(mk_mass(0.0))
    b = store.create_mass(mk_mass(1.0))
    s = store.create_spring(Spring(m1=a, m2=b, rest_length=1.0, stiffness=5.0))
    assert store.spring_is_live(s)
    store.delete_mass(b)
    with pytest.raises(StaleHandleError):
        store.create_spring(Spring(m1=a, m2=b, rest_length=1.0, stiffness=5.0))
    c = store.create_mass(mk_mass(2.0))  # reuses b's slot, new generation
    with pytest.raises(InvalidValueError):
        store.create_spring(Spring(m1=c, m2=c, rest_length=1.0, stiffness=5.0))


def test_spring_delete_and_tombstone(store):
    a = store.create_mass(mk_mass(0.0))
    b = store.create_mass(mk_mass(1.0))
    s = store.create_spring(Spring(m1=a, m2=b, rest_length=1.0, stiffness=5.0))
    assert store.delete_spring(s)
    assert not store.spring_is_live(s)
    assert store.get_spring(s).stiffness == 5.0
    assert store.delete_spring(s) is False


def test_unknown_handle_raises(store):
    with pytest.raises(UnknownHandleError):
        store.get_mass(MassHandle(123, 7))


def test_set_get_fields(store):
    h = store.create_mass(mk_mass())
    store.set_mass_field(h, "vel", Vec3(1, 2, 3))
    store.set_mass_field(h, "fixed", True)
    m = store.get_mass(h)
    assert m.vel == Vec3(1, 2, 3) and m.fixed
    with pytest.raises(InvalidValueError):
        store.set_mass_field(h, "m", -1.0)
    with pytest.raises(InvalidValueError):
        store.set_mass_field(h, "nope", 1)
    store.delete_mass(h)
    with pytest.raises(StaleHandleError):
        store.set_mass_field(h, "m", 2.0)


def test_writes_rejected_while_locked(store):
    h = store.create_mass(mk_mass())
    store.lock_for_run()
    with pytest.raises(SimulationRunningError):
        store.set_mass_field(h, "m", 2.0)
    with pytest.raises(SimulationRunningError):
        store.create_mass(mk_mass())
    with pytest.raises(SimulationRunningError):
        store.delete_mass(h)
    # reads serve the synchronized snapshot
    assert store.get_mass(h).m == 1.0
    store.unlock()
    store.set_mass_field(h, "m", 2.0)
    assert store.get_mass(h).m == 2.0


def test_set_spring_stiffness_roundtrip(store):
    a = store.create_mass(mk_mass(0.0))
    b = store.create_mass(mk_mass(1.0))
    s = store.create_spring(Spring(m1=a, m2=b, rest_length=1.0, stiffness=5.0))
    store.set_spring_field(s, "stiffness", 7.5)
    assert store.get_spring(s).stiffness == 7.5


def test_deleted_mass_leaves_spring_inert():
    """Deleting a mass does not touch its springs; the engine invalidates
    them on first traversal."""
    st, body = make_lattice(3, stretch=1.05)
    dead_slot = body.mass_handles[0].slot
    touching = [i for i in range(len(body.spring_handles))
                if st.get_spring(body.spring_handles[i]).m1.slot == dead_slot
                or st.get_spring(body.spring_handles[i]).m2.slot == dead_slot]
    assert touching
    st.delete_mass(body.mass_handles[0])
    # deletion itself leaves the springs booked as alive (no traversal)
    assert all(st.spring_is_live(body.spring_handles[i]) for i in touching)
    run_steps(st, free_env(), StepConfig(dt=1e-4), 10)
    # first traversal invalidated them; last-known state stays readable
    for i in touching:
        h = body.spring_handles[i]
        assert not st.spring_is_live(h)
        assert st.get_spring(h).stiffness > 0


def test_deleted_spring_equals_lattice_built_without_it():
    """Trajectories with a lazily deleted spring match a store where the
    spring was never created."""
    st1, body1 = make_lattice(3, stretch=1.05)
    victim = body1.spring_handles[17]
    st1.delete_spring(victim)

    st2 = ObjectStore()
    from softlat.builder import LatticeSpec, build_lattice
    body2 = build_lattice(LatticeSpec(corner=Vec3(0, 0, 0), nx=3, ny=3, nz=3,
                                      spacing=0.05, material=SOFT), st2)
    st2._m_pos[body2.mass_handles.slots] *= 1.05
    st2.delete_spring(body2.spring_handles[17])

    cfg = StepConfig(dt=1e-4)
    run_steps(st1, free_env(), cfg, 200)
    run_steps(st2, free_env(), cfg, 200)
    assert state_bytes(st1) == state_bytes(st2)


def test_results_invariant_under_dead_slots():
    """Dead slots are skipped and contribute no forces: a store carrying
    dead objects alongside the lattice matches a clean store exactly."""
    st1, body1 = make_lattice(3, stretch=1.05)

    st2, body2 = make_lattice(3, stretch=1.05)
    junk = [st2.create_mass(mk_mass(float(i) + 50.0, m=2.0))
            for i in range(40)]
    js = [st2.create_spring(Spring(m1=junk[i], m2=junk[i + 1], rest_length=1.0,
                                   stiffness=1.0)) for i in range(39)]
    for h in js:
        st2.delete_spring(h)
    for h in junk:
        st2.delete_mass(h)
    assert st2.mass_slot_count > st1.mass_slot_count

    cfg = StepConfig(dt=1e-4)
    run_steps(st1, free_env(), cfg, 100)
    run_steps(st2, free_env(), cfg, 100)
    p1 = st1._m_pos[body1.mass_handles.slots]
    p2 = st2._m_pos[body2.mass_handles.slots]
    assert np.array_equal(p1, p2)


def test_compact_preserves_trajectories():
    """Reference run: delete two masses mid-flight and continue. Compacted
    run: same deletions, then compact before continuing. Final states must
    agree through the translation table."""
    cfg = StepConfig(dt=1e-4)

    ref_store, ref_body = make_lattice(4, stretch=1.05)
    run_steps(ref_store, free_env(), cfg, 50)
    for i in (3, 11):
        ref_store.delete_mass(ref_body.mass_handles[i])
    run_steps(ref_store, free_env(), cfg, 50)

    st, body = make_lattice(4, stretch=1.05)
    run_steps(st, free_env(), cfg, 50)
    for i in (3, 11):
        st.delete_mass(body.mass_handles[i])
    mass_map, _spring_map = st.compact()
    run_steps(st, free_env(), cfg, 50)

    for i, h in enumerate(body.mass_handles):
        ref_h = ref_body.mass_handles[i]
        if not ref_store.mass_is_live(ref_h):
            assert h not in mass_map
            continue
        new_h = mass_map[h]
        assert np.array_equal(ref_store._m_pos[ref_h.slot],
                              st._m_pos[new_h.slot])
        assert np.array_equal(ref_store._m_vel[ref_h.slot],
                              st._m_vel[new_h.slot])


def test_compact_counts_and_empty(store):
    hs = [store.create_mass(mk_mass(float(i))) for i in range(10)]
    for h in hs[::2]:
        store.delete_mass(h)
    alive_before = store.mass_count
    mass_map, _ = store.compact()
    assert store.mass_count == alive_before
    assert store.mass_slot_count == alive_before
    assert len(mass_map) == alive_before
    empty = ObjectStore()
    m1, s1 = empty.compact()
    assert m1 == {} and s1 == {}


def test_compact_while_locked_errors(store):
    store.lock_for_run()
    with pytest.raises(SimulationRunningError):
        store.compact()
    store.unlock()


def test_handle_count_accounting(store):
    created, deleted = 0, 0
    handles = []
    rng = random.Random(42)
    for _ in range(2000):
        if handles and rng.random() < 0.4:
            h = handles.pop(rng.randrange(len(handles)))
            if store.delete_mass(h):
                deleted += 1
        else:
            handles.append(store.create_mass(mk_mass(rng.random())))
            created += 1
    assert store.mass_count == created - deleted == len(handles)
    assert all(store.mass_is_live(h) for h in handles)


def test_fuzz_generation_safety():
    """Randomized create/delete/read churn: stale handles must never
    resolve, live handles always must, and counts must balance."""
    store = ObjectStore()
    rng = random.Random(7)
    live: dict = {}
    dead: dict = {}
    for op in range(20000):
        r = rng.random()
        if r < 0.45 or not live:
            h = store.create_mass(mk_mass(rng.random(), m=1.0 + rng.random()))
            live[h] = store.get_mass(h).m
        elif r < 0.8:
            h = rng.choice(list(live))
            assert store.delete_mass(h)
            dead[h] = live.pop(h)
        else:
            if dead and rng.random() < 0.5:
                h = rng.choice(list(dead))
                assert not store.mass_is_live(h)
                assert store.get_mass(h).m == dead[h]
            else:
                h = rng.choice(list(live))
                assert store.mass_is_live(h)
                assert store.get_mass(h).m == live[h]
    assert store.mass_count == len(live)


class StoreMachine(RuleBasedStateMachine):
    """Create/delete/compact churn: live handles (remapped through compact
    translation tables) always resolve to their values; stale ones never
    resolve."""

    def __init__(self):
        super().__init__()
        self.store = ObjectStore()
        self.live: dict = {}
        self.dead: set = set()
        self.counter = 0.0

    handles = Bundle("handles")

    @rule(target=handles)
    def create(self):
        self.counter += 1.0
        h = self.store.create_mass(mk_mass(self.counter, m=self.counter))
        self.live[h] = self.counter
        return h

    @rule(h=handles)
    def delete(self, h):
        if h in self.live:
            assert self.store.delete_mass(h)
            self.live.pop(h)
            self.dead.add(h)
        else:
            assert self.store.delete_mass(h) is False

    @rule()
    def compact(self):
        mass_map, _ = self.store.compact()
        assert set(mass_map) == set(self.live)
        self.live = {mass_map[h]: v for h, v in self.live.items()}
        self.dead = set()        # compaction drops retained copies

    @invariant()
    def books_balance(self):
        assert self.store.mass_count == len(self.live)
        for h, v in self.live.items():
            assert self.store.mass_is_live(h)
            assert self.store.get_mass(h).m == v
        for h in self.dead:
            assert not self.store.mass_is_live(h)


TestStoreMachine = StoreMachine.TestCase


def _median_delete_time(n_objects, n_samples=300):
    store = ObjectStore()
    handles = [store.create_mass(mk_mass(float(i))) for i in range(n_objects)]
    rng = random.Random(1)
    victims = rng.sample(handles, n_samples)
    times = []
    for h in victims:
        t0 = time.perf_counter()
        store.delete_mass(h)
        times.append(time.perf_counter() - t0)
    times.sort()
    return times[len(times) // 2]


@pytest.mark.slow
def test_delete_time_independent_of_store_size():
    small = min(_median_delete_time(1_000) for _ in range(3))
    large = min(_median_delete_time(1_000_000) for _ in range(1))
    assert large < 3 * small, (small, large)


@pytest.mark.slow
def test_bulk_create_amortized_linear():
    """Per-object creation cost must not grow with store size."""
    def per_op(n):
        store = ObjectStore()
        t0 = time.perf_counter()
        for i in range(n):
            store.create_mass(Mass(pos=Vec3(float(i), 0, 0), m=1.0))
        return (time.perf_counter() - t0) / n

    small = min(per_op(10_000) for _ in range(3))
    large = per_op(300_000)
    assert large < 3 * small, (small, large)
