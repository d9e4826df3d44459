import pytest

from softlat import Environment, Material, Vec3
from softlat.builder import LatticeSpec, build_lattice
from softlat.store import ObjectStore

SOFT = Material(elastic_modulus=1e5, density=1000.0)


@pytest.fixture
def store():
    return ObjectStore()


def make_lattice(n=3, spacing=0.05, material=SOFT, corner=Vec3(0, 0, 0),
                 stretch=None):
    """Fresh store with an n^3 lattice; optional uniform stretch so springs
    carry force from step one."""
    st = ObjectStore()
    body = build_lattice(LatticeSpec(corner=corner, nx=n, ny=n, nz=n,
                                     spacing=spacing, material=material), st)
    if stretch:
        st._m_pos[body.mass_handles.slots] *= stretch
    return st, body


def free_env():
    return Environment(gravity=Vec3(0, 0, 0))


def state_bytes(st):
    n = st.mass_slot_count
    return (st._m_pos[:n].tobytes(), st._m_vel[:n].tobytes())


def run_steps(st, env, cfg, steps, t0=0.0):
    from softlat import engine
    t = t0
    for _ in range(steps):
        t = engine.step(st, env, t, cfg)
    return t
