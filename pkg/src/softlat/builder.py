"""Body construction: cubic lattices, STL-bounded fills, material derivation.

Lattice connectivity joins every pair of masses sharing a unit cell
(26-neighbor: axis edges, face diagonals, body diagonals), giving
3n^2(n-1) + 6n(n-1)^2 + 4(n-1)^3 springs for an n^3 cube. Spring
constants come from the bar model k = E * A / L; node masses sum half of
each incident bar's mass.
"""
from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .core import Material, Vec3
from .errors import InvalidValueError, MeshError
from .store import HandleBatch, ObjectStore

log = logging.getLogger(__name__)

#: fallback for grid nodes with no incident bars (zero-diameter builds)
MIN_NODE_MASS = 1e-9

# canonical same-cell neighbor offsets: 3 axis + 6 face-diagonal + 4 body-diagonal
_OFFSETS = ((1, 0, 0), (0, 1, 0), (0, 0, 1),
            (1, 1, 0), (1, -1, 0), (1, 0, 1), (1, 0, -1), (0, 1, 1), (0, 1, -1),
            (1, 1, 1), (1, 1, -1), (1, -1, 1), (1, -1, -1))

# parity ray directions; irrational-ish components avoid axis-aligned grazing
_RAY_PRIMARY = np.array([1.0, 1e-4, 2e-4])
_RAY_FALLBACK = np.array([0.5, 1.0, 3.1e-4])


@dataclass(frozen=True)
class LatticeSpec:
    """Axis-aligned cubic lattice description."""

    corner: Vec3
    nx: int
    ny: int
    nz: int
    spacing: float
    material: Material
    diameter: float = 1e-3

    def __post_init__(self):
        if min(self.nx, self.ny, self.nz) < 1:
            raise InvalidValueError("lattice counts must be >= 1")
        if self.spacing <= 0:
            raise InvalidValueError("lattice spacing must be positive")
        if self.diameter < 0:
            raise InvalidValueError("spring diameter must be >= 0")


@dataclass
class BodyHandle:
    """Handles of one built body plus its build-time geometry."""

    mass_handles: HandleBatch
    spring_handles: HandleBatch
    initial_positions: np.ndarray          # (n, 3) at build time
    grid_indices: np.ndarray | None = None  # (n, 3) int grid coordinates

    def center_of_mass(self, store: ObjectStore) -> Vec3:
        slots = self.mass_handles.slots
        alive = store._m_alive[slots]
        if not alive.any():
            raise InvalidValueError("body has no alive masses")
        s = slots[alive]
        m = store._m_mass[s]
        return Vec3.of((store._m_pos[s] * m[:, None]).sum(axis=0) / m.sum())

    def mass_slots_where(self, predicate) -> np.ndarray:
        """Grid-index selector, e.g. ``lambda idx: idx[:, 0] == 0``."""
        if self.grid_indices is None:
            raise InvalidValueError("body has no grid indices")
        return self.mass_handles.slots[predicate(self.grid_indices)]


def derive_spring_constant(material: Material, diameter: float,
                           rest_length: float) -> float:
    """Bar-model stiffness: elastic modulus times cross-section over length."""
    if rest_length <= 0:
        raise InvalidValueError("rest length must be positive")
    if diameter < 0:
        raise InvalidValueError("diameter must be >= 0")
    area = math.pi * (diameter * 0.5) ** 2
    return material.elastic_modulus * area / rest_length


def derive_mass(material: Material,
                bars: list[tuple[float, float]]) -> float:
    """Node mass: half of each incident bar's mass, summed.

    ``bars`` holds (length, diameter) pairs. Nodes with no effective bar
    volume get ``MIN_NODE_MASS``.
    """
    total = 0.0
    for length, diameter in bars:
        area = math.pi * (diameter * 0.5) ** 2
        total += 0.5 * material.density * area * length
    if total <= 0.0:
        log.warning("node has no bar volume; assigning minimum mass %g kg",
                    MIN_NODE_MASS)
        return MIN_NODE_MASS
    return total


def _grid_springs(nx: int, ny: int, nz: int) -> tuple[np.ndarray, np.ndarray]:
    """All same-cell neighbor pairs as (a_ids, b_ids) over the grid's
    row-major node ids."""
    a_parts: list[np.ndarray] = []
    b_parts: list[np.ndarray] = []
    for dx, dy, dz in _OFFSETS:
        i = np.arange(max(0, -dx), nx - max(0, dx))
        j = np.arange(max(0, -dy), ny - max(0, dy))
        k = np.arange(max(0, -dz), nz - max(0, dz))
        if not (len(i) and len(j) and len(k)):
            continue
        ii, jj, kk = np.meshgrid(i, j, k, indexing="ij")
        a_parts.append(((ii * ny + jj) * nz + kk).ravel())
        b_parts.append((((ii + dx) * ny + (jj + dy)) * nz + (kk + dz)).ravel())
    if not a_parts:
        return (np.zeros(0, dtype=np.int64),) * 2
    return (np.concatenate(a_parts).astype(np.int64),
            np.concatenate(b_parts).astype(np.int64))


def lattice_spring_count(nx: int, ny: int, nz: int) -> int:
    """Closed-form same-cell spring count for an nx*ny*nz grid."""
    ex, ey, ez = nx - 1, ny - 1, nz - 1
    axis = ny * nz * ex + nx * nz * ey + nx * ny * ez
    face = 2 * (nz * ex * ey + ny * ex * ez + nx * ey * ez)
    body = 4 * ex * ey * ez
    return axis + face + body


def _materialize(store: ObjectStore, positions: np.ndarray,
                 a_ids: np.ndarray, b_ids: np.ndarray,
                 material: Material, diameter,
                 fixed: np.ndarray | None = None,
                 grid_indices: np.ndarray | None = None) -> BodyHandle:
    """Create masses and springs for an enumerated body.

    Rest lengths are the exact build-time endpoint distances (computed with
    the same expression the force kernel uses), so the body starts at
    equilibrium absent external forces.
    """
    d = positions[b_ids] - positions[a_ids]
    rests = np.sqrt(d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1] + d[:, 2] * d[:, 2])
    if np.any(rests <= 0):
        raise InvalidValueError("coincident lattice nodes")
    diam = np.broadcast_to(np.asarray(diameter, dtype=np.float64), rests.shape)
    area = math.pi * (diam * 0.5) ** 2
    stiff = material.elastic_modulus * area / rests
    node_mass = np.zeros(len(positions))
    half_bar = 0.5 * material.density * area * rests
    np.add.at(node_mass, a_ids, half_bar)
    np.add.at(node_mass, b_ids, half_bar)
    bare = node_mass <= 0.0
    if bare.any():
        log.warning("%d nodes have no bar volume; assigning minimum mass %g kg",
                    int(bare.sum()), MIN_NODE_MASS)
        node_mass[bare] = MIN_NODE_MASS
    mh = store.create_masses(positions, node_mass, fixed=fixed)
    sh = store.create_springs(mh.slots[a_ids], mh.slots[b_ids], rests, stiff,
                              diameters=diam,
                              yield_stress=material.yield_stress)
    return BodyHandle(mass_handles=mh, spring_handles=sh,
                      initial_positions=positions.copy(),
                      grid_indices=grid_indices)


def build_lattice(spec: LatticeSpec, store: ObjectStore) -> BodyHandle:
    """Construct a full cubic lattice body in the store."""
    nx, ny, nz = spec.nx, spec.ny, spec.nz
    ii, jj, kk = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz),
                             indexing="ij")
    grid = np.column_stack([ii.ravel(), jj.ravel(), kk.ravel()])
    positions = spec.corner.as_array() + spec.spacing * grid.astype(np.float64)
    a_ids, b_ids = _grid_springs(nx, ny, nz)
    return _materialize(store, positions, a_ids, b_ids, spec.material,
                        spec.diameter, grid_indices=grid)


@dataclass
class CubeGridBody(BodyHandle):
    """Loosely coupled grid of cube lattices joined by thin connector
    springs at their top and bottom node layers."""

    cube_members: list = field(default_factory=list)   # row indices per cube
    connector_rows: np.ndarray | None = None           # rows into spring_handles

    def cube_center_of_mass(self, store: ObjectStore, cube: int) -> Vec3:
        rows = self.cube_members[cube]
        slots = self.mass_handles.slots[rows]
        alive = store._m_alive[slots]
        s = slots[alive]
        m = store._m_mass[s]
        return Vec3.of((store._m_pos[s] * m[:, None]).sum(axis=0) / m.sum())


def build_cube_grid(grid_x: int, grid_y: int, cube_counts: tuple[int, int, int],
                    spacing: float, material: Material,
                    store: ObjectStore, corner: Vec3 = Vec3(0, 0, 0),
                    diameter: float = 1e-3,
                    connector_diameter: float = 4e-4) -> CubeGridBody:
    """Multi-body assembly: grid_x * grid_y cubes, one lattice spacing of
    gap between neighbors, bridged along their top and bottom layers by
    springs of ``connector_diameter`` (much softer than the cube interiors).
    """
    if grid_x < 1 or grid_y < 1:
        raise InvalidValueError("cube grid counts must be >= 1")
    ncx, ncy, ncz = cube_counts
    per_cube = ncx * ncy * ncz
    base = Vec3.of(corner).as_array()
    cube_positions = []
    cube_members = []
    local_grid = np.column_stack([g.ravel() for g in np.meshgrid(
        np.arange(ncx), np.arange(ncy), np.arange(ncz), indexing="ij")])
    for gi in range(grid_x):
        for gj in range(grid_y):
            origin = base + spacing * np.array(
                [gi * ncx, gj * ncy, 0], dtype=np.float64)
            cube_positions.append(origin + spacing *
                                  local_grid.astype(np.float64))
            start = (gi * grid_y + gj) * per_cube
            cube_members.append(np.arange(start, start + per_cube))
    positions = np.vstack(cube_positions)

    def node(gi, gj, i, j, k):
        return (gi * grid_y + gj) * per_cube + (i * ncy + j) * ncz + k

    a_local, b_local = _grid_springs(ncx, ncy, ncz)
    a_parts = [a_local + c * per_cube for c in range(grid_x * grid_y)]
    b_parts = [b_local + c * per_cube for c in range(grid_x * grid_y)]
    diam_parts = [np.full(len(a_local) * grid_x * grid_y, diameter)]
    ca, cb = [], []
    for gi in range(grid_x):
        for gj in range(grid_y):
            for k in (0, ncz - 1):
                if gi + 1 < grid_x:
                    for j in range(ncy):
                        ca.append(node(gi, gj, ncx - 1, j, k))
                        cb.append(node(gi + 1, gj, 0, j, k))
                if gj + 1 < grid_y:
                    for i in range(ncx):
                        ca.append(node(gi, gj, i, ncy - 1, k))
                        cb.append(node(gi, gj + 1, i, 0, k))
    n_internal = len(a_local) * grid_x * grid_y
    if ca:
        a_parts.append(np.array(ca, dtype=np.int64))
        b_parts.append(np.array(cb, dtype=np.int64))
        diam_parts.append(np.full(len(ca), connector_diameter))
    body = _materialize(store, positions, np.concatenate(a_parts),
                        np.concatenate(b_parts), material,
                        np.concatenate(diam_parts))
    return CubeGridBody(
        mass_handles=body.mass_handles, spring_handles=body.spring_handles,
        initial_positions=body.initial_positions,
        cube_members=cube_members,
        connector_rows=np.arange(n_internal, len(body.spring_handles)))


# ------------------------------------------------------------------ meshes


@dataclass
class TriMesh:
    """Triangle soup; watertightness is assumed, not verified."""

    triangles: np.ndarray      # (t, 3, 3) float64 vertices

    def __post_init__(self):
        self.triangles = np.asarray(self.triangles, dtype=np.float64)
        if self.triangles.ndim != 3 or self.triangles.shape[1:] != (3, 3):
            raise InvalidValueError("triangles must have shape (t, 3, 3)")

    def __len__(self) -> int:
        return len(self.triangles)

    @property
    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        v = self.triangles.reshape(-1, 3)
        return v.min(axis=0), v.max(axis=0)


def load_stl(path) -> TriMesh:
    """Parse an STL file. Binary is normative; ASCII is accepted too."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) == 0:
        raise MeshError(f"empty STL file: {path}")
    if len(data) >= 84:
        (count,) = struct.unpack_from("<I", data, 80)
        if len(data) == 84 + 50 * count:
            return _parse_binary_stl(data, count)
    if data[:5].lower() == b"solid":
        return _parse_ascii_stl(data, path)
    if len(data) < 84:
        raise MeshError("truncated STL header", byte_offset=len(data))
    (count,) = struct.unpack_from("<I", data, 80)
    raise MeshError(
        f"binary STL length mismatch: header claims {count} triangles "
        f"({84 + 50 * count} bytes) but file has {len(data)} bytes",
        byte_offset=84)


def _parse_binary_stl(data: bytes, count: int) -> TriMesh:
    rec = np.dtype([("normal", "<f4", (3,)), ("verts", "<f4", (3, 3)),
                    ("attr", "<u2")])
    body = np.frombuffer(data, dtype=rec, count=count, offset=84)
    tris = body["verts"].astype(np.float64)
    if not np.all(np.isfinite(tris)):
        raise MeshError("non-finite vertex in STL", byte_offset=84)
    return TriMesh(tris)


def _parse_ascii_stl(data: bytes, path) -> TriMesh:
    verts: list[list[float]] = []
    for ln, raw in enumerate(data.decode("ascii", errors="replace").splitlines()):
        parts = raw.split()
        if parts[:1] == ["vertex"]:
            if len(parts) != 4:
                raise MeshError(f"malformed vertex line {ln + 1} in {path}")
            verts.append([float(x) for x in parts[1:]])
    if len(verts) == 0 or len(verts) % 3:
        raise MeshError(f"ASCII STL vertex count {len(verts)} is not a "
                        f"multiple of 3: {path}")
    return TriMesh(np.array(verts).reshape(-1, 3, 3))


def write_stl(path, triangles: np.ndarray) -> None:
    """Write a binary STL with computed facet normals."""
    tris = np.asarray(triangles, dtype=np.float64).reshape(-1, 3, 3)
    n = np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0])
    lengths = np.linalg.norm(n, axis=1)
    n = np.where(lengths[:, None] > 0, n / np.where(lengths == 0, 1, lengths)[:, None], 0.0)
    rec = np.dtype([("normal", "<f4", (3,)), ("verts", "<f4", (3, 3)),
                    ("attr", "<u2")])
    body = np.zeros(len(tris), dtype=rec)
    body["normal"] = n.astype(np.float32)
    body["verts"] = tris.astype(np.float32)
    with open(path, "wb") as fh:
        fh.write(b"softlat binary stl".ljust(80, b" "))
        fh.write(struct.pack("<I", len(tris)))
        fh.write(body.tobytes())


def cube_mesh(corner: Vec3 | tuple = Vec3(0, 0, 0), edge: float = 1.0) -> TriMesh:
    """Canonical 12-triangle axis-aligned cube, outward-facing."""
    c = Vec3.of(corner).as_array()
    v = c + edge * np.array([[x, y, z] for x in (0, 1) for y in (0, 1)
                             for z in (0, 1)], dtype=np.float64)
    quads = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1),
             (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]
    tris = []
    for a, b, cc, d in quads:
        tris.append([v[a], v[b], v[cc]])
        tris.append([v[a], v[cc], v[d]])
    return TriMesh(np.array(tris))


def icosphere_mesh(center: Vec3 | tuple, radius: float,
                   subdivisions: int = 2) -> TriMesh:
    """Subdivided icosahedron projected onto a sphere."""
    if radius <= 0:
        raise InvalidValueError("radius must be positive")
    phi = (1 + math.sqrt(5)) / 2
    verts = np.array([[-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
                      [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
                      [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1]],
                     dtype=np.float64)
    verts /= np.linalg.norm(verts, axis=1)[:, None]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
             (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
             (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
             (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    tris = verts[np.array(faces)]
    for _ in range(subdivisions):
        a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
        ab, bc, ca = (a + b) / 2, (b + c) / 2, (c + a) / 2
        for arr in (ab, bc, ca):
            arr /= np.linalg.norm(arr, axis=1)[:, None]
        tris = np.concatenate([
            np.stack([a, ab, ca], axis=1), np.stack([ab, b, bc], axis=1),
            np.stack([ca, bc, c], axis=1), np.stack([ab, bc, ca], axis=1)])
    c = Vec3.of(center).as_array()
    return TriMesh(tris * radius + c)


def _ray_crossings(origin: np.ndarray, direction: np.ndarray,
                   tris: np.ndarray) -> tuple[int, bool]:
    """Moller-Trumbore crossing count for one ray; flags grazing hits."""
    eps = 1e-12
    e1 = tris[:, 1] - tris[:, 0]
    e2 = tris[:, 2] - tris[:, 0]
    pvec = np.cross(direction, e2)
    det = np.einsum("ij,ij->i", e1, pvec)
    graze = False
    ok = np.abs(det) > eps
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    tvec = origin - tris[:, 0]
    u = np.einsum("ij,ij->i", tvec, pvec) * inv
    qvec = np.cross(tvec, e1)
    v = np.einsum("ij,j->i", qvec, direction) * inv
    t = np.einsum("ij,ij->i", e2, qvec) * inv
    w = 1.0 - u - v
    tol = 1e-10
    inside = ok & (u > tol) & (v > tol) & (w > tol) & (t > tol)
    near_edge = ok & (t > tol) & (u > -tol) & (v > -tol) & (w > -tol) & \
        ((np.abs(u) <= tol) | (np.abs(v) <= tol) | (np.abs(w) <= tol))
    if near_edge.any():
        graze = True
    return int(inside.sum()), graze


def _surface_distance(p: np.ndarray, tris: np.ndarray) -> float:
    """Exact distance from point to the nearest triangle."""
    a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)
    closest = np.empty_like(a)
    # vertex regions
    closest[:] = a
    mask_b = (d3 >= 0) & (d4 <= d3)
    closest[mask_b] = b[mask_b]
    mask_c = (d6 >= 0) & (d5 <= d6)
    closest[mask_c] = c[mask_c]
    # edge ab
    vc = d1 * d4 - d3 * d2
    mask = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
    t_ab = np.where(d1 - d3 != 0, d1 / np.where(d1 - d3 == 0, 1, d1 - d3), 0)
    closest[mask] = a[mask] + t_ab[mask, None] * ab[mask]
    # edge ac
    vb = d5 * d2 - d1 * d6
    mask = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
    t_ac = np.where(d2 - d6 != 0, d2 / np.where(d2 - d6 == 0, 1, d2 - d6), 0)
    closest[mask] = a[mask] + t_ac[mask, None] * ac[mask]
    # edge bc
    va = d3 * d6 - d5 * d4
    mask = (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0)
    denom = (d4 - d3) + (d5 - d6)
    t_bc = np.where(denom != 0, (d4 - d3) / np.where(denom == 0, 1, denom), 0)
    closest[mask] = b[mask] + t_bc[mask, None] * (c[mask] - b[mask])
    # interior region
    denom_f = va + vb + vc
    mask = (va > 0) & (vb > 0) & (vc > 0) & (denom_f != 0)
    vv = np.where(denom_f != 0, vb / np.where(denom_f == 0, 1, denom_f), 0)
    ww = np.where(denom_f != 0, vc / np.where(denom_f == 0, 1, denom_f), 0)
    proj = a + vv[:, None] * ab + ww[:, None] * ac
    closest[mask] = proj[mask]
    return float(np.min(np.linalg.norm(closest - p, axis=1)))


def point_in_mesh(p: Vec3 | np.ndarray, mesh: TriMesh,
                  surface_epsilon: float | None = None) -> bool:
    """Parity ray cast; points within the surface epsilon count as inside."""
    if len(mesh) == 0:
        raise InvalidValueError("mesh is empty")
    origin = Vec3.of(p).as_array() if not isinstance(p, np.ndarray) else \
        np.asarray(p, dtype=np.float64)
    lo, hi = mesh.bbox
    if surface_epsilon is None:
        surface_epsilon = 1e-9 * float(np.linalg.norm(hi - lo))
    if np.any(origin < lo - surface_epsilon) or \
            np.any(origin > hi + surface_epsilon):
        return False
    if _surface_distance(origin, mesh.triangles) <= surface_epsilon:
        return True
    direction = _RAY_PRIMARY / np.linalg.norm(_RAY_PRIMARY)
    crossings, grazed = _ray_crossings(origin, direction, mesh.triangles)
    if grazed:
        direction = _RAY_FALLBACK / np.linalg.norm(_RAY_FALLBACK)
        crossings, grazed = _ray_crossings(origin, direction, mesh.triangles)
        if grazed:
            log.debug("ray grazing persists at %s; accepting parity", origin)
    return crossings % 2 == 1


def fill_mesh(mesh: TriMesh, spacing: float, material: Material,
              store: ObjectStore, diameter: float = 1e-3) -> BodyHandle:
    """Fill a closed mesh with a lattice: grid the bounding box, keep inside
    grid points, keep springs whose both endpoints survive."""
    if spacing <= 0:
        raise InvalidValueError("spacing must be positive")
    if len(mesh) == 0:
        raise InvalidValueError("mesh is empty")
    lo, hi = mesh.bbox
    extent = hi - lo
    if spacing > float(extent.max()):
        raise MeshError("mesh too small for spacing: grid would hold a "
                        "single point")
    counts = np.floor(extent / spacing + 1e-9).astype(int) + 1
    nx, ny, nz = (int(c) for c in counts)
    ii, jj, kk = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz),
                             indexing="ij")
    grid = np.column_stack([ii.ravel(), jj.ravel(), kk.ravel()])
    positions = lo + spacing * grid.astype(np.float64)
    inside = np.array([point_in_mesh(q, mesh) for q in positions])
    if not inside.any():
        raise MeshError("mesh too small for spacing: no interior grid points")
    keep = np.flatnonzero(inside)
    remap = np.full(len(positions), -1, dtype=np.int64)
    remap[keep] = np.arange(len(keep))
    a_ids, b_ids = _grid_springs(nx, ny, nz)
    both = inside[a_ids] & inside[b_ids]
    return _materialize(store, positions[keep], remap[a_ids[both]],
                        remap[b_ids[both]], material, diameter,
                        grid_indices=grid[keep])
