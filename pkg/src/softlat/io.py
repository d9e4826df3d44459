"""Snapshot, energy-log, and report file formats used by the CLI.

Snapshot CSV: header ``id,x,y,z,vx,vy,vz``, one row per alive mass, values
printed with 17 significant digits so doubles round-trip bit-exactly.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ScenarioError
from .store import ObjectStore

SNAPSHOT_HEADER = "id,x,y,z,vx,vy,vz"


def format_snapshot(ids: np.ndarray, positions: np.ndarray,
                    velocities: np.ndarray) -> str:
    lines = [SNAPSHOT_HEADER]
    for i in range(len(ids)):
        x, y, z = positions[i]
        vx, vy, vz = velocities[i]
        lines.append(f"{int(ids[i])},{x:.17g},{y:.17g},{z:.17g},"
                     f"{vx:.17g},{vy:.17g},{vz:.17g}")
    return "\n".join(lines) + "\n"


def write_snapshot(path, ids: np.ndarray, positions: np.ndarray,
                   velocities: np.ndarray) -> None:
    Path(path).write_text(format_snapshot(ids, positions, velocities))


def read_snapshot(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    lines = Path(path).read_text().strip().splitlines()
    if not lines or lines[0].strip() != SNAPSHOT_HEADER:
        raise ScenarioError(f"{path}: not a snapshot file (bad header)")
    ids, pos, vel = [], [], []
    for ln, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 7:
            raise ScenarioError(f"{path}:{ln}: expected 7 columns")
        ids.append(int(parts[0]))
        vals = [float(p) for p in parts[1:]]
        pos.append(vals[:3])
        vel.append(vals[3:])
    return (np.array(ids, dtype=np.int64),
            np.array(pos).reshape(-1, 3), np.array(vel).reshape(-1, 3))


def apply_snapshot(store: ObjectStore, ids: np.ndarray, positions: np.ndarray,
                   velocities: np.ndarray) -> None:
    """Overwrite positions/velocities of the given alive slots."""
    n = store.mass_slot_count
    if np.any(ids < 0) or np.any(ids >= n) or not np.all(store._m_alive[ids]):
        raise ScenarioError("snapshot ids do not match alive store slots")
    store._m_pos[ids] = positions
    store._m_vel[ids] = velocities


class EnergyLog:
    """Accumulates per-snapshot energy rows and writes them as CSV."""

    HEADER = "sim_time,kinetic,spring_potential,gravity_potential,total"

    def __init__(self):
        self.rows: list[tuple[float, float, float, float]] = []

    def add(self, sim_time: float, energy) -> None:
        self.rows.append((sim_time, energy.kinetic, energy.spring_potential,
                          energy.gravity_potential))

    def write(self, path) -> None:
        lines = [self.HEADER]
        for t, ke, spe, gpe in self.rows:
            lines.append(f"{t:.17g},{ke:.17g},{spe:.17g},{gpe:.17g},"
                         f"{ke + spe + gpe:.17g}")
        Path(path).write_text("\n".join(lines) + "\n")


def write_report(path, report: dict) -> None:
    Path(path).write_text(json.dumps(report, indent=2, default=str) + "\n")
