"""Declarative scenario files: bodies, environment, actuation, run, output.

The format is INI-style sections of key = value pairs. Unknown sections or
keys are errors (fail-fast). Canonical keys:

    [scenario]   name
    [body]       type = lattice | stl | multi
                 lattice: corner, counts, spacing
                 stl:     path, spacing
                 multi:   grid, cube_counts, spacing, connector_diameter
                 common:  elastic_modulus, density, diameter, yield_stress,
                          fixed_face (x-min|x-max|y-min|y-max|z-min|z-max)
    [environment] gravity, drag, ground (on|off), ground_offset,
                  ground_stiffness, static_friction, kinetic_friction,
                  ball (cx cy cz radius stiffness)
    [actuation]  mode = none | worm; period, frequency, amplitude,
                 phase = wrapped | quiescent
    [run]        dt, duration, backend (serial|parallel), workers,
                 accumulation (linearizable|slotted), snapshot_every,
                 initial_state (snapshot CSV to load)
    [output]     dir, prefix
    [topo]       interval, epochs, load (fx fy fz), load_face
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import actuation as act
from .builder import (BodyHandle, LatticeSpec, build_cube_grid,
                      build_lattice, fill_mesh, load_stl)
from .core import ContactBall, ContactPlane, Environment, Material, Vec3
from .engine import StepConfig
from .errors import ScenarioError, SoftlatError
from .store import ObjectStore

_FACES = {"x-min": (0, min), "x-max": (0, max), "y-min": (1, min),
          "y-max": (1, max), "z-min": (2, min), "z-max": (2, max)}


@dataclass
class BodyConfig:
    type: str                              # lattice | stl | multi
    material: Material
    spacing: float
    diameter: float = 1e-3
    corner: Vec3 = Vec3(0.0, 0.0, 0.0)
    counts: tuple[int, int, int] = (2, 2, 2)
    stl_path: str | None = None
    grid: tuple[int, int] = (2, 1)
    cube_counts: tuple[int, int, int] = (3, 3, 3)
    connector_diameter: float = 4e-4
    fixed_face: str | None = None


@dataclass
class ActuationConfig:
    mode: str = "none"                     # none | worm
    period: float = act.WORM_PERIOD
    frequency: float = act.WORM_FREQUENCY
    amplitude: float = act.WORM_AMPLITUDE
    quiescent: bool = False


@dataclass
class RunConfig:
    dt: float = 1e-4
    duration: float = 1.0
    backend: str = "serial"
    workers: int | None = None
    accumulation: str = "linearizable"
    snapshot_every: float | None = None
    initial_state: str | None = None

    def step_config(self) -> StepConfig:
        return StepConfig(dt=self.dt, accumulation=self.accumulation,
                          backend=self.backend, workers=self.workers)


@dataclass
class TopoConfig:
    interval: float = 0.1
    epochs: int = 3
    load: Vec3 = Vec3(0.0, 0.0, 0.0)
    load_face: str = "x-max"


@dataclass
class Scenario:
    name: str
    body: BodyConfig
    environment: Environment
    actuation: ActuationConfig = field(default_factory=ActuationConfig)
    run: RunConfig = field(default_factory=RunConfig)
    output_dir: str = "out"
    output_prefix: str | None = None
    topo: TopoConfig = field(default_factory=TopoConfig)

    @property
    def prefix(self) -> str:
        return self.output_prefix or self.name


def _floats(raw: str, n: int, what: str) -> tuple[float, ...]:
    parts = raw.replace(",", " ").split()
    if len(parts) != n:
        raise ScenarioError(f"{what}: expected {n} numbers, got {raw!r}")
    return tuple(float(p) for p in parts)


def _ints(raw: str, n: int, what: str) -> tuple[int, ...]:
    return tuple(int(v) for v in _floats(raw, n, what))


def _bool(raw: str, what: str) -> bool:
    low = raw.strip().lower()
    if low in ("on", "true", "yes", "1"):
        return True
    if low in ("off", "false", "no", "0"):
        return False
    raise ScenarioError(f"{what}: expected on/off, got {raw!r}")


class _Section:
    """Typed key consumer that rejects unknown keys."""

    def __init__(self, name: str, items: dict[str, str]):
        self.name = name
        self.items = dict(items)

    def take(self, key: str, default=None):
        return self.items.pop(key, default)

    def finish(self):
        if self.items:
            bad = ", ".join(sorted(self.items))
            raise ScenarioError(f"unknown key(s) in [{self.name}]: {bad}")


def parse_scenario(path) -> Scenario:
    parser = configparser.ConfigParser(interpolation=None)
    text = Path(path).read_text()
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ScenarioError(f"{path}: {exc}") from exc
    known = {"scenario", "body", "environment", "actuation", "run", "output",
             "topo"}
    sections = set(parser.sections())
    unknown = sections - known
    if unknown:
        raise ScenarioError(f"{path}: unknown section(s): "
                            f"{', '.join(sorted(unknown))}")
    if "body" not in sections:
        raise ScenarioError(f"{path}: missing required [body] section")

    sec = _Section("scenario", dict(parser["scenario"])
                   if "scenario" in sections else {})
    name = sec.take("name", Path(path).stem)
    sec.finish()

    body = _parse_body(_Section("body", dict(parser["body"])))
    env = _parse_environment(
        _Section("environment", dict(parser["environment"])
                 if "environment" in sections else {}))
    actu = _parse_actuation(
        _Section("actuation", dict(parser["actuation"])
                 if "actuation" in sections else {}))
    run = _parse_run(_Section("run", dict(parser["run"])
                              if "run" in sections else {}))
    out = _Section("output", dict(parser["output"])
                   if "output" in sections else {})
    output_dir = out.take("dir", "out")
    output_prefix = out.take("prefix")
    out.finish()
    topo = _parse_topo(_Section("topo", dict(parser["topo"])
                                if "topo" in sections else {}))
    return Scenario(name=name, body=body, environment=env, actuation=actu,
                    run=run, output_dir=output_dir,
                    output_prefix=output_prefix, topo=topo)


def _parse_body(sec: _Section) -> BodyConfig:
    btype = sec.take("type", "lattice")
    if btype not in ("lattice", "stl", "multi"):
        raise ScenarioError(f"unknown body type {btype!r}")
    try:
        material = Material(
            elastic_modulus=float(sec.take("elastic_modulus", "1e6")),
            density=float(sec.take("density", "1000")),
            yield_stress=(lambda v: float(v) if v is not None else None)(
                sec.take("yield_stress")))
    except SoftlatError as exc:
        raise ScenarioError(f"[body] material: {exc}") from exc
    cfg = BodyConfig(
        type=btype, material=material,
        spacing=float(sec.take("spacing", "0.05")),
        diameter=float(sec.take("diameter", "0.001")))
    cfg.corner = Vec3.of(_floats(sec.take("corner", "0 0 0"), 3, "corner"))
    cfg.counts = _ints(sec.take("counts", "2 2 2"), 3, "counts")
    cfg.stl_path = sec.take("path")
    cfg.grid = _ints(sec.take("grid", "2 1"), 2, "grid")
    cfg.cube_counts = _ints(sec.take("cube_counts", "3 3 3"), 3,
                            "cube_counts")
    cfg.connector_diameter = float(sec.take("connector_diameter", "0.0004"))
    face = sec.take("fixed_face")
    if face is not None and face not in _FACES:
        raise ScenarioError(f"unknown fixed_face {face!r}")
    cfg.fixed_face = face
    sec.finish()
    if btype == "stl" and not cfg.stl_path:
        raise ScenarioError("[body] type stl requires the path key")
    if cfg.spacing <= 0:
        raise ScenarioError("[body] spacing must be positive")
    return cfg


def _parse_environment(sec: _Section) -> Environment:
    gravity = Vec3.of(_floats(sec.take("gravity", "0 0 -9.81"), 3, "gravity"))
    drag = float(sec.take("drag", "0"))
    contacts = []
    if _bool(sec.take("ground", "off"), "ground"):
        contacts.append(ContactPlane(
            normal=Vec3(0.0, 0.0, 1.0),
            offset=float(sec.take("ground_offset", "0")),
            stiffness=float(sec.take("ground_stiffness", "1e5")),
            static_friction=float(sec.take("static_friction", "1.0")),
            kinetic_friction=float(sec.take("kinetic_friction", "0.8"))))
    else:
        for key in ("ground_offset", "ground_stiffness", "static_friction",
                    "kinetic_friction"):
            sec.take(key)
    ball = sec.take("ball")
    if ball is not None:
        cx, cy, cz, radius, stiffness = _floats(ball, 5, "ball")
        contacts.append(ContactBall(center=Vec3(cx, cy, cz), radius=radius,
                                    stiffness=stiffness))
    sec.finish()
    try:
        return Environment(gravity=gravity, drag_coeff=drag, contacts=contacts)
    except SoftlatError as exc:
        raise ScenarioError(f"[environment]: {exc}") from exc


def _parse_actuation(sec: _Section) -> ActuationConfig:
    mode = sec.take("mode", "none")
    if mode not in ("none", "worm"):
        raise ScenarioError(f"unknown actuation mode {mode!r}")
    phase = sec.take("phase", "wrapped")
    if phase not in ("wrapped", "quiescent"):
        raise ScenarioError(f"unknown actuation phase {phase!r}")
    cfg = ActuationConfig(
        mode=mode,
        period=float(sec.take("period", str(act.WORM_PERIOD))),
        frequency=float(sec.take("frequency", str(act.WORM_FREQUENCY))),
        amplitude=float(sec.take("amplitude", str(act.WORM_AMPLITUDE))),
        quiescent=(phase == "quiescent"))
    sec.finish()
    return cfg


def _parse_run(sec: _Section) -> RunConfig:
    cfg = RunConfig(
        dt=float(sec.take("dt", "1e-4")),
        duration=float(sec.take("duration", "1.0")),
        backend=sec.take("backend", "serial"),
        accumulation=sec.take("accumulation", "linearizable"),
        initial_state=sec.take("initial_state"))
    workers = sec.take("workers")
    cfg.workers = int(workers) if workers is not None else None
    every = sec.take("snapshot_every")
    cfg.snapshot_every = float(every) if every is not None else None
    sec.finish()
    if cfg.dt <= 0:
        raise ScenarioError("[run] dt must be positive")
    if cfg.duration < 0:
        raise ScenarioError("[run] duration must be >= 0")
    if cfg.backend not in ("serial", "parallel"):
        raise ScenarioError(f"[run] unknown backend {cfg.backend!r}")
    if cfg.accumulation not in ("linearizable", "slotted"):
        raise ScenarioError(f"[run] unknown accumulation {cfg.accumulation!r}")
    if cfg.snapshot_every is not None and cfg.snapshot_every <= 0:
        raise ScenarioError("[run] snapshot_every must be positive")
    return cfg


def _parse_topo(sec: _Section) -> TopoConfig:
    cfg = TopoConfig(
        interval=float(sec.take("interval", "0.1")),
        epochs=int(sec.take("epochs", "3")),
        load=Vec3.of(_floats(sec.take("load", "0 0 0"), 3, "load")))
    face = sec.take("load_face", "x-max")
    if face not in _FACES:
        raise ScenarioError(f"unknown load_face {face!r}")
    cfg.load_face = face
    sec.finish()
    if cfg.interval <= 0 or cfg.epochs < 1:
        raise ScenarioError("[topo] interval must be > 0 and epochs >= 1")
    return cfg


def face_rows(body: BodyHandle, face: str) -> np.ndarray:
    """Row indices of body masses on a grid face like ``x-min``."""
    if body.grid_indices is None:
        raise ScenarioError("body has no grid indices for face selection")
    axis, reducer = _FACES[face]
    coords = body.grid_indices[:, axis]
    return np.flatnonzero(coords == reducer(coords))


def build_body(cfg: BodyConfig, store: ObjectStore) -> BodyHandle:
    """Materialize the scenario body in the store and apply fixed faces."""
    if cfg.type == "lattice":
        body = build_lattice(LatticeSpec(
            corner=cfg.corner, nx=cfg.counts[0], ny=cfg.counts[1],
            nz=cfg.counts[2], spacing=cfg.spacing, material=cfg.material,
            diameter=cfg.diameter), store)
    elif cfg.type == "stl":
        mesh = load_stl(cfg.stl_path)
        body = fill_mesh(mesh, cfg.spacing, cfg.material, store,
                         diameter=cfg.diameter)
    else:
        body = build_cube_grid(cfg.grid[0], cfg.grid[1], cfg.cube_counts,
                               cfg.spacing, cfg.material, store,
                               corner=cfg.corner, diameter=cfg.diameter,
                               connector_diameter=cfg.connector_diameter)
    if cfg.fixed_face:
        for row in face_rows(body, cfg.fixed_face):
            store.set_mass_field(body.mass_handles[int(row)], "fixed", True)
    return body


def apply_actuation(cfg: ActuationConfig, body: BodyHandle,
                    store: ObjectStore) -> None:
    if cfg.mode == "worm":
        act.configure_worm(body, store, period=cfg.period,
                           frequency=cfg.frequency, amplitude=cfg.amplitude,
                           quiescent_before_offset=cfg.quiescent)
