"""Scenario runner and benchmark harness.

Subcommands:

* ``run <file>`` — build the scenario, run it with snapshot breakpoints,
  write snapshot CSVs, an energy log, and a JSON run report.
* ``bench`` — wall-time scaling over lattice sizes and backends; CSV table.
* ``swarm --count N <file>`` — many independent bodies (or one loosely
  coupled cube grid) in a single store; per-body center-of-mass tracks.
* ``topo <file> --threshold PA`` — run/pause/prune loop removing springs
  whose stress falls below the threshold, with a disconnection guard.

Exit codes: 0 success, 1 usage, 2 scenario error, 3 numerical abort.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, engine
from .builder import CubeGridBody, build_lattice, LatticeSpec
from .control import (Breakpoint, DeleteSpring, PauseReport, SimController)
from .core import Environment, Material, Vec3
from .engine import StepConfig
from .errors import NumericalAbort, ScenarioError, SoftlatError
from .io import EnergyLog, apply_snapshot, read_snapshot, write_report, \
    write_snapshot
from .scenario import (Scenario, apply_actuation, build_body, face_rows,
                       parse_scenario)
from .store import ObjectStore

log = logging.getLogger(__name__)

#: throughput of the original CUDA implementation on a 50^3 lattice
#: (1,558,396 springs, dt 1e-4, 1 s); printed for comparison, never asserted
GPU_REFERENCE_UPDATES_PER_S = 389_450_619

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_SCENARIO = 2
EXIT_NUMERIC = 3


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--out", help="output directory (overrides scenario)")
    p.add_argument("--workers", type=int, help="parallel worker count")
    p.add_argument("--accumulation", choices=("linearizable", "slotted"),
                   help="force accumulation strategy")
    p.add_argument("--backend", choices=("serial", "parallel"),
                   help="execution backend")
    p.add_argument("--snapshot-every", type=float, dest="snapshot_every",
                   help="snapshot interval in simulated seconds")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="softlat",
        description="Spring-mass lattice simulation engine")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a scenario file")
    p_run.add_argument("file")
    p_run.add_argument("--duration", type=float,
                       help="override scenario duration")
    _add_common(p_run)
    p_run.set_defaults(func=cmd_run)

    p_bench = sub.add_parser("bench", help="lattice scaling benchmark")
    p_bench.add_argument("--sizes", default="10,15,20",
                         help="comma-separated lattice edge sizes")
    p_bench.add_argument("--dt", type=float, default=1e-4)
    p_bench.add_argument("--duration", type=float, default=0.1,
                         help="simulated seconds per measurement")
    p_bench.add_argument("--backends", default="serial,parallel")
    _add_common(p_bench)
    p_bench.set_defaults(func=cmd_bench)

    p_swarm = sub.add_parser("swarm", help="many bodies in one store")
    p_swarm.add_argument("file")
    p_swarm.add_argument("--count", type=int, default=4)
    p_swarm.add_argument("--duration", type=float,
                         help="override scenario duration")
    _add_common(p_swarm)
    p_swarm.set_defaults(func=cmd_swarm)

    p_topo = sub.add_parser("topo", help="stress-threshold spring removal")
    p_topo.add_argument("file")
    p_topo.add_argument("--threshold", type=float, required=True,
                        help="remove springs with stress below this (Pa)")
    p_topo.add_argument("--epochs", type=int)
    p_topo.add_argument("--interval", type=float,
                        help="simulated seconds per epoch")
    _add_common(p_topo)
    p_topo.set_defaults(func=cmd_topo)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return EXIT_SCENARIO
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except FileNotFoundError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return EXIT_SCENARIO
    except SoftlatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCENARIO


def _load_scenario(args) -> Scenario:
    sc = parse_scenario(args.file)
    run = sc.run
    if args.workers is not None:
        run = replace(run, workers=args.workers)
    if args.accumulation:
        run = replace(run, accumulation=args.accumulation)
    if args.backend:
        run = replace(run, backend=args.backend)
    if args.snapshot_every is not None:
        run = replace(run, snapshot_every=args.snapshot_every)
    if getattr(args, "duration", None) is not None:
        run = replace(run, duration=args.duration)
    sc.run = run
    if args.out:
        sc.output_dir = args.out
    return sc


def _snapshot_times(duration: float, every: float | None) -> list[float]:
    if duration == 0:
        return []
    if not every:
        return [duration]
    times = [every * k for k in range(1, int(duration / every + 1e-9) + 1)]
    if not times or times[-1] < duration - 1e-12:
        times.append(duration)
    return times


def _write_state(outdir: Path, prefix: str, index: int, sim_time: float,
                 ctl: SimController, energy: EnergyLog,
                 manifest: list) -> None:
    snap = ctl.snapshot()
    path = outdir / f"{prefix}_snap{index:06d}.csv"
    write_snapshot(path, snap.ids, snap.positions, snap.velocities)
    energy.add(sim_time, engine.mechanical_energy(
        ctl.store, ctl.environment, sim_time))
    manifest.append({"file": path.name, "sim_time": sim_time,
                     "step": ctl.step_count})


def _run_to_breakpoints(ctl: SimController, times: list[float],
                        on_pause) -> PauseReport | None:
    """Install at-time breakpoints, run, invoke ``on_pause(report)`` at
    each; returns the error report if the run aborted."""
    if not times:
        return None
    for t in times:
        ctl.set_breakpoint(Breakpoint.at_time(t))
    ctl.start()
    for i in range(len(times)):
        report = ctl.wait_for_event()
        if report.reason == "error":
            return report
        on_pause(report)
        if i + 1 < len(times):
            ctl.resume()
    ctl.stop()
    return None


def _numeric_abort(report: PauseReport, outdir: Path, prefix: str,
                   partial: dict) -> int:
    msg = (f"numerical abort at sim time {report.sim_time:.6g} "
           f"(step {report.step_count}): {report.error}")
    print(msg, file=sys.stderr)
    partial["status"] = "numerical_abort"
    partial["error"] = str(report.error)
    partial["abort_sim_time"] = report.sim_time
    write_report(outdir / f"{prefix}_report.json", partial)
    return EXIT_NUMERIC


def cmd_run(args) -> int:
    sc = _load_scenario(args)
    outdir = Path(sc.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    store = ObjectStore()
    body = build_body(sc.body, store)
    apply_actuation(sc.actuation, body, store)
    if sc.run.initial_state:
        apply_snapshot(store, *read_snapshot(sc.run.initial_state))
    engine.check_stability(store, sc.run.dt, sc.environment)
    ctl = SimController(store, sc.environment, sc.run.step_config())
    energy = EnergyLog()
    manifest: list = []
    _write_state(outdir, sc.prefix, 0, 0.0, ctl, energy, manifest)
    report = {
        "scenario": sc.name, "masses": store.mass_count,
        "springs": store.spring_count, "dt": sc.run.dt,
        "duration": sc.run.duration, "backend": sc.run.backend,
        "accumulation": sc.run.accumulation, "status": "ok",
    }
    times = _snapshot_times(sc.run.duration, sc.run.snapshot_every)
    springs0 = store.spring_count
    wall0 = time.perf_counter()

    def on_pause(rep: PauseReport):
        _write_state(outdir, sc.prefix, len(manifest), rep.sim_time, ctl,
                     energy, manifest)

    err = _run_to_breakpoints(ctl, times, on_pause)
    wall = time.perf_counter() - wall0
    if err is not None:
        return _numeric_abort(err, outdir, sc.prefix, report)
    steps = ctl.step_count
    report.update({
        "steps": steps, "wall_seconds": wall,
        "spring_updates_per_second":
            engine.throughput(springs0, steps, wall) if steps else 0.0,
        "snapshots": manifest,
        "energy_log": f"{sc.prefix}_energy.csv",
        "final_sim_time": ctl.sim_time,
    })
    energy.write(outdir / f"{sc.prefix}_energy.csv")
    write_report(outdir / f"{sc.prefix}_report.json", report)
    print(f"{sc.name}: {steps} steps, {wall:.3f}s wall, "
          f"{report['spring_updates_per_second']:.3g} spring updates/s")
    print(f"outputs in {outdir}")
    return EXIT_OK


def cmd_bench(args) -> int:
    sizes = [int(s) for s in args.sizes.split(",") if s]
    backends = [b.strip() for b in args.backends.split(",") if b.strip()]
    for b in backends:
        if b not in ("serial", "parallel"):
            raise ScenarioError(f"unknown backend {b!r}")
    accumulation = args.accumulation or "linearizable"
    outdir = Path(args.out or "out")
    outdir.mkdir(parents=True, exist_ok=True)
    material = Material(elastic_modulus=1e5, density=1000.0)

    def run_once(n: int, backend: str) -> tuple[int, int, float]:
        store = ObjectStore()
        body = build_lattice(LatticeSpec(
            corner=Vec3(0, 0, 0), nx=n, ny=n, nz=n, spacing=0.05,
            material=material), store)
        # uniform stretch so every spring works; keeps the run deterministic
        store._m_pos[body.mass_handles.slots] *= 1.01
        cfg = StepConfig(dt=args.dt, accumulation=accumulation,
                         backend=backend, workers=args.workers)
        ctl = SimController(store, Environment(gravity=Vec3(0, 0, 0)), cfg)
        t0 = time.perf_counter()
        ctl.start(args.duration)
        rep = ctl.wait_for_event()
        wall = time.perf_counter() - t0
        ctl.stop()
        if rep.reason == "error":
            raise rep.error
        return store.spring_count, ctl.step_count, wall

    for backend in backends:          # JIT warm-up, unmeasured
        run_once(2, backend)
    rows = []
    for n in sizes:
        for backend in backends:
            springs, steps, wall = run_once(n, backend)
            ups = engine.throughput(springs, steps, wall) if steps else 0.0
            rows.append((n, springs, backend, steps, wall, ups))
            print(f"n={n:4d} {backend:8s} springs={springs:9d} "
                  f"steps={steps:6d} wall={wall:8.3f}s "
                  f"updates/s={ups:12.0f}")
    csv_path = outdir / "bench.csv"
    lines = ["n,springs,backend,steps,wall_seconds,spring_updates_per_second"]
    for n, springs, backend, steps, wall, ups in rows:
        lines.append(f"{n},{springs},{backend},{steps},{wall:.6f},{ups:.1f}")
    csv_path.write_text("\n".join(lines) + "\n")
    print(f"table written to {csv_path}")
    print(f"comparison only: original CUDA implementation reached "
          f"{GPU_REFERENCE_UPDATES_PER_S:,} updates/s on a 50^3 lattice")
    return EXIT_OK


def cmd_swarm(args) -> int:
    if args.count < 1:
        raise ScenarioError("--count must be >= 1")
    sc = _load_scenario(args)
    outdir = Path(sc.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    store = ObjectStore()
    bodies = []
    if sc.body.type == "multi":
        cfg = sc.body
        cfg.grid = (args.count, cfg.grid[1])
        body = build_body(cfg, store)
        apply_actuation(sc.actuation, body, store)
        bodies.append(body)
        track_ids = list(range(len(body.cube_members))) \
            if isinstance(body, CubeGridBody) else [0]
    else:
        extent = (sc.body.counts[1] - 1) * sc.body.spacing
        for i in range(args.count):
            corner = Vec3(sc.body.corner.x,
                          sc.body.corner.y + i * (extent + 2 * sc.body.spacing),
                          sc.body.corner.z)
            body = build_body(replace(sc.body, corner=corner), store)
            apply_actuation(sc.actuation, body, store)
            bodies.append(body)
        track_ids = list(range(len(bodies)))
    engine.check_stability(store, sc.run.dt, sc.environment)
    ctl = SimController(store, sc.environment, sc.run.step_config())

    def coms() -> list[Vec3]:
        if sc.body.type == "multi":
            body = bodies[0]
            return [body.cube_center_of_mass(store, c) for c in track_ids]
        return [b.center_of_mass(store) for b in bodies]

    track_rows = [(0.0, i, c) for i, c in enumerate(coms())]
    initial = coms()
    connector_stats = []
    times = _snapshot_times(sc.run.duration,
                            sc.run.snapshot_every or sc.run.duration / 10)
    report: dict = {"scenario": sc.name, "count": args.count,
                    "masses": store.mass_count,
                    "springs": store.spring_count, "status": "ok"}

    def on_pause(rep: PauseReport):
        for i, c in enumerate(coms()):
            track_rows.append((rep.sim_time, i, c))
        if sc.body.type == "multi" and isinstance(bodies[0], CubeGridBody):
            body = bodies[0]
            loads = engine.spring_loads(store, rep.sim_time)
            conn_slots = set(
                int(s) for s in body.spring_handles.slots[body.connector_rows])
            sel = np.array([i for i, s in enumerate(loads.slots)
                            if int(s) in conn_slots], dtype=np.int64)
            if len(sel):
                strain = np.abs(loads.lengths[sel] /
                                store._s_rest[loads.slots[sel]] - 1.0)
                connector_stats.append({
                    "sim_time": rep.sim_time,
                    "alive": int(len(sel)),
                    "max_strain": float(strain.max()),
                    "max_stress": float(loads.stresses[sel].max()),
                })

    err = _run_to_breakpoints(ctl, times, on_pause)
    if err is not None:
        return _numeric_abort(err, outdir, sc.prefix, report)
    final = coms()
    tracks_path = outdir / f"{sc.prefix}_tracks.csv"
    lines = ["sim_time,body,x,y,z"]
    for t, i, c in track_rows:
        lines.append(f"{t:.17g},{i},{c.x:.17g},{c.y:.17g},{c.z:.17g}")
    tracks_path.write_text("\n".join(lines) + "\n")
    report.update({
        "steps": ctl.step_count,
        "tracks": tracks_path.name,
        "x_displacements": [f.x - s.x for s, f in zip(initial, final)],
        "connector_stats": connector_stats,
    })
    if connector_stats:
        report["stays_connected"] = (
            connector_stats[-1]["alive"] == len(bodies[0].connector_rows))
    write_report(outdir / f"{sc.prefix}_report.json", report)
    print(f"{sc.name}: {len(track_ids)} bodies, "
          f"mean x displacement "
          f"{np.mean(report['x_displacements']):.4g} m")
    return EXIT_OK


def _connected_after_removal(store: ObjectStore, body, remove: set) -> bool:
    """True if every alive body mass still reaches a fixed mass (or, with
    no fixed masses, if the body stays one component)."""
    slots = [int(s) for s in body.mass_handles.slots
             if store._m_alive[s]]
    index = {s: i for i, s in enumerate(slots)}
    parent = list(range(len(slots)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for slot in store.alive_spring_slots():
        slot = int(slot)
        if slot in remove:
            continue
        i = index.get(int(store._s_m1[slot]))
        j = index.get(int(store._s_m2[slot]))
        if i is None or j is None:
            continue
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[ri] = rj
    roots = {find(i) for i in range(len(slots))}
    fixed_roots = {find(index[s]) for s in slots if store._m_fixed[s]}
    if fixed_roots:
        return roots <= fixed_roots
    return len(roots) <= 1


def cmd_topo(args) -> int:
    sc = _load_scenario(args)
    if args.epochs:
        sc.topo.epochs = args.epochs
    if args.interval:
        sc.topo.interval = args.interval
    if sc.body.fixed_face is None:
        raise ScenarioError("topo requires a [body] fixed_face anchor")
    outdir = Path(sc.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    store = ObjectStore()
    body = build_body(sc.body, store)
    if sc.topo.load.norm() > 0:
        for row in face_rows(body, sc.topo.load_face):
            store.set_applied_load(body.mass_handles[int(row)], sc.topo.load)
    engine.check_stability(store, sc.run.dt, sc.environment)
    ctl = SimController(store, sc.environment, sc.run.step_config())
    initial_loads = engine.spring_loads(store)
    area = 0.25 * np.pi * store._s_diam[initial_loads.slots] ** 2
    rest = store._s_rest[initial_loads.slots]
    initial_bar_mass = float(
        np.sum(sc.body.material.density * area * rest))
    initial_count = store.spring_count
    epochs = []
    guard_triggered = False
    for epoch in range(sc.topo.epochs):
        ctl.set_breakpoint(Breakpoint.at_time(ctl.sim_time + sc.topo.interval))
        if epoch == 0:
            ctl.start()
        else:
            ctl.resume()
        report = ctl.wait_for_event()
        if report.reason == "error":
            return _numeric_abort(report, outdir, sc.prefix,
                                  {"scenario": sc.name, "status": "ok"})
        loads = engine.spring_loads(store, report.sim_time)
        below = loads.stresses < args.threshold
        candidates = {int(s) for s in loads.slots[below]}
        if candidates and not _connected_after_removal(store, body,
                                                       candidates):
            guard_triggered = True
            epochs.append({"epoch": epoch, "sim_time": report.sim_time,
                           "candidates": len(candidates), "removed": 0,
                           "disconnection_guard": True})
            print(f"epoch {epoch}: removing {len(candidates)} springs would "
                  f"disconnect the structure; stopping")
            break
        handles = [body.spring_handles[i]
                   for i, s in enumerate(body.spring_handles.slots)
                   if int(s) in candidates
                   and store.spring_is_live(body.spring_handles[i])]
        ticket = ctl.queue_mutations([DeleteSpring(h) for h in handles])
        if handles and not ticket.applied:
            log.warning("epoch %d removal batch rejected: %s", epoch,
                        ticket.statuses[:3])
        epochs.append({
            "epoch": epoch, "sim_time": report.sim_time,
            "removed": len(handles),
            "removed_slots": sorted(int(h.slot) for h in handles),
            "remaining": store.spring_count,
        })
        print(f"epoch {epoch}: removed {len(handles)} springs, "
              f"{store.spring_count} remain")
    ctl.stop()
    final_loads = engine.spring_loads(store)
    area = 0.25 * np.pi * store._s_diam[final_loads.slots] ** 2
    rest = store._s_rest[final_loads.slots]
    final_bar_mass = float(np.sum(sc.body.material.density * area * rest))
    report = {
        "scenario": sc.name, "status": "ok",
        "threshold": args.threshold,
        "epochs": epochs,
        "guard_triggered": guard_triggered,
        "initial_springs": initial_count,
        "final_springs": store.spring_count,
        "spring_fraction": store.spring_count / initial_count,
        "bar_mass_fraction": (final_bar_mass / initial_bar_mass
                              if initial_bar_mass else 1.0),
    }
    write_report(outdir / f"{sc.prefix}_topo.json", report)
    print(f"final springs: {store.spring_count}/{initial_count} "
          f"(mass fraction {report['bar_mass_fraction']:.3f}), "
          f"guard={'yes' if guard_triggered else 'no'}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
