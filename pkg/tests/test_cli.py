import json
import math
from pathlib import Path

import numpy as np
import pytest

from softlat import ScenarioError
from softlat.cli import main
from softlat.io import (SNAPSHOT_HEADER, EnergyLog, read_snapshot,
                        write_snapshot)
from softlat.scenario import parse_scenario

BASE = """
[scenario]
name = tiny

[body]
type = lattice
corner = 0 0 0.05
counts = 3 3 3
spacing = 0.05
elastic_modulus = 1e5
density = 1000
diameter = 0.001

[environment]
gravity = 0 0 -9.81
ground = on
ground_stiffness = 400
static_friction = 0.8
kinetic_friction = 0.5

[run]
dt = 1e-4
duration = 0.05
backend = serial

[output]
dir = {out}
"""


def write_scenario(tmp_path, text=None, **fmt) -> Path:
    p = tmp_path / "scenario.ini"
    p.write_text((text or BASE).format(out=fmt.get("out", tmp_path / "out")))
    return p


# ------------------------------------------------------------------ parsing

def test_parse_roundtrip(tmp_path):
    sc = parse_scenario(write_scenario(tmp_path))
    assert sc.name == "tiny"
    assert sc.body.counts == (3, 3, 3)
    assert sc.run.duration == 0.05
    assert sc.environment.planes()[0].stiffness == 400


def test_unknown_key_rejected(tmp_path):
    bad = BASE + "\n[run]\nwarp_speed = 9\n"
    # configparser forbids duplicate sections; embed into the run section
    bad = BASE.replace("dt = 1e-4", "dt = 1e-4\nwarp_speed = 9")
    with pytest.raises(ScenarioError) as err:
        parse_scenario(write_scenario(tmp_path, text=bad))
    assert "warp_speed" in str(err.value)


def test_unknown_section_rejected(tmp_path):
    bad = BASE + "\n[wormhole]\nx = 1\n"
    with pytest.raises(ScenarioError) as err:
        parse_scenario(write_scenario(tmp_path, text=bad))
    assert "wormhole" in str(err.value)


def test_missing_body_rejected(tmp_path):
    p = tmp_path / "s.ini"
    p.write_text("[run]\ndt = 1e-4\n")
    with pytest.raises(ScenarioError):
        parse_scenario(p)


def test_bad_backend_rejected(tmp_path):
    bad = BASE.replace("backend = serial", "backend = quantum")
    with pytest.raises(ScenarioError):
        parse_scenario(write_scenario(tmp_path, text=bad))


# --------------------------------------------------------------- snapshots

def test_snapshot_format_roundtrips_doubles(tmp_path):
    ids = np.array([0, 5, 7], dtype=np.int64)
    pos = np.array([[0.1, -1 / 3, 2e-17], [1e300, -1e-300, 0.0],
                    [math.pi, math.e, -0.0]])
    vel = np.array([[1 / 7, 2.0, 3.0], [0.0, 0.0, 0.0], [5e-324, 1.0, -1.0]])
    path = tmp_path / "snap.csv"
    write_snapshot(path, ids, pos, vel)
    ids2, pos2, vel2 = read_snapshot(path)
    assert np.array_equal(ids, ids2)
    assert pos.tobytes() == pos2.tobytes()
    assert vel.tobytes() == vel2.tobytes()
    assert path.read_text().splitlines()[0] == SNAPSHOT_HEADER


def test_energy_log_columns(tmp_path):
    from softlat.engine import EnergyBreakdown
    log = EnergyLog()
    log.add(0.0, EnergyBreakdown(1.0, 2.0, 3.0))
    path = tmp_path / "energy.csv"
    log.write(path)
    lines = path.read_text().splitlines()
    assert lines[0] == ("sim_time,kinetic,spring_potential,"
                        "gravity_potential,total")
    assert lines[1].split(",")[-1] == "6"


# --------------------------------------------------------------- run command

def test_run_produces_outputs(tmp_path):
    out = tmp_path / "out"
    rc = main(["run", str(write_scenario(tmp_path)), "--out", str(out)])
    assert rc == 0
    report = json.loads((out / "tiny_report.json").read_text())
    assert report["steps"] == 500
    assert report["status"] == "ok"
    snaps = sorted(out.glob("tiny_snap*.csv"))
    assert len(snaps) == 2            # initial + final (no snapshot_every)
    assert (out / "tiny_energy.csv").exists()


def test_run_deterministic_byte_identical(tmp_path):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    sc = write_scenario(tmp_path)
    assert main(["run", str(sc), "--out", str(out1)]) == 0
    assert main(["run", str(sc), "--out", str(out2)]) == 0
    for f1 in sorted(out1.glob("*.csv")):
        f2 = out2 / f1.name
        assert f1.read_bytes() == f2.read_bytes(), f1.name


def test_run_zero_duration_initial_snapshot_only(tmp_path):
    out = tmp_path / "out"
    rc = main(["run", str(write_scenario(tmp_path)), "--out", str(out),
               "--duration", "0"])
    assert rc == 0
    snaps = sorted(out.glob("tiny_snap*.csv"))
    assert len(snaps) == 1
    report = json.loads((out / "tiny_report.json").read_text())
    assert report["steps"] == 0


def test_snapshot_reload_roundtrip_bit_exact(tmp_path):
    """Re-loading a snapshot as initial state and running zero steps
    reproduces the file byte for byte."""
    out = tmp_path / "out"
    sc = write_scenario(tmp_path)
    assert main(["run", str(sc), "--out", str(out)]) == 0
    final = sorted(out.glob("tiny_snap*.csv"))[-1]

    reload_sc = tmp_path / "reload.ini"
    reload_sc.write_text(
        BASE.format(out=tmp_path / "out2")
        .replace("duration = 0.05",
                 f"duration = 0\ninitial_state = {final}"))
    out2 = tmp_path / "out2"
    assert main(["run", str(reload_sc), "--out", str(out2)]) == 0
    snap0 = out2 / "tiny_snap000000.csv"
    assert snap0.read_bytes() == final.read_bytes()


def test_usage_error_exit_code():
    assert main(["run"]) == 1
    assert main(["frobnicate"]) == 1


def test_scenario_error_exit_code(tmp_path):
    p = tmp_path / "bad.ini"
    p.write_text("[body]\ntype = nonsense\n")
    assert main(["run", str(p)]) == 2
    assert main(["run", str(tmp_path / "missing.ini")]) == 2


def test_numerical_abort_exit_code(tmp_path):
    # body buried deep in an ultra-stiff ground plane at a huge timestep:
    # the contact penalty feedback overflows within a few steps
    bad = (BASE.replace("corner = 0 0 0.05", "corner = 0 0 -0.5")
               .replace("ground_stiffness = 400", "ground_stiffness = 1e13")
               .replace("dt = 1e-4", "dt = 0.1")
               .replace("duration = 0.05", "duration = 10"))
    out = tmp_path / "out"
    rc = main(["run", str(write_scenario(tmp_path, text=bad)),
               "--out", str(out)])
    assert rc == 3
    report = json.loads((out / "tiny_report.json").read_text())
    assert report["status"] == "numerical_abort"
    assert "abort_sim_time" in report


def test_version_flag():
    assert main(["--version"]) == 0


# ------------------------------------------------------------------- bench

def test_bench_writes_csv(tmp_path):
    out = tmp_path / "bench"
    rc = main(["bench", "--sizes", "4,6", "--duration", "0.005",
               "--backends", "serial", "--out", str(out)])
    assert rc == 0
    rows = (out / "bench.csv").read_text().splitlines()
    assert rows[0].startswith("n,springs,backend")
    assert len(rows) == 3
    n4 = rows[1].split(",")
    assert int(n4[1]) == 3 * 16 * 3 + 6 * 4 * 9 + 4 * 27


def test_bench_single_node_lattice_is_trivial(tmp_path):
    out = tmp_path / "bench"
    rc = main(["bench", "--sizes", "1", "--duration", "0.005",
               "--backends", "serial", "--out", str(out)])
    assert rc == 0
    row = (out / "bench.csv").read_text().splitlines()[1].split(",")
    assert int(row[1]) == 0          # no springs
    assert float(row[5]) == 0.0      # zero updates per second


# ------------------------------------------------------------------- swarm

def test_swarm_tracks_bodies(tmp_path):
    out = tmp_path / "out"
    sc = write_scenario(tmp_path, text=BASE + "\n[actuation]\nmode = worm\n")
    rc = main(["swarm", "--count", "2", str(sc), "--out", str(out),
               "--duration", "0.05"])
    assert rc == 0
    report = json.loads((out / "tiny_report.json").read_text())
    assert len(report["x_displacements"]) == 2
    tracks = (out / "tiny_tracks.csv").read_text().splitlines()
    assert tracks[0] == "sim_time,body,x,y,z"
    bodies = {line.split(",")[1] for line in tracks[1:]}
    assert bodies == {"0", "1"}


def test_swarm_count_one_is_single_body(tmp_path):
    out = tmp_path / "out"
    sc = write_scenario(tmp_path, text=BASE + "\n[actuation]\nmode = worm\n")
    rc = main(["swarm", "--count", "1", str(sc), "--out", str(out),
               "--duration", "0.05"])
    assert rc == 0
    report = json.loads((out / "tiny_report.json").read_text())
    assert len(report["x_displacements"]) == 1
    # a lone swarm member is exactly the scenario body
    assert report["masses"] == 27


def test_environment_ball_key(tmp_path):
    text = BASE.replace("ground = on", "ground = off") \
               .replace("gravity = 0 0 -9.81", "gravity = 0 0 -9.81\n"
                        "ball = 0.1 0.1 -0.5 0.45 800")
    sc = parse_scenario(write_scenario(tmp_path, text=text))
    balls = [c for c in sc.environment.contacts
             if type(c).__name__ == "ContactBall"]
    assert len(balls) == 1
    assert balls[0].radius == 0.45


# -------------------------------------------------------------------- topo

TOPO = """
[scenario]
name = canti

[body]
type = lattice
corner = 0 0 0
counts = 6 3 3
spacing = 0.05
elastic_modulus = 1e7
density = 1000
diameter = 0.001
fixed_face = x-min

[environment]
gravity = 0 0 0
drag = 0.05

[run]
dt = 1e-4
duration = 1.0

[output]
dir = {out}

[topo]
interval = 0.1
epochs = 2
load = 0 0 -1.0
load_face = x-max
"""


def test_topo_removes_below_threshold_matching_oracle(tmp_path):
    out = tmp_path / "out"
    p = tmp_path / "canti.ini"
    p.write_text(TOPO.format(out=out))
    rc = main(["topo", str(p), "--threshold", "1500", "--out", str(out)])
    assert rc == 0
    report = json.loads((out / "canti_topo.json").read_text())
    assert not report["guard_triggered"]
    assert report["final_springs"] < report["initial_springs"]
    assert 0 < report["spring_fraction"] < 1
    assert report["epochs"][0]["removed"] > 0


def test_topo_zero_threshold_removes_nothing(tmp_path):
    out = tmp_path / "out"
    p = tmp_path / "canti.ini"
    p.write_text(TOPO.format(out=out))
    rc = main(["topo", str(p), "--threshold", "0", "--out", str(out)])
    assert rc == 0
    report = json.loads((out / "canti_topo.json").read_text())
    assert report["final_springs"] == report["initial_springs"]
    assert report["spring_fraction"] == 1.0


def test_topo_extreme_threshold_trips_guard(tmp_path):
    out = tmp_path / "out"
    p = tmp_path / "canti.ini"
    p.write_text(TOPO.format(out=out))
    rc = main(["topo", str(p), "--threshold", "1e15", "--out", str(out)])
    assert rc == 0
    report = json.loads((out / "canti_topo.json").read_text())
    assert report["guard_triggered"]
    assert report["final_springs"] == report["initial_springs"]


def test_topo_requires_fixed_face(tmp_path):
    p = tmp_path / "nofix.ini"
    p.write_text(TOPO.format(out=tmp_path).replace("fixed_face = x-min\n", ""))
    assert main(["topo", str(p), "--threshold", "1"]) == 2


def test_shipped_scenarios_parse():
    import pathlib
    scenario_dir = pathlib.Path(__file__).resolve().parent.parent / "scenarios"
    files = sorted(scenario_dir.glob("*.ini"))
    assert files, "no shipped scenario files found"
    for f in files:
        sc = parse_scenario(f)
        assert sc.run.dt > 0
        sc.run.step_config()    # validates backend/accumulation combos
