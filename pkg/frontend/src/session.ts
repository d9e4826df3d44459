/**
 * Session facade over the engine's external interfaces.
 *
 * A session composes a scenario, runs it through the `softlat` CLI, and
 * exposes results as typed arrays. Everything crosses the process
 * boundary through the documented file formats (scenario INI, snapshot
 * CSV, report JSON); no engine state is shared, so snapshot arrays are
 * always caller-owned copies.
 */
import { spawn } from "node:child_process";
import { mkdtempSync, readFileSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

import { errorForExit, SoftlatError } from "./errors.js";
import {
  ActuationConfig, Body, EnvironmentConfig, RunConfig, Scenario, TopoConfig,
  renderScenario,
} from "./scenario.js";
import { SnapshotArrays, parseSnapshotCsv } from "./snapshot.js";

export interface CliResult {
  code: number;
  stdout: string;
  stderr: string;
}

export interface SnapshotRef {
  file: string;
  simTime: number;
  step: number;
}

export interface RunReport {
  scenario: string;
  masses: number;
  springs: number;
  steps: number;
  wallSeconds: number;
  springUpdatesPerSecond: number;
  snapshots: SnapshotRef[];
  outputDir: string;
}

export interface SessionOptions {
  /** CLI executable; defaults to `softlat` on PATH. */
  cli?: string;
  /** Working directory for scenario and output files. */
  workdir?: string;
}

export function runCli(args: string[], cli = "softlat"):
  Promise<CliResult> {
  return new Promise((resolve, reject) => {
    const child = spawn(cli, args, { stdio: ["ignore", "pipe", "pipe"] });
    let stdout = "";
    let stderr = "";
    child.stdout.on("data", (d) => (stdout += d));
    child.stderr.on("data", (d) => (stderr += d));
    child.on("error", reject);
    child.on("close", (code) =>
      resolve({ code: code ?? -1, stdout, stderr }));
  });
}

export class SoftlatSession {
  private readonly cli: string;
  readonly workdir: string;
  private body?: Body;
  private environment?: EnvironmentConfig;
  private actuation?: ActuationConfig;
  private topo?: TopoConfig;
  private lastReport?: RunReport;

  constructor(opts: SessionOptions = {}) {
    this.cli = opts.cli ?? process.env.SOFTLAT_CLI ?? "softlat";
    this.workdir = opts.workdir ?? mkdtempSync(join(tmpdir(), "softlat-"));
  }

  /** Version string of the host engine; must match this package. */
  async hostVersion(): Promise<string> {
    const res = await runCli(["--version"], this.cli);
    if (res.code !== 0) throw errorForExit(res.code, res.stderr);
    return res.stdout.trim();
  }

  buildLattice(spec: Omit<Extract<Body, { type: "lattice" }>, "type">): this {
    this.body = { type: "lattice", ...spec };
    return this;
  }

  fillStl(spec: Omit<Extract<Body, { type: "stl" }>, "type">): this {
    this.body = { type: "stl", ...spec };
    return this;
  }

  buildCubeGrid(spec: Omit<Extract<Body, { type: "multi" }>, "type">): this {
    this.body = { type: "multi", ...spec };
    return this;
  }

  setEnvironment(env: EnvironmentConfig): this {
    this.environment = env;
    return this;
  }

  configureWorm(act: Omit<ActuationConfig, "mode"> = {}): this {
    this.actuation = { mode: "worm", ...act };
    return this;
  }

  setTopo(topo: TopoConfig): this {
    this.topo = topo;
    return this;
  }

  scenarioText(name: string, run: RunConfig, outputDir: string): string {
    if (!this.body) {
      throw new SoftlatError("no body configured; call buildLattice/" +
        "fillStl/buildCubeGrid first");
    }
    const sc: Scenario = {
      name,
      body: this.body,
      environment: this.environment,
      actuation: this.actuation,
      run,
      topo: this.topo,
    };
    return renderScenario(sc, outputDir);
  }

  /** Run the configured scenario to its duration breakpoint(s). */
  async run(run: RunConfig = {}, name = "session"): Promise<RunReport> {
    const outputDir = join(this.workdir, "out");
    const scenarioPath = join(this.workdir, `${name}.ini`);
    writeFileSync(scenarioPath, this.scenarioText(name, run, outputDir));
    const res = await runCli(["run", scenarioPath], this.cli);
    if (res.code !== 0) throw errorForExit(res.code, res.stderr);
    const raw = JSON.parse(
      readFileSync(join(outputDir, `${name}_report.json`), "utf-8"));
    this.lastReport = {
      scenario: raw.scenario,
      masses: raw.masses,
      springs: raw.springs,
      steps: raw.steps,
      wallSeconds: raw.wall_seconds,
      springUpdatesPerSecond: raw.spring_updates_per_second,
      snapshots: raw.snapshots.map((s: any) => ({
        file: s.file, simTime: s.sim_time, step: s.step,
      })),
      outputDir,
    };
    return this.lastReport;
  }

  /**
   * Positions and velocities of one snapshot of the last run as
   * contiguous arrays ordered by mass id. Defaults to the final snapshot.
   */
  snapshotArrays(index = -1): SnapshotArrays {
    if (!this.lastReport) {
      throw new SoftlatError("no completed run; call run() first");
    }
    const snaps = this.lastReport.snapshots;
    const ref = snaps[index < 0 ? snaps.length + index : index];
    if (!ref) throw new SoftlatError(`no snapshot at index ${index}`);
    const text = readFileSync(join(this.lastReport.outputDir, ref.file),
      "utf-8");
    return parseSnapshotCsv(text);
  }
}
