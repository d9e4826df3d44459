/**
 * Typed scenario descriptions and the renderer that turns them into the
 * engine's INI scenario format. Keys mirror the host's documented set;
 * anything the host would reject is rejected here first where practical.
 */

export type Vec3Tuple = [number, number, number];
export type Face = "x-min" | "x-max" | "y-min" | "y-max" | "z-min" | "z-max";

export interface MaterialConfig {
  elasticModulus: number;
  density: number;
  yieldStress?: number;
}

export interface LatticeBody {
  type: "lattice";
  corner?: Vec3Tuple;
  counts: [number, number, number];
  spacing: number;
  material: MaterialConfig;
  diameter?: number;
  fixedFace?: Face;
}

export interface StlBody {
  type: "stl";
  path: string;
  spacing: number;
  material: MaterialConfig;
  diameter?: number;
}

export interface MultiBody {
  type: "multi";
  grid: [number, number];
  cubeCounts: [number, number, number];
  spacing: number;
  material: MaterialConfig;
  diameter?: number;
  connectorDiameter?: number;
}

export type Body = LatticeBody | StlBody | MultiBody;

export interface GroundConfig {
  stiffness?: number;
  staticFriction?: number;
  kineticFriction?: number;
  offset?: number;
}

export interface EnvironmentConfig {
  gravity?: Vec3Tuple;
  drag?: number;
  ground?: GroundConfig;
  ball?: { center: Vec3Tuple; radius: number; stiffness: number };
}

export interface ActuationConfig {
  mode: "worm";
  period?: number;
  frequency?: number;
  amplitude?: number;
  phase?: "wrapped" | "quiescent";
}

export interface RunConfig {
  dt?: number;
  duration?: number;
  backend?: "serial" | "parallel";
  workers?: number;
  accumulation?: "linearizable" | "slotted";
  snapshotEvery?: number;
  initialState?: string;
}

export interface TopoConfig {
  interval?: number;
  epochs?: number;
  load?: Vec3Tuple;
  loadFace?: Face;
}

export interface Scenario {
  name: string;
  body: Body;
  environment?: EnvironmentConfig;
  actuation?: ActuationConfig;
  run?: RunConfig;
  topo?: TopoConfig;
}

function num(x: number): string {
  if (!Number.isFinite(x)) {
    throw new Error(`non-finite scenario value: ${x}`);
  }
  return String(x);
}

function vec(v: Vec3Tuple): string {
  return v.map(num).join(" ");
}

/** Emit the scenario in the engine's INI format. */
export function renderScenario(sc: Scenario, outputDir: string): string {
  const lines: string[] = [];
  lines.push("[scenario]", `name = ${sc.name}`, "");

  const b = sc.body;
  lines.push("[body]", `type = ${b.type}`);
  if (b.type === "lattice") {
    lines.push(`corner = ${vec(b.corner ?? [0, 0, 0])}`);
    lines.push(`counts = ${b.counts.map(num).join(" ")}`);
  } else if (b.type === "stl") {
    lines.push(`path = ${b.path}`);
  } else {
    lines.push(`grid = ${b.grid.map(num).join(" ")}`);
    lines.push(`cube_counts = ${b.cubeCounts.map(num).join(" ")}`);
    if (b.connectorDiameter !== undefined) {
      lines.push(`connector_diameter = ${num(b.connectorDiameter)}`);
    }
  }
  lines.push(`spacing = ${num(b.spacing)}`);
  lines.push(`elastic_modulus = ${num(b.material.elasticModulus)}`);
  lines.push(`density = ${num(b.material.density)}`);
  if (b.material.yieldStress !== undefined) {
    lines.push(`yield_stress = ${num(b.material.yieldStress)}`);
  }
  if (b.diameter !== undefined) {
    lines.push(`diameter = ${num(b.diameter)}`);
  }
  if (b.type === "lattice" && b.fixedFace) {
    lines.push(`fixed_face = ${b.fixedFace}`);
  }
  lines.push("");

  const env = sc.environment;
  if (env) {
    lines.push("[environment]");
    if (env.gravity) lines.push(`gravity = ${vec(env.gravity)}`);
    if (env.drag !== undefined) lines.push(`drag = ${num(env.drag)}`);
    if (env.ground) {
      lines.push("ground = on");
      const g = env.ground;
      if (g.offset !== undefined) lines.push(`ground_offset = ${num(g.offset)}`);
      if (g.stiffness !== undefined) {
        lines.push(`ground_stiffness = ${num(g.stiffness)}`);
      }
      if (g.staticFriction !== undefined) {
        lines.push(`static_friction = ${num(g.staticFriction)}`);
      }
      if (g.kineticFriction !== undefined) {
        lines.push(`kinetic_friction = ${num(g.kineticFriction)}`);
      }
    }
    if (env.ball) {
      lines.push(`ball = ${vec(env.ball.center)} ${num(env.ball.radius)} ` +
        num(env.ball.stiffness));
    }
    lines.push("");
  }

  const act = sc.actuation;
  if (act) {
    lines.push("[actuation]", `mode = ${act.mode}`);
    if (act.period !== undefined) lines.push(`period = ${num(act.period)}`);
    if (act.frequency !== undefined) {
      lines.push(`frequency = ${num(act.frequency)}`);
    }
    if (act.amplitude !== undefined) {
      lines.push(`amplitude = ${num(act.amplitude)}`);
    }
    if (act.phase) lines.push(`phase = ${act.phase}`);
    lines.push("");
  }

  const run = sc.run;
  if (run) {
    lines.push("[run]");
    if (run.dt !== undefined) lines.push(`dt = ${num(run.dt)}`);
    if (run.duration !== undefined) {
      lines.push(`duration = ${num(run.duration)}`);
    }
    if (run.backend) lines.push(`backend = ${run.backend}`);
    if (run.workers !== undefined) lines.push(`workers = ${num(run.workers)}`);
    if (run.accumulation) lines.push(`accumulation = ${run.accumulation}`);
    if (run.snapshotEvery !== undefined) {
      lines.push(`snapshot_every = ${num(run.snapshotEvery)}`);
    }
    if (run.initialState) lines.push(`initial_state = ${run.initialState}`);
    lines.push("");
  }

  lines.push("[output]", `dir = ${outputDir}`, "");

  const topo = sc.topo;
  if (topo) {
    lines.push("[topo]");
    if (topo.interval !== undefined) {
      lines.push(`interval = ${num(topo.interval)}`);
    }
    if (topo.epochs !== undefined) lines.push(`epochs = ${num(topo.epochs)}`);
    if (topo.load) lines.push(`load = ${vec(topo.load)}`);
    if (topo.loadFace) lines.push(`load_face = ${topo.loadFace}`);
    lines.push("");
  }
  return lines.join("\n");
}
