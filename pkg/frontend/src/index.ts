export { NumericalAbortError, ScenarioError, SoftlatError, UsageError,
  errorForExit } from "./errors.js";
export type { ActuationConfig, Body, EnvironmentConfig, Face, GroundConfig,
  LatticeBody, MaterialConfig, MultiBody, RunConfig, Scenario, StlBody,
  TopoConfig, Vec3Tuple } from "./scenario.js";
export { renderScenario } from "./scenario.js";
export { SNAPSHOT_HEADER, float64BitsEqual, parseSnapshotCsv }
  from "./snapshot.js";
export type { SnapshotArrays } from "./snapshot.js";
export { SoftlatSession, runCli } from "./session.js";
export type { CliResult, RunReport, SessionOptions, SnapshotRef }
  from "./session.js";

export const VERSION = "0.1.0";
