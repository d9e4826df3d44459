/** Errors mapped from the host CLI's exit codes. */

export class SoftlatError extends Error {}

/** Exit code 1: bad arguments. */
export class UsageError extends SoftlatError {}

/** Exit code 2: the scenario failed to parse or validate. */
export class ScenarioError extends SoftlatError {}

/** Exit code 3: non-finite state during integration. */
export class NumericalAbortError extends SoftlatError {}

export function errorForExit(code: number, stderr: string): SoftlatError {
  const message = stderr.trim() || `softlat exited with code ${code}`;
  switch (code) {
    case 1:
      return new UsageError(message);
    case 2:
      return new ScenarioError(message);
    case 3:
      return new NumericalAbortError(message);
    default:
      return new SoftlatError(message);
  }
}
