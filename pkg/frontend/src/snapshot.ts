/**
 * Snapshot CSV parsing. The host writes doubles with 17 significant
 * digits, so `Number()` reconstructs the exact bit pattern; arrays here
 * are contiguous row-major copies ordered as the file orders them
 * (ascending mass id).
 */

export interface SnapshotArrays {
  count: number;
  ids: Int32Array;
  /** count x 3, row-major */
  positions: Float64Array;
  /** count x 3, row-major */
  velocities: Float64Array;
}

export const SNAPSHOT_HEADER = "id,x,y,z,vx,vy,vz";

export function parseSnapshotCsv(text: string): SnapshotArrays {
  const lines = text.split(/\r?\n/).filter((l) => l.length > 0);
  if (lines.length === 0 || lines[0] !== SNAPSHOT_HEADER) {
    throw new Error(`not a snapshot CSV (header ${JSON.stringify(lines[0])})`);
  }
  const count = lines.length - 1;
  const ids = new Int32Array(count);
  const positions = new Float64Array(count * 3);
  const velocities = new Float64Array(count * 3);
  for (let i = 0; i < count; i++) {
    const parts = lines[i + 1].split(",");
    if (parts.length !== 7) {
      throw new Error(`snapshot line ${i + 2}: expected 7 columns`);
    }
    ids[i] = Number(parts[0]);
    for (let c = 0; c < 3; c++) {
      positions[i * 3 + c] = Number(parts[1 + c]);
      velocities[i * 3 + c] = Number(parts[4 + c]);
    }
  }
  return { count, ids, positions, velocities };
}

/** Bitwise equality of two double arrays. */
export function float64BitsEqual(a: Float64Array, b: Float64Array): boolean {
  if (a.length !== b.length) return false;
  const ua = new BigUint64Array(a.buffer, a.byteOffset, a.length);
  const ub = new BigUint64Array(b.buffer, b.byteOffset, b.length);
  for (let i = 0; i < ua.length; i++) {
    if (ua[i] !== ub[i]) return false;
  }
  return true;
}
