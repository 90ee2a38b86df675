/** Typed access to the simulator's trajectory.csv. */

import { readFileSync } from "node:fs";
import Papa from "papaparse";

export class MissingColumnError extends Error {
  constructor(public readonly column: string, public readonly path: string) {
    super(`column '${column}' not found in ${path}`);
    this.name = "MissingColumnError";
  }
}

export class EmptyTrajectoryError extends Error {
  constructor(public readonly path: string) {
    super(`trajectory has no data rows: ${path}`);
    this.name = "EmptyTrajectoryError";
  }
}

export interface Trajectory {
  path: string;
  columns: string[];
  /** numeric columns only; blank cells become NaN */
  numeric: Map<string, Float64Array>;
  rows: number;
}

const TEXT_COLUMNS = new Set(["mhe_status", "ocp_status"]);

export function readTrajectory(path: string): Trajectory {
  const text = readFileSync(path, "utf8");
  if (text.trim() === "") throw new EmptyTrajectoryError(path);
  const parsed = Papa.parse<string[]>(text.trimEnd(), { skipEmptyLines: true });
  if (parsed.errors.length > 0) {
    throw new Error(`${path}: ${parsed.errors[0].message}`);
  }
  const data = parsed.data;
  if (data.length === 0) throw new EmptyTrajectoryError(path);
  const columns = data[0];
  const rows = data.length - 1;
  if (rows === 0) throw new EmptyTrajectoryError(path);
  const numeric = new Map<string, Float64Array>();
  columns.forEach((name, j) => {
    if (TEXT_COLUMNS.has(name)) return;
    const arr = new Float64Array(rows);
    for (let i = 0; i < rows; i++) {
      const cell = data[i + 1][j];
      arr[i] = cell === "" || cell === undefined ? NaN : Number(cell);
    }
    numeric.set(name, arr);
  });
  return { path, columns, numeric, rows };
}

export function column(t: Trajectory, name: string): Float64Array {
  const arr = t.numeric.get(name);
  if (arr === undefined) throw new MissingColumnError(name, t.path);
  return arr;
}

/** All 1-based components of a vector column prefix, e.g. x_P -> [x_P_1, x_P_2]. */
export function vectorColumns(t: Trajectory, prefix: string): string[] {
  const out: string[] = [];
  for (let i = 1; ; i++) {
    const name = `${prefix}_${i}`;
    if (!t.numeric.has(name)) break;
    out.push(name);
  }
  if (out.length === 0) throw new MissingColumnError(`${prefix}_1`, t.path);
  return out;
}
