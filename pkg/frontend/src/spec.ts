/** Plot specification: which runs to overlay, which panels, where to write. */

import { readFileSync } from "node:fs";
import path from "node:path";
import { z } from "zod";

const runSchema = z.object({
  csv: z.string(),
  summary: z.string().optional(),
  label: z.string().optional(),
});

const specSchema = z.object({
  runs: z.array(runSchema).min(1),
  /** panel ids: "state:<i>" | "input" | "d_hat" | "delta_r" */
  panels: z.array(z.string()).min(1).optional(),
  out: z.string(),
  format: z.literal("svg").default("svg"),
  title: z.string().optional(),
});

export type RunSpec = z.infer<typeof runSchema>;
export type PlotSpec = Required<Pick<z.infer<typeof specSchema>, "runs" | "out" | "format">> &
  Pick<z.infer<typeof specSchema>, "title"> & { panels: string[] };

/** Default 4-panel layout: both plant states, the input, and the
 * disturbance estimate, each with its dotted target overlay. */
export const DEFAULT_PANELS = ["state:1", "state:2", "input", "d_hat"];

export function loadSpec(specPath: string): PlotSpec {
  const raw = JSON.parse(readFileSync(specPath, "utf8"));
  const parsed = specSchema.parse(raw);
  const base = path.dirname(specPath);
  const resolve = (p: string) => (path.isAbsolute(p) ? p : path.join(base, p));
  return {
    runs: parsed.runs.map((r) => ({
      ...r,
      csv: resolve(r.csv),
      summary: r.summary === undefined ? undefined : resolve(r.summary),
    })),
    panels: parsed.panels ?? DEFAULT_PANELS,
    out: resolve(parsed.out),
    format: parsed.format,
    title: parsed.title,
  };
}

/** Convenience spec for a single output directory produced by `ofmpc run`. */
export function specForRunDir(dir: string, out?: string): PlotSpec {
  return {
    runs: [
      {
        csv: path.join(dir, "trajectory.csv"),
        summary: path.join(dir, "summary.json"),
        label: path.basename(dir),
      },
    ],
    panels: DEFAULT_PANELS,
    out: out ?? path.join(dir, "figure.svg"),
    format: "svg",
  };
}
