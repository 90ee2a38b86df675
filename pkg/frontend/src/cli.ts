#!/usr/bin/env node
/** plot <spec.json> — render a multi-panel SVG figure from simulator output.
 *
 * The argument is either a plot-spec JSON file or a directory produced by
 * `ofmpc run` (containing trajectory.csv + summary.json). Nothing is written
 * when reading or validation fails.
 */

import { statSync, writeFileSync } from "node:fs";
import { renderFigure } from "./figure.js";
import { loadSpec, specForRunDir, PlotSpec } from "./spec.js";

export function main(argv: string[]): number {
  const args = argv.filter((a) => a !== "");
  if (args.length < 1 || args.length > 2 || args[0] === "--help") {
    console.error("usage: ofmpc-plot <spec.json | run-directory> [out.svg]");
    return args[0] === "--help" ? 0 : 2;
  }
  let spec: PlotSpec;
  try {
    const st = statSync(args[0]);
    spec = st.isDirectory() ? specForRunDir(args[0], args[1]) : loadSpec(args[0]);
    if (args[1] !== undefined) spec = { ...spec, out: args[1] };
    const svg = renderFigure(spec);
    writeFileSync(spec.out, svg);
  } catch (err) {
    console.error(`error: ${err instanceof Error ? err.message : String(err)}`);
    return err instanceof Error && err.name.startsWith("Missing") ? 2 : 1;
  }
  console.log(spec.out);
  return 0;
}

const entry = process.argv[1];
if (entry !== undefined && import.meta.url.endsWith(entry.split("/").pop() ?? "")) {
  process.exit(main(process.argv.slice(2)));
}
