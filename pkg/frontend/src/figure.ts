/** Render a multi-panel closed-loop figure from trajectory CSVs.
 *
 * Solid lines are realized signals (one color per run); dotted black lines
 * are the intended steady-state targets. Rendering is pure string
 * composition, so identical inputs give identical SVG bytes.
 */

import { readFileSync } from "node:fs";
import { column, readTrajectory, Trajectory, vectorColumns } from "./csv.js";
import { PlotSpec, RunSpec } from "./spec.js";
import { esc, extent, fmtTick, linePath, linearScale, padExtent, ticks } from "./svg.js";

const COLORS = ["#1f6fb2", "#d1495b", "#3a7d44", "#8d6a9f"];

const PANEL_W = 460;
const PANEL_H = 220;
const MARGIN = { top: 28, right: 16, bottom: 36, left: 56 };
const GAP = 18;

interface Series {
  y: Float64Array;
  dotted: boolean;
  color: string;
  label?: string;
}

interface PanelData {
  id: string;
  yLabel: string;
  series: Series[];
}

function panelTitle(id: string): string {
  if (id.startsWith("state:")) return `state x_${id.slice(6)}`;
  if (id === "input") return "input u";
  if (id === "d_hat") return "disturbance estimate";
  if (id === "delta_r") return "tracking error";
  throw new Error(`unknown panel id '${id}'`);
}

function seriesFor(id: string, t: Trajectory, color: string, label?: string): Series[] {
  const out: Series[] = [];
  const dotted = (name: string) => {
    if (!t.numeric.has(name)) return; // optional overlays may be absent
    const y = column(t, name);
    if (Array.prototype.some.call(y, Number.isFinite)) {
      out.push({ y, dotted: true, color: "#000000" });
    }
  };
  if (id.startsWith("state:")) {
    const i = Number(id.slice(6));
    const states = vectorColumns(t, "x_P");
    if (i < 1 || i > states.length) {
      throw new Error(`panel '${id}': run has ${states.length} states`);
    }
    out.push({ y: column(t, `x_P_${i}`), dotted: false, color, label });
    dotted(`x_s_${i}`);
    dotted(`x_Ps_${i}`);
  } else if (id === "input") {
    out.push({ y: column(t, "u_1"), dotted: false, color, label });
    dotted("u_s_1");
  } else if (id === "d_hat") {
    out.push({ y: column(t, "d_hat_1"), dotted: false, color, label });
    dotted("d_s_1");
  } else if (id === "delta_r") {
    out.push({ y: column(t, "delta_r_1"), dotted: false, color, label });
  } else {
    throw new Error(`unknown panel id '${id}'`);
  }
  return out;
}

function renderPanel(p: PanelData, k: Float64Array, x0: number, y0: number): string {
  const inner = {
    x: x0 + MARGIN.left,
    y: y0 + MARGIN.top,
    w: PANEL_W - MARGIN.left - MARGIN.right,
    h: PANEL_H - MARGIN.top - MARGIN.bottom,
  };
  const xDom = extent([k]);
  const yDom = padExtent(extent(p.series.map((s) => s.y)));
  const sx = linearScale(xDom, { min: inner.x, max: inner.x + inner.w });
  const sy = linearScale(yDom, { min: inner.y + inner.h, max: inner.y });

  const parts: string[] = [];
  parts.push(
    `<g class="panel" data-panel="${esc(p.id)}" data-ymin="${yDom.min}" data-ymax="${yDom.max}">`
  );
  parts.push(
    `<rect x="${inner.x}" y="${inner.y}" width="${inner.w}" height="${inner.h}" fill="none" stroke="#444" stroke-width="1"/>`
  );
  for (const tv of ticks(xDom)) {
    const px = sx(tv).toFixed(2);
    parts.push(`<line x1="${px}" y1="${inner.y + inner.h}" x2="${px}" y2="${inner.y + inner.h + 4}" stroke="#444"/>`);
    parts.push(
      `<text x="${px}" y="${inner.y + inner.h + 16}" font-size="10" text-anchor="middle">${fmtTick(tv)}</text>`
    );
  }
  for (const tv of ticks(yDom)) {
    const py = sy(tv).toFixed(2);
    parts.push(`<line x1="${inner.x - 4}" y1="${py}" x2="${inner.x}" y2="${py}" stroke="#444"/>`);
    parts.push(
      `<text x="${inner.x - 7}" y="${py}" font-size="10" text-anchor="end" dominant-baseline="middle">${fmtTick(tv)}</text>`
    );
  }
  parts.push(
    `<text x="${inner.x}" y="${y0 + 18}" font-size="12" font-weight="bold">${esc(p.yLabel)}</text>`
  );
  parts.push(
    `<text x="${inner.x + inner.w / 2}" y="${y0 + PANEL_H - 6}" font-size="10" text-anchor="middle">step k</text>`
  );
  // dotted targets under the solid realizations
  const ordered = [...p.series].sort((a, b) => Number(b.dotted) - Number(a.dotted));
  for (const s of ordered) {
    const d = linePath(k, s.y, sx, sy);
    if (d === "") continue;
    const dash = s.dotted ? ' stroke-dasharray="2,3" class="target-overlay"' : ' class="trace"';
    parts.push(
      `<path d="${d}" fill="none" stroke="${s.color}" stroke-width="${s.dotted ? 1 : 1.5}"${dash}/>`
    );
  }
  parts.push("</g>");
  return parts.join("\n");
}

export function renderFigure(spec: PlotSpec): string {
  const runs = spec.runs.map((r: RunSpec, i: number) => ({
    spec: r,
    traj: readTrajectory(r.csv),
    color: COLORS[i % COLORS.length],
    label: r.label ?? labelFromSummary(r) ?? `run ${i + 1}`,
  }));
  const k0 = column(runs[0].traj, "k");
  for (const r of runs) {
    const k = column(r.traj, "k");
    if (k.length !== k0.length || k[k.length - 1] !== k0[k0.length - 1]) {
      throw new Error(`runs do not share the same step grid: ${r.spec.csv}`);
    }
  }

  const panels: PanelData[] = spec.panels.map((id) => ({
    id,
    yLabel: panelTitle(id),
    series: runs.flatMap((r) => seriesFor(id, r.traj, r.color, r.label)),
  }));

  const cols = 2;
  const rowsN = Math.ceil(panels.length / cols);
  const width = cols * PANEL_W + (cols + 1) * GAP;
  const height = rowsN * PANEL_H + (rowsN + 1) * GAP + 24;

  const parts: string[] = [];
  parts.push(
    `<svg xmlns="http://www.w3.org/2000/svg" width="${width}" height="${height}" viewBox="0 0 ${width} ${height}" font-family="sans-serif">`
  );
  parts.push(`<rect width="${width}" height="${height}" fill="#ffffff"/>`);
  const title = spec.title ?? runs.map((r) => r.label).join(" vs ");
  parts.push(`<text x="${GAP}" y="18" font-size="14" font-weight="bold">${esc(title)}</text>`);
  // legend: one entry per run plus the shared target style
  let lx = width - GAP - 120 * (runs.length + 1);
  for (const r of runs) {
    parts.push(`<line x1="${lx}" y1="14" x2="${lx + 22}" y2="14" stroke="${r.color}" stroke-width="2"/>`);
    parts.push(`<text x="${lx + 27}" y="18" font-size="11">${esc(r.label)}</text>`);
    lx += 120;
  }
  parts.push(`<line x1="${lx}" y1="14" x2="${lx + 22}" y2="14" stroke="#000" stroke-dasharray="2,3"/>`);
  parts.push(`<text x="${lx + 27}" y="18" font-size="11">targets</text>`);

  panels.forEach((p, i) => {
    const cx = GAP + (i % cols) * (PANEL_W + GAP);
    const cy = 24 + GAP + Math.floor(i / cols) * (PANEL_H + GAP);
    parts.push(renderPanel(p, k0, cx, cy));
  });
  parts.push("</svg>");
  return parts.join("\n") + "\n";
}

function labelFromSummary(r: RunSpec): string | undefined {
  if (r.summary === undefined) return undefined;
  try {
    const s = JSON.parse(readFileSync(r.summary, "utf8"));
    return typeof s.scenario === "string" ? s.scenario : undefined;
  } catch {
    return undefined;
  }
}
