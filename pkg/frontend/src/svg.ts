/** Minimal deterministic SVG chart primitives (no DOM, no fonts measured). */

export interface Extent {
  min: number;
  max: number;
}

export function extent(arrays: ArrayLike<number>[]): Extent {
  let min = Infinity;
  let max = -Infinity;
  for (const arr of arrays) {
    for (let i = 0; i < arr.length; i++) {
      const v = arr[i];
      if (!Number.isFinite(v)) continue;
      if (v < min) min = v;
      if (v > max) max = v;
    }
  }
  if (min === Infinity) {
    min = 0;
    max = 1;
  }
  if (min === max) {
    min -= 0.5;
    max += 0.5;
  }
  return { min, max };
}

export function padExtent(e: Extent, frac = 0.05): Extent {
  const pad = (e.max - e.min) * frac;
  return { min: e.min - pad, max: e.max + pad };
}

export interface Scale {
  (v: number): number;
  domain: Extent;
  range: Extent;
}

export function linearScale(domain: Extent, range: Extent): Scale {
  const k = (range.max - range.min) / (domain.max - domain.min);
  const fn = ((v: number) => range.min + (v - domain.min) * k) as Scale;
  fn.domain = domain;
  fn.range = range;
  return fn;
}

/** Round tick positions covering the domain (about `count` of them). */
export function ticks(domain: Extent, count = 5): number[] {
  const span = domain.max - domain.min;
  const step = Math.pow(10, Math.floor(Math.log10(span / count)));
  const err = (span / count) / step;
  const unit = err >= 7.5 ? 10 : err >= 3.5 ? 5 : err >= 1.5 ? 2 : 1;
  const inc = unit * step;
  const start = Math.ceil(domain.min / inc) * inc;
  const out: number[] = [];
  for (let v = start; v <= domain.max + 1e-12 * Math.abs(inc); v += inc) {
    out.push(Math.abs(v) < 1e-12 * Math.abs(inc) ? 0 : v);
  }
  return out;
}

export function fmtTick(v: number): string {
  if (v === 0) return "0";
  const a = Math.abs(v);
  if (a >= 1e4 || a < 1e-3) return v.toExponential(1);
  return String(Number(v.toPrecision(4)));
}

export function esc(s: string): string {
  return s.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;").replace(/"/g, "&quot;");
}

/** Polyline path through (x_i, y_i), splitting at non-finite points. */
export function linePath(
  xs: ArrayLike<number>,
  ys: ArrayLike<number>,
  sx: Scale,
  sy: Scale
): string {
  const parts: string[] = [];
  let pen = false;
  for (let i = 0; i < ys.length; i++) {
    if (!Number.isFinite(ys[i]) || !Number.isFinite(xs[i])) {
      pen = false;
      continue;
    }
    const cmd = pen ? "L" : "M";
    parts.push(`${cmd}${sx(xs[i]).toFixed(2)},${sy(ys[i]).toFixed(2)}`);
    pen = true;
  }
  return parts.join("");
}
