/** Pure SVG-path geometry for the strip charts.  Input is whatever series
 * the reducer accumulated from gateway records; nothing is interpolated or
 * extrapolated beyond holding a sample until the next one. */

import type { SeriesPoint } from "./state.js";

export interface Box {
  w: number;
  h: number;
  pad: number;
}

export interface Bounds {
  tMin: number;
  tMax: number;
  vMin: number;
  vMax: number;
}

export function bounds(points: SeriesPoint[]): Bounds | null {
  if (points.length === 0) return null;
  let tMin = Infinity;
  let tMax = -Infinity;
  let vMin = Infinity;
  let vMax = -Infinity;
  for (const p of points) {
    tMin = Math.min(tMin, p.t);
    tMax = Math.max(tMax, p.t);
    vMin = Math.min(vMin, p.v);
    vMax = Math.max(vMax, p.v);
  }
  return { tMin, tMax, vMin, vMax };
}

function scales(b: Bounds, box: Box): { x: (t: number) => number; y: (v: number) => number } {
  const spanT = b.tMax - b.tMin;
  const spanV = b.vMax - b.vMin;
  const innerW = box.w - 2 * box.pad;
  const innerH = box.h - 2 * box.pad;
  const x = (t: number) =>
    box.pad + (spanT === 0 ? innerW / 2 : ((t - b.tMin) / spanT) * innerW);
  const y = (v: number) =>
    box.h - box.pad - (spanV === 0 ? innerH / 2 : ((v - b.vMin) / spanV) * innerH);
  return { x, y };
}

const fmt = (n: number): string => String(Math.round(n * 100) / 100);

/** Step path: each sample's value holds until the next sample's instant. */
export function stepPath(points: SeriesPoint[], box: Box): string {
  const b = bounds(points);
  if (b === null || points.length < 2) return "";
  const { x, y } = scales(b, box);
  const first = points[0] as SeriesPoint;
  let d = `M ${fmt(x(first.t))} ${fmt(y(first.v))}`;
  for (let i = 1; i < points.length; i++) {
    const p = points[i] as SeriesPoint;
    const prev = points[i - 1] as SeriesPoint;
    d += ` H ${fmt(x(p.t))}`;
    if (p.v !== prev.v) d += ` V ${fmt(y(p.v))}`;
  }
  return d;
}

/** Plain polyline through the samples. */
export function linePath(points: SeriesPoint[], box: Box): string {
  const b = bounds(points);
  if (b === null || points.length < 2) return "";
  const { x, y } = scales(b, box);
  const parts = points.map((p, i) => `${i === 0 ? "M" : "L"} ${fmt(x(p.t))} ${fmt(y(p.v))}`);
  return parts.join(" ");
}
