import type { Rat } from "./types.js";

/** Numeric view of a wire rational, for chart geometry only.  Displayed
 * values always stay in their verbatim wire form. */
export function ratNum(v: Rat | null | undefined): number | null {
  if (v === null || v === undefined) return null;
  if (typeof v === "number") return Number.isFinite(v) ? v : null;
  if (v.trim() === "") return null; // Number("") would coerce to 0
  const slash = v.indexOf("/");
  if (slash >= 0) {
    const num = Number(v.slice(0, slash));
    const den = Number(v.slice(slash + 1));
    if (!Number.isFinite(num) || !Number.isFinite(den) || den === 0) return null;
    return num / den;
  }
  const n = Number(v);
  return Number.isFinite(n) ? n : null;
}

/** Exact equality of two wire rationals (handles 1 vs "1" vs "2/2"). */
export function ratEq(a: Rat | null | undefined, b: Rat | null | undefined): boolean {
  const pa = ratParts(a);
  const pb = ratParts(b);
  if (pa === null || pb === null) return pa === pb;
  return pa[0] * pb[1] === pb[0] * pa[1];
}

/** [numerator, denominator] of a wire rational, or null. */
function ratParts(v: Rat | null | undefined): [number, number] | null {
  if (v === null || v === undefined) return null;
  if (typeof v === "number") return Number.isFinite(v) ? [v, 1] : null;
  if (v.trim() === "") return null; // Number("") would coerce to 0
  const slash = v.indexOf("/");
  if (slash >= 0) {
    const num = Number(v.slice(0, slash));
    const den = Number(v.slice(slash + 1));
    if (!Number.isFinite(num) || !Number.isFinite(den) || den === 0) return null;
    return [num, den];
  }
  const dot = v.indexOf(".");
  if (dot >= 0) {
    const digits = v.length - dot - 1;
    const scaled = Number(v.replace(".", ""));
    if (!Number.isFinite(scaled)) return null;
    return [scaled, 10 ** digits];
  }
  const n = Number(v);
  return Number.isFinite(n) ? [n, 1] : null;
}

/** Verbatim text of a wire value, with a placeholder for absent ones. */
export function ratText(v: Rat | null | undefined): string {
  return v === null || v === undefined ? "—" : String(v);
}
