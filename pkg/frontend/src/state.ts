/** Console state and its pure transitions.
 *
 * Everything shown in the charts and outcome rows is derived from data the
 * gateway served: /state snapshots are kept verbatim, series points come
 * only from streamed log records, and a command's outcome is filled in only
 * when the records proving it arrive.  Nothing here predicts or simulates
 * what the run will do.
 */

import { Ring } from "./ring.js";
import { ratEq, ratNum } from "./rat.js";
import type { CommandBody, LogRecord, Rat, StateView } from "./types.js";

export type Connection = "connecting" | "live" | "offline";

/** One chart sample; `t` is logical time in milliseconds. */
export interface SeriesPoint {
  t: number;
  v: number;
}

export type Outcome = "pending" | "accepted" | "shaped" | "denied" | "failed";

/** One row of the append-only command history. */
export interface CommandRow {
  id: number;
  label: string;
  body: CommandBody;
  /** Interrupt payload the gateway acknowledged sending, once known. */
  payload: string | null;
  /** HTTP-level failure text, if the command never reached the run. */
  error: string | null;
  /** seq of the interrupt record that delivered this command. */
  interruptSeq: number | null;
  /** seq of the dispatch record that judged it. */
  outcomeSeq: number | null;
  outcome: Outcome;
  /** The shaper's denial reason, verbatim from the dispatch record. */
  reason: string | null;
}

export interface Toast {
  id: number;
  text: string;
}

/** Points retained per chart series. */
export const SERIES_CAPACITY = 720;
/** Records fetched when attaching to an already-long log (a rolling view). */
export const BACKFILL_LIMIT = 1500;

export interface ConsoleState {
  connection: Connection;
  /** Latest /state snapshot, verbatim. */
  view: StateView | null;
  lastDispatch: LogRecord | null;
  lastRequest: LogRecord | null;
  /** Milliseconds between consecutive pace records. */
  paceIntervals: Ring<SeriesPoint>;
  /** Dispatched (shaped) value per round. */
  emitted: Ring<SeriesPoint>;
  /** Millilitres delivered since the console attached (pump runs). */
  volume: Ring<SeriesPoint>;
  history: CommandRow[];
  toasts: Toast[];
  /** Next log seq this console expects. */
  cursor: number;
  nextCommandId: number;
  nextToastId: number;
  /** Volume integration scratch: last dispatch time (ms) and level. */
  integ: { t: number; level: number; ml: number } | null;
  /** Last pace instant (ms), for interval computation. */
  prevPaceMs: number | null;
}

export function initialState(): ConsoleState {
  return {
    connection: "connecting",
    view: null,
    lastDispatch: null,
    lastRequest: null,
    paceIntervals: new Ring(SERIES_CAPACITY),
    emitted: new Ring(SERIES_CAPACITY),
    volume: new Ring(SERIES_CAPACITY),
    history: [],
    toasts: [],
    cursor: 0,
    nextCommandId: 1,
    nextToastId: 1,
    integ: null,
    prevPaceMs: null,
  };
}

export function setConnection(s: ConsoleState, c: Connection): void {
  s.connection = c;
}

/** Record a fresh /state snapshot.  Detects a restarted gateway (the log
 * got shorter) and rebases: series restart, history stays (append-only). */
export function applySnapshot(s: ConsoleState, view: StateView): void {
  if (view.records < s.cursor) {
    resetDerived(s);
    s.cursor = 0;
  }
  s.view = view;
}

function resetDerived(s: ConsoleState): void {
  s.lastDispatch = null;
  s.lastRequest = null;
  s.paceIntervals.clear();
  s.emitted.clear();
  s.volume.clear();
  s.integ = null;
  s.prevPaceMs = null;
}

/** Where backfill should start, honouring the rolling-view limit. */
export function backfillStart(s: ConsoleState, totalRecords: number): number {
  if (s.cursor === 0 && totalRecords > BACKFILL_LIMIT) {
    return totalRecords - BACKFILL_LIMIT;
  }
  return s.cursor;
}

/** Milliseconds for a record's logical time under the current grain. */
function ltimeMs(s: ConsoleState, ltime: Rat): number | null {
  const t = ratNum(ltime);
  const grain = s.view === null ? null : ratNum(s.view.grain_ms);
  if (t === null || grain === null) return null;
  return t * grain;
}

/** Fold one log record into the state.  Records are deduplicated by seq so
 * a backfill overlapping the live stream applies each record once. */
export function applyRecord(s: ConsoleState, rec: LogRecord): void {
  if (rec.seq < s.cursor) return;
  s.cursor = rec.seq + 1;
  switch (rec.kind) {
    case "dispatch":
      s.lastDispatch = rec;
      foldDispatch(s, rec);
      judgePending(s, rec);
      break;
    case "request":
      s.lastRequest = rec;
      break;
    case "pace":
      foldPace(s, rec);
      break;
    case "interrupt":
      correlateInterrupt(s, rec);
      break;
    default:
      break; // round timings, device chatter: nothing to fold
  }
}

function foldDispatch(s: ConsoleState, rec: LogRecord): void {
  const t = ltimeMs(s, rec.ltime);
  const v = ratNum(rec.detail["emitted"] as Rat | null | undefined);
  if (t === null || v === null) return;
  s.emitted.push({ t, v });
  if (s.view !== null && s.view.machine === "pump") {
    const rate = ratNum(s.view.bolus_rate_ml_hr);
    if (rate === null) return;
    if (s.integ === null) {
      s.integ = { t, level: v, ml: 0 };
    } else {
      // close the previous constant segment: ml/hr over Δt ms
      s.integ.ml += (s.integ.level * rate * (t - s.integ.t)) / 3_600_000;
      s.integ.t = t;
      s.integ.level = v;
    }
    s.volume.push({ t, v: s.integ.ml });
  }
}

function foldPace(s: ConsoleState, rec: LogRecord): void {
  const t = ltimeMs(s, rec.ltime);
  if (t === null) return;
  if (s.prevPaceMs !== null) {
    s.paceIntervals.push({ t, v: t - s.prevPaceMs });
  }
  s.prevPaceMs = t;
}

/** Bind an interrupt record to the oldest command still awaiting one with
 * the same payload — each command correlates with exactly one interrupt. */
function correlateInterrupt(s: ConsoleState, rec: LogRecord): void {
  const payload = rec.detail["payload"];
  if (typeof payload !== "string") return;
  for (const row of s.history) {
    if (row.interruptSeq === null && row.error === null && row.payload === payload) {
      row.interruptSeq = rec.seq;
      return;
    }
  }
}

/** The first dispatch after a command's interrupt states its outcome. */
function judgePending(s: ConsoleState, rec: LogRecord): void {
  for (const row of s.history) {
    if (row.interruptSeq === null || row.outcomeSeq !== null) continue;
    if (rec.seq <= row.interruptSeq) continue;
    row.outcomeSeq = rec.seq;
    const denied = rec.detail["denied"] === true;
    if (denied) {
      row.outcome = "denied";
      const reason = rec.detail["reason"];
      row.reason = typeof reason === "string" ? reason : String(reason);
    } else if (
      ratEq(
        rec.detail["emitted"] as Rat | null | undefined,
        rec.detail["requested"] as Rat | null | undefined,
      )
    ) {
      row.outcome = "accepted";
    } else {
      row.outcome = "shaped"; // ramping toward the request, within rate limit
    }
  }
}

/** Append a history row for a command about to be posted. */
export function beginCommand(s: ConsoleState, body: CommandBody, label: string): CommandRow {
  const row: CommandRow = {
    id: s.nextCommandId++,
    label,
    body,
    payload: null,
    error: null,
    interruptSeq: null,
    outcomeSeq: null,
    outcome: "pending",
    reason: null,
  };
  s.history.push(row);
  return row;
}

/** The gateway acknowledged the command: remember the interrupt payload it
 * sent, so the matching interrupt record can be correlated. */
export function resolveCommand(s: ConsoleState, id: number, payload: string): void {
  const row = s.history.find((r) => r.id === id);
  if (row !== undefined) row.payload = payload;
}

/** The command never reached the run (HTTP error or unreachable gateway). */
export function failCommand(s: ConsoleState, id: number, error: string): void {
  const row = s.history.find((r) => r.id === id);
  if (row !== undefined) {
    row.error = error;
    row.outcome = "failed";
  }
}

export function addToast(s: ConsoleState, text: string): Toast {
  const toast = { id: s.nextToastId++, text };
  s.toasts.push(toast);
  return toast;
}

export function dismissToast(s: ConsoleState, id: number): void {
  s.toasts = s.toasts.filter((t) => t.id !== id);
}
