/** Wire shapes served by the run gateway (GET /state, GET /log, WS /events,
 * POST /command).  The console renders these verbatim; it never recomputes
 * what the server has already stated. */

/** An exact rational as it appears on the wire: an integer when integral,
 * otherwise a string such as "600/7" or "3.015". */
export type Rat = number | string;

/** One event-log record.  `ltime` is logical time in grain units. */
export interface LogRecord {
  seq: number;
  ltime: Rat;
  wall_ms: Rat | null;
  kind: string;
  detail: Record<string, unknown>;
}

export interface LogPage {
  records: LogRecord[];
  next: number;
}

export interface Budgets {
  max_stress_duration: Rat;
  stress_used: Rat;
  min_relax_gap: Rat;
  gap_since_last_run: Rat | null;
  max_stress_count: number;
  runs_in_window: number;
  count_window: Rat;
  safe_value: Rat;
}

/** GET /state: shaper state and budget usage derived from the run's log. */
export interface StateView {
  scenario: string;
  machine: string;
  mode: string;
  grain_ms: Rat;
  bolus_rate_ml_hr: Rat;
  ltime: Rat;
  records: number;
  active: boolean;
  value: Rat | null;
  requested: Rat | null;
  request_accepted: boolean | null;
  stressful: boolean;
  denied: boolean;
  denial_reason: string | null;
  budgets: Budgets;
}

/** POST /command request bodies the gateway accepts. */
export type CommandBody =
  | { action: "bolus" }
  | { action: "base" }
  | { action: "set-rate"; bpm: number };
