/** Gateway client: one WebSocket for the record stream, plain fetches for
 * state, backfill, and commands, and an exponential-backoff reconnect loop.
 *
 * Connect sequence (no record can fall through the gap):
 *   1. GET /state                      -> snapshot
 *   2. open WS /events, buffer frames  -> nothing lost from here on
 *   3. GET /log?since=<cursor>         -> history up to the fetch instant
 *   4. flush buffered frames           -> duplicates removed by seq cursor
 * After that frames stream straight through, and /state is re-polled on a
 * slow cadence to keep the budget panel fresh.
 */

import type { Connection } from "./state.js";
import type { CommandBody, LogPage, LogRecord, StateView } from "./types.js";

export const BACKOFF_START_MS = 250;
/** Capped so a restarted gateway is picked back up within ~2 s. */
export const BACKOFF_CAP_MS = 2000;
export const STATE_POLL_MS = 1000;

export interface WebSocketLike {
  onopen: (() => void) | null;
  onmessage: ((ev: { data: string }) => void) | null;
  onclose: (() => void) | null;
  onerror: (() => void) | null;
  close(): void;
}

export interface Transport {
  fetchFn: (url: string, init?: RequestInit) => Promise<Response>;
  wsFactory: (url: string) => WebSocketLike;
  setTimer: (fn: () => void, ms: number) => unknown;
  clearTimer: (id: unknown) => void;
}

export interface GatewayEvents {
  onConnection(c: Connection): void;
  onSnapshot(view: StateView): void;
  onRecord(rec: LogRecord): void;
}

export type CommandResult =
  | { ok: true; payload: string }
  | { ok: false; status: number; error: string };

/** The /events endpoint for an HTTP base URL ("" means same origin). */
export function wsUrl(baseUrl: string, origin?: string): string {
  const base =
    baseUrl !== ""
      ? baseUrl
      : origin ?? (typeof location !== "undefined" ? location.origin : "");
  return base.replace(/^http/, "ws") + "/events";
}

function defaultTransport(): Transport {
  return {
    fetchFn: (url, init) => fetch(url, init),
    wsFactory: (url) => new WebSocket(url) as unknown as WebSocketLike,
    setTimer: (fn, ms) => setTimeout(fn, ms),
    clearTimer: (id) => clearTimeout(id as Parameters<typeof clearTimeout>[0]),
  };
}

export class GatewayClient {
  private t: Transport;
  private ws: WebSocketLike | null = null;
  private backoffMs = BACKOFF_START_MS;
  private retryTimer: unknown = null;
  private pollTimer: unknown = null;
  private closed = false;
  /** Bumped on every (re)connect and on close; stale async work checks it. */
  private epoch = 0;

  constructor(
    private baseUrl: string,
    private events: GatewayEvents,
    /** Where /log backfill should start (the console's record cursor). */
    private sinceProvider: () => number,
    transport?: Partial<Transport>,
  ) {
    this.t = { ...defaultTransport(), ...transport };
  }

  connect(): void {
    this.closed = false;
    void this.attempt();
  }

  close(): void {
    this.closed = true;
    this.epoch++;
    this.clearTimers();
    this.dropSocket();
  }

  async command(body: CommandBody): Promise<CommandResult> {
    try {
      const res = await this.t.fetchFn(this.baseUrl + "/command", {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify(body),
      });
      let data: Record<string, unknown> = {};
      try {
        data = (await res.json()) as Record<string, unknown>;
      } catch {
        // non-JSON error body: fall through to the status code
      }
      if (res.ok) return { ok: true, payload: String(data["sent"] ?? "") };
      return {
        ok: false,
        status: res.status,
        error: String(data["error"] ?? `HTTP ${res.status}`),
      };
    } catch (err) {
      return { ok: false, status: 0, error: String(err) };
    }
  }

  private async attempt(): Promise<void> {
    const epoch = ++this.epoch;
    this.clearTimers();
    this.dropSocket();

    let view: StateView;
    try {
      view = await this.getJson<StateView>("/state");
    } catch {
      this.lost(epoch);
      return;
    }
    if (epoch !== this.epoch || this.closed) return;
    this.events.onSnapshot(view);

    const buffered: LogRecord[] = [];
    let streaming = false;
    const ws = this.t.wsFactory(wsUrl(this.baseUrl));
    this.ws = ws;
    ws.onmessage = (ev) => {
      const rec = JSON.parse(ev.data) as LogRecord;
      if (streaming) this.events.onRecord(rec);
      else buffered.push(rec);
    };
    const drop = () => {
      if (this.ws === ws) this.lost(epoch);
    };
    ws.onclose = drop;
    ws.onerror = drop;
    ws.onopen = () => {
      void (async () => {
        try {
          const page = await this.getJson<LogPage>(
            `/log?since=${this.sinceProvider()}`,
          );
          if (epoch !== this.epoch || this.closed) return;
          for (const rec of page.records) this.events.onRecord(rec);
          for (const rec of buffered) this.events.onRecord(rec);
          buffered.length = 0;
          streaming = true;
          this.backoffMs = BACKOFF_START_MS;
          this.events.onConnection("live");
          this.schedulePoll(epoch);
        } catch {
          this.lost(epoch);
        }
      })();
    };
  }

  /** Connection lost (or never made): go offline and schedule a retry. */
  private lost(epoch: number): void {
    if (epoch !== this.epoch || this.closed) return;
    this.epoch++;
    this.clearTimers();
    this.dropSocket();
    this.events.onConnection("offline");
    this.retryTimer = this.t.setTimer(() => void this.attempt(), this.backoffMs);
    this.backoffMs = Math.min(this.backoffMs * 2, BACKOFF_CAP_MS);
  }

  /** Slow /state poll to keep budget usage fresh while records stream. */
  private schedulePoll(epoch: number): void {
    this.pollTimer = this.t.setTimer(() => {
      void (async () => {
        if (epoch !== this.epoch || this.closed) return;
        try {
          const view = await this.getJson<StateView>("/state");
          if (epoch !== this.epoch || this.closed) return;
          this.events.onSnapshot(view);
        } catch {
          // transient: the socket decides when we are offline
        }
        if (epoch === this.epoch && !this.closed) this.schedulePoll(epoch);
      })();
    }, STATE_POLL_MS);
  }

  private async getJson<T>(path: string): Promise<T> {
    const res = await this.t.fetchFn(this.baseUrl + path);
    if (!res.ok) throw new Error(`HTTP ${res.status} for ${path}`);
    return (await res.json()) as T;
  }

  private clearTimers(): void {
    if (this.retryTimer !== null) {
      this.t.clearTimer(this.retryTimer);
      this.retryTimer = null;
    }
    if (this.pollTimer !== null) {
      this.t.clearTimer(this.pollTimer);
      this.pollTimer = null;
    }
  }

  private dropSocket(): void {
    const ws = this.ws;
    if (ws === null) return;
    this.ws = null;
    ws.onopen = null;
    ws.onmessage = null;
    ws.onclose = null;
    ws.onerror = null;
    ws.close();
  }
}
