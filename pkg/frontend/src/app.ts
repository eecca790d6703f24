/** Controller: wires the gateway client, the state reducer, and the view.
 *
 * Commands follow a strict no-optimism rule: pressing a control posts the
 * command and appends a pending history row; the row's outcome is filled in
 * only by the log records that come back (interrupt, then the dispatch that
 * judged it).  The charts and panels likewise only ever re-render server
 * data. */

import { GatewayClient, type Transport } from "./gateway.js";
import {
  addToast,
  applyRecord,
  applySnapshot,
  backfillStart,
  beginCommand,
  dismissToast,
  failCommand,
  initialState,
  resolveCommand,
  setConnection,
  type ConsoleState,
} from "./state.js";
import type { CommandBody } from "./types.js";
import { mountView, type ConsoleView } from "./view.js";

export const RATE_MIN_BPM = 30;
export const RATE_MAX_BPM = 180;

export class ConsoleApp {
  readonly state: ConsoleState;
  readonly client: GatewayClient;
  private view: ConsoleView;

  constructor(root: HTMLElement, baseUrl: string, transport?: Partial<Transport>) {
    this.state = initialState();
    this.view = mountView(root, {
      onBolus: () => void this.pressBolus(),
      onBase: () => void this.pressBase(),
      onRate: (raw) => void this.requestRate(raw),
      onDismissToast: (id) => {
        dismissToast(this.state, id);
        this.render();
      },
    });
    this.client = new GatewayClient(
      baseUrl,
      {
        onConnection: (c) => {
          setConnection(this.state, c);
          this.render();
        },
        onSnapshot: (v) => {
          applySnapshot(this.state, v);
          this.render();
        },
        onRecord: (r) => {
          applyRecord(this.state, r);
          this.render();
        },
      },
      () => backfillStart(this.state, this.state.view?.records ?? 0),
      transport,
    );
    this.render();
  }

  start(): void {
    this.client.connect();
  }

  stop(): void {
    this.client.close();
  }

  pressBolus(): Promise<void> {
    return this.submit({ action: "bolus" }, "bolus");
  }

  pressBase(): Promise<void> {
    return this.submit({ action: "base" }, "base");
  }

  /** Client-side bound: only plausible whole-number rates leave the console. */
  requestRate(raw: string | number): Promise<void> {
    const bpm = typeof raw === "number" ? raw : Number(raw.trim());
    if (!Number.isInteger(bpm) || bpm < RATE_MIN_BPM || bpm > RATE_MAX_BPM) {
      addToast(
        this.state,
        `rate must be a whole number between ${RATE_MIN_BPM} and ${RATE_MAX_BPM} bpm`,
      );
      this.render();
      return Promise.resolve();
    }
    return this.submit({ action: "set-rate", bpm }, `rate ${bpm} bpm`);
  }

  private async submit(body: CommandBody, label: string): Promise<void> {
    const row = beginCommand(this.state, body, label);
    this.render();
    const res = await this.client.command(body);
    if (res.ok) {
      resolveCommand(this.state, row.id, res.payload);
    } else {
      failCommand(this.state, row.id, res.error);
      if (res.status === 409) addToast(this.state, "no active run");
    }
    this.render();
  }

  private render(): void {
    this.view.update(this.state);
  }
}

export function mountConsole(
  root: HTMLElement,
  baseUrl = "",
  transport?: Partial<Transport>,
): ConsoleApp {
  const app = new ConsoleApp(root, baseUrl, transport);
  app.start();
  return app;
}
