/** DOM layer: builds the console skeleton once, then projects ConsoleState
 * onto it.  Every displayed value is the wire value verbatim (via ratText);
 * chart paths come from the record-fed series and nothing else. */

import { bounds, linePath, stepPath, type Box } from "./charts.js";
import { ratText } from "./rat.js";
import type { CommandRow, ConsoleState, Toast } from "./state.js";
import type { Rat } from "./types.js";

export interface ViewHandlers {
  onBolus(): void;
  onBase(): void;
  onRate(raw: string): void;
  onDismissToast(id: number): void;
}

const SVG_NS = "http://www.w3.org/2000/svg";
const CHART_BOX: Box = { w: 640, h: 120, pad: 8 };

interface ChartEls {
  section: HTMLElement;
  path: SVGPathElement;
  caption: HTMLElement;
}

export interface ConsoleView {
  update(s: ConsoleState): void;
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [k, v] of Object.entries(attrs)) node.setAttribute(k, v);
  if (text !== undefined) node.textContent = text;
  return node;
}

function chart(title: string, testId: string, kind: "step" | "line"): ChartEls {
  const section = el("div", { class: "chart", "data-kind": kind });
  section.appendChild(el("h3", {}, title));
  const svg = document.createElementNS(SVG_NS, "svg");
  svg.setAttribute("viewBox", `0 0 ${CHART_BOX.w} ${CHART_BOX.h}`);
  svg.setAttribute("preserveAspectRatio", "none");
  svg.setAttribute("data-testid", testId);
  const path = document.createElementNS(SVG_NS, "path");
  path.setAttribute("fill", "none");
  svg.appendChild(path);
  section.appendChild(svg);
  const caption = el("div", { class: "caption" }, "waiting for records");
  section.appendChild(caption);
  return { section, path, caption };
}

function dlRow(dl: HTMLElement, label: string, testId: string): HTMLElement {
  dl.appendChild(el("dt", {}, label));
  const dd = el("dd", { "data-testid": testId }, "—");
  dl.appendChild(dd);
  return dd;
}

export function mountView(root: HTMLElement, handlers: ViewHandlers): ConsoleView {
  root.textContent = "";
  const wrap = el("div", { class: "console" });

  // header ------------------------------------------------------------------
  const header = el("header");
  const title = el("h1", {}, "operator console");
  const scenarioTag = el("span", { class: "tag", "data-testid": "scenario" }, "—");
  const conn = el("span", { class: "badge", "data-testid": "conn" }, "connecting");
  header.append(title, scenarioTag, conn);
  wrap.appendChild(header);

  const banner = el(
    "div",
    { class: "banner", "data-testid": "banner", hidden: "" },
    "gateway unreachable — retrying",
  );
  wrap.appendChild(banner);

  const main = el("main");
  wrap.appendChild(main);

  // shaper snapshot -----------------------------------------------------------
  const snapPanel = el("section", { class: "panel" });
  snapPanel.appendChild(el("h2", {}, "shaper"));
  const snapDl = el("dl");
  const valueEl = dlRow(snapDl, "value", "value");
  const requestedEl = dlRow(snapDl, "requested", "requested");
  const flagsEl = dlRow(snapDl, "state", "flags");
  snapPanel.appendChild(snapDl);
  main.appendChild(snapPanel);

  // budgets -------------------------------------------------------------------
  const budgetPanel = el("section", { class: "panel" });
  budgetPanel.appendChild(el("h2", {}, "budgets"));
  const budgetDl = el("dl");
  const stressEl = dlRow(budgetDl, "stress used", "stress-used");
  const gapEl = dlRow(budgetDl, "gap since run", "gap");
  const windowEl = dlRow(budgetDl, "runs in window", "window");
  const safeEl = dlRow(budgetDl, "safe value", "safe");
  budgetPanel.appendChild(budgetDl);
  main.appendChild(budgetPanel);

  // controls --------------------------------------------------------------------
  const controls = el("section", { class: "panel controls" });
  controls.appendChild(el("h2", {}, "commands"));
  const bolusBtn = el("button", { "data-testid": "bolus" }, "bolus");
  const baseBtn = el("button", { "data-testid": "base" }, "base");
  const rateInput = el("input", {
    "data-testid": "rate-input",
    type: "number",
    min: "30",
    max: "180",
    step: "1",
    placeholder: "bpm",
  });
  const rateBtn = el("button", { "data-testid": "rate-send" }, "set rate");
  const rateHint = el("div", { class: "hint", "data-testid": "rate-hint" }, "30–180 bpm");
  bolusBtn.addEventListener("click", () => handlers.onBolus());
  baseBtn.addEventListener("click", () => handlers.onBase());
  rateBtn.addEventListener("click", () => handlers.onRate(rateInput.value));
  const rateLabel = el("label", {}, "rate ");
  rateLabel.append(rateInput);
  controls.append(bolusBtn, baseBtn, rateLabel, rateBtn, rateHint);
  main.appendChild(controls);

  // charts -------------------------------------------------------------------
  const chartsPanel = el("section", { class: "panel charts" });
  chartsPanel.appendChild(el("h2", {}, "live series"));
  const paceChart = chart("pace interval (ms)", "pace-chart", "line");
  const emittedChart = chart("dispatched value", "emitted-chart", "step");
  const volumeChart = chart("volume delivered (ml, observed)", "volume-chart", "line");
  chartsPanel.append(paceChart.section, emittedChart.section, volumeChart.section);
  main.appendChild(chartsPanel);

  // history --------------------------------------------------------------------
  const historyPanel = el("section", { class: "panel history" });
  historyPanel.appendChild(el("h2", {}, "command history"));
  const table = el("table", { "data-testid": "history" });
  const thead = el("thead");
  const headRow = el("tr");
  for (const h of ["#", "command", "sent as", "outcome", "reason"]) {
    headRow.appendChild(el("th", {}, h));
  }
  thead.appendChild(headRow);
  const tbody = el("tbody");
  table.append(thead, tbody);
  historyPanel.appendChild(table);
  main.appendChild(historyPanel);

  const toasts = el("div", { class: "toasts", "data-testid": "toasts" });
  wrap.appendChild(toasts);

  root.appendChild(wrap);

  // projection -------------------------------------------------------------

  function updateChart(c: ChartEls, s: ConsoleState, key: "paceIntervals" | "emitted" | "volume"): void {
    const points = s[key].toArray();
    const kind = c.section.getAttribute("data-kind");
    const d = kind === "step" ? stepPath(points, CHART_BOX) : linePath(points, CHART_BOX);
    c.path.setAttribute("d", d);
    const b = bounds(points);
    if (b === null || points.length < 2) {
      c.caption.textContent = "waiting for records";
    } else {
      const lo = Math.round(b.vMin * 1000) / 1000;
      const hi = Math.round(b.vMax * 1000) / 1000;
      c.caption.textContent = `${points.length} samples, ${lo} … ${hi}`;
    }
  }

  function historyRow(row: CommandRow): HTMLElement {
    const tr = el("tr", { "data-cmd-id": String(row.id) });
    tr.appendChild(el("td", {}, String(row.id)));
    tr.appendChild(el("td", {}, row.label));
    tr.appendChild(el("td", {}, row.payload ?? row.error ?? "…"));
    const outcome = el(
      "td",
      { "data-testid": `outcome-${row.id}`, class: `outcome outcome-${row.outcome}` },
      row.outcome,
    );
    tr.appendChild(outcome);
    tr.appendChild(
      el("td", { "data-testid": `reason-${row.id}` }, row.reason ?? (row.error ?? "")),
    );
    return tr;
  }

  function toastNode(t: Toast): HTMLElement {
    const node = el("div", { class: "toast", "data-testid": "toast" });
    node.appendChild(el("span", {}, t.text));
    const dismiss = el("button", { class: "dismiss" }, "×");
    dismiss.addEventListener("click", () => handlers.onDismissToast(t.id));
    node.appendChild(dismiss);
    return node;
  }

  function update(s: ConsoleState): void {
    conn.textContent = s.connection;
    conn.className = `badge conn-${s.connection}`;
    banner.hidden = s.connection !== "offline";

    const live = s.connection === "live";
    bolusBtn.disabled = !live;
    baseBtn.disabled = !live;
    rateBtn.disabled = !live;
    rateInput.disabled = !live;

    const v = s.view;
    if (v !== null) {
      scenarioTag.textContent =
        `${v.scenario} · ${v.machine} · ${v.mode} · grain ${ratText(v.grain_ms)} ms` +
        (v.active ? "" : " · run ended");
      valueEl.textContent = ratText(
        s.lastDispatch !== null
          ? (s.lastDispatch.detail["emitted"] as Rat | null)
          : v.value,
      );
      requestedEl.textContent = ratText(
        s.lastRequest !== null
          ? (s.lastRequest.detail["value"] as Rat | null)
          : v.requested,
      );
      const flags: string[] = [];
      if (v.stressful) flags.push("stressful");
      if (v.denied) flags.push(`denied (${v.denial_reason ?? "?"})`);
      flagsEl.textContent = flags.length > 0 ? flags.join(", ") : "nominal";
      const b = v.budgets;
      stressEl.textContent = `${ratText(b.stress_used)} / ${ratText(b.max_stress_duration)}`;
      gapEl.textContent = `${ratText(b.gap_since_last_run)} (min ${ratText(b.min_relax_gap)})`;
      windowEl.textContent =
        `${b.runs_in_window} / ${b.max_stress_count} per ${ratText(b.count_window)}`;
      safeEl.textContent = ratText(b.safe_value);
    }

    updateChart(paceChart, s, "paceIntervals");
    updateChart(emittedChart, s, "emitted");
    updateChart(volumeChart, s, "volume");
    paceChart.section.hidden = v !== null && v.machine !== "pacemaker";
    volumeChart.section.hidden = v !== null && v.machine !== "pump";

    tbody.textContent = "";
    for (const row of s.history) tbody.appendChild(historyRow(row));

    toasts.textContent = "";
    for (const t of s.toasts) toasts.appendChild(toastNode(t));
  }

  return { update };
}
