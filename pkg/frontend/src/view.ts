/** DOM rendering for the trainer console. Pure functions from state to
 * elements; every displayed value comes from a server response field. */

import { MetricsResponse, SceneSummary, ScoreReport } from "./api.js";
import { ChatMessage, METRICS_COLUMNS, TrainerState, composerEnabled } from "./state.js";

export interface Handlers {
  onSelectScene(sceneId: string): void;
  onComposerInput(text: string): void;
  onSend(): void;
  onRetry(): void;
  onHint(): void;
  onQuit(): void;
  onTrainerModeToggle(on: boolean): void;
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) {
    node.setAttribute(key, value);
  }
  if (text !== undefined) {
    node.textContent = text;
  }
  return node;
}

export function renderSceneList(
  scenes: SceneSummary[],
  error: string | null,
  handlers: Handlers,
): HTMLElement {
  const root = el("section", { "data-testid": "scene-list" });
  root.appendChild(el("h2", {}, "Choose a practice scene"));
  if (error) {
    const banner = el("div", { "data-testid": "scene-error", class: "banner error" }, error);
    root.appendChild(banner);
  }
  const list = el("ul");
  for (const scene of scenes) {
    const item = el("li");
    const button = el(
      "button",
      { "data-testid": `scene-${scene.scene_id}` },
      `${scene.scene_id} (${scene.num_scripts} scripts)`,
    );
    button.addEventListener("click", () => handlers.onSelectScene(scene.scene_id));
    item.appendChild(button);
    list.appendChild(item);
  }
  root.appendChild(list);
  return root;
}

function renderMessage(message: ChatMessage, trainerMode: boolean): HTMLElement {
  const row = el("div", {
    class: `message ${message.speaker}`,
    "data-testid": `message-${message.speaker}`,
  });
  row.appendChild(el("span", { class: "text" }, message.text));
  if (trainerMode && message.speaker === "bot" && message.tag) {
    row.appendChild(el("span", { class: "badge", "data-testid": "path-badge" }, message.tag));
  }
  if (message.optimistic) {
    row.setAttribute("data-optimistic", "true");
  }
  return row;
}

export function renderChat(state: TrainerState, handlers: Handlers): HTMLElement {
  const root = el("section", { "data-testid": "chat" });

  const toggle = el("label", { class: "trainer-toggle" });
  const checkbox = el("input", { type: "checkbox", "data-testid": "trainer-mode" });
  (checkbox as HTMLInputElement).checked = state.trainerMode;
  checkbox.addEventListener("change", () =>
    handlers.onTrainerModeToggle((checkbox as HTMLInputElement).checked),
  );
  toggle.appendChild(checkbox);
  toggle.appendChild(el("span", {}, "trainer mode"));
  root.appendChild(toggle);

  const messages = el("div", { "data-testid": "messages", class: "messages" });
  for (const message of state.messages) {
    messages.appendChild(renderMessage(message, state.trainerMode));
  }
  root.appendChild(messages);

  if (state.pending) {
    root.appendChild(el("div", { "data-testid": "spinner", class: "spinner" }, "…"));
  }
  if (state.error) {
    const banner = el("div", { "data-testid": "send-error", class: "banner error" });
    banner.appendChild(el("span", {}, state.error));
    if (state.retryText) {
      const retry = el("button", { "data-testid": "retry" }, "Retry");
      retry.addEventListener("click", () => handlers.onRetry());
      banner.appendChild(retry);
    }
    root.appendChild(banner);
  }
  if (state.hint) {
    const panel = el("div", { "data-testid": "hint-panel", class: "hint" });
    panel.appendChild(el("p", {}, state.hint.hint));
    if (state.hint.revealed && state.hint.full_text) {
      const details = el("details");
      details.appendChild(el("summary", {}, "Show the full expected reply"));
      details.appendChild(el("p", { "data-testid": "hint-full" }, state.hint.full_text));
      panel.appendChild(details);
    }
    root.appendChild(panel);
  }
  if (state.phase === "completed") {
    root.appendChild(
      el("div", { "data-testid": "completion-banner", class: "banner done" }, "Session completed"),
    );
  }

  const enabled = composerEnabled(state);
  const composer = el("div", { class: "composer" });
  const input = el("input", {
    type: "text",
    "data-testid": "composer",
    placeholder: "Reply to the customer…",
  }) as HTMLInputElement;
  input.value = state.composer;
  input.disabled = !enabled;
  input.addEventListener("input", () => handlers.onComposerInput(input.value));
  input.addEventListener("keydown", (event) => {
    if ((event as KeyboardEvent).key === "Enter") {
      handlers.onSend();
    }
  });
  const send = el("button", { "data-testid": "send" }, "Send") as HTMLButtonElement;
  send.disabled = !enabled;
  send.addEventListener("click", () => handlers.onSend());
  const hint = el("button", { "data-testid": "hint" }, "Hint") as HTMLButtonElement;
  hint.disabled = !enabled;
  hint.addEventListener("click", () => handlers.onHint());
  const quit = el("button", { "data-testid": "quit" }, "End session") as HTMLButtonElement;
  quit.disabled = state.phase !== "active";
  quit.addEventListener("click", () => handlers.onQuit());
  composer.append(input, send, hint, quit);
  root.appendChild(composer);

  if (state.score) {
    root.appendChild(renderScorePanel(state.score, state.trainerMode));
  }
  return root;
}

export function renderScorePanel(score: ScoreReport, trainerMode: boolean): HTMLElement {
  const root = el("section", { "data-testid": "score-panel" });
  root.appendChild(el("h3", {}, "Session score"));
  const dl = el("dl");
  const rows: Array<[string, string, string]> = [
    ["fluency", "Fluency", score.fluency.toFixed(2)],
    ["consistency", "Consistency", score.consistency.toFixed(2)],
    ["compliance", "Compliance", String(score.compliance)],
    ["final", "Final", score.final.toFixed(2)],
  ];
  for (const [key, label, value] of rows) {
    dl.appendChild(el("dt", {}, label));
    dl.appendChild(el("dd", { "data-testid": `score-${key}` }, value));
  }
  root.appendChild(dl);

  const reasons = el("ul", { "data-testid": "reasons" });
  for (const reason of score.reasons) {
    reasons.appendChild(el("li", {}, reason));
  }
  root.appendChild(reasons);

  if (trainerMode) {
    const details = el("details", { "data-testid": "per-turn" });
    details.appendChild(el("summary", {}, "Per-turn detail"));
    const table = el("table");
    for (const turn of score.per_turn) {
      const tr = el("tr");
      tr.appendChild(el("td", {}, String(turn.turn_index)));
      tr.appendChild(el("td", {}, turn.fluency_turn.toFixed(2)));
      tr.appendChild(el("td", {}, turn.matched ? "matched" : "missed"));
      tr.appendChild(el("td", {}, turn.violations.join(", ")));
      table.appendChild(tr);
    }
    details.appendChild(table);
    root.appendChild(details);
  }
  return root;
}

/** Metrics table in the fixed column order; values rendered unmodified. */
export function renderMetricsDashboard(
  metrics: MetricsResponse | null,
  error: string | null,
): HTMLElement {
  const root = el("section", { "data-testid": "dashboard" });
  root.appendChild(el("h2", {}, "Training metrics"));
  if (error) {
    root.appendChild(el("div", { "data-testid": "metrics-error", class: "banner error" }, error));
    return root;
  }
  if (!metrics || metrics.num_sessions === 0) {
    root.appendChild(el("p", { "data-testid": "metrics-empty" }, "No sessions yet"));
    return root;
  }
  const table = el("table", { "data-testid": "metrics-table" });
  const head = el("tr");
  for (const [, label] of METRICS_COLUMNS) {
    head.appendChild(el("th", {}, label));
  }
  table.appendChild(head);
  const row = el("tr");
  for (const [key] of METRICS_COLUMNS) {
    row.appendChild(el("td", { "data-testid": `metric-${key}` }, String(metrics[key])));
  }
  table.appendChild(row);
  root.appendChild(table);
  root.appendChild(
    el("p", { "data-testid": "metrics-count" }, `${metrics.num_sessions} sessions`),
  );
  return root;
}
