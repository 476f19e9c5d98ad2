/** View-state store for the trainer console.
 *
 * One active session per tab, one in-flight request at a time. Every message,
 * score, and metric in the state is a copy of a server response field; the
 * only locally invented thing is the optimistic echo of the trainee's own
 * message, which the server's reply confirms.
 */

import {
  ApiError,
  HintResponse,
  MetricsResponse,
  SceneSummary,
  ScoreReport,
  TrainerApi,
} from "./api.js";

export type ChatPhase = "idle" | "active" | "completed" | "abandoned";

export interface ChatMessage {
  speaker: "bot" | "trainee";
  text: string;
  /** bot turns: scripted | fallback | hint, straight from the server */
  tag: string | null;
  /** true while the trainee turn has not been confirmed by a reply */
  optimistic?: boolean;
}

export interface TrainerState {
  scenes: SceneSummary[];
  sceneError: string | null;
  sceneId: string | null;
  sessionId: string | null;
  messages: ChatMessage[];
  composer: string;
  pending: boolean;
  phase: ChatPhase;
  hint: HintResponse | null;
  error: string | null;
  /** set when a send failed and may be retried with the same token */
  retryText: string | null;
  lastToken: string | null;
  score: ScoreReport | null;
  trainerMode: boolean;
  metrics: MetricsResponse | null;
  metricsError: string | null;
}

export function initialState(): TrainerState {
  return {
    scenes: [],
    sceneError: null,
    sceneId: null,
    sessionId: null,
    messages: [],
    composer: "",
    pending: false,
    phase: "idle",
    hint: null,
    error: null,
    retryText: null,
    lastToken: null,
    score: null,
    trainerMode: false,
    metrics: null,
    metricsError: null,
  };
}

/** The composer is usable exactly when nothing is in flight and the session is live. */
export function composerEnabled(state: TrainerState): boolean {
  return state.phase === "active" && !state.pending;
}

export const METRICS_COLUMNS: ReadonlyArray<readonly [keyof MetricsResponse, string]> = [
  ["waiting_time_avg", "Waiting Time (secs)"],
  ["avg_duration", "Average Durations (mins)"],
  ["avg_rounds", "Average Rounds"],
  ["completion_rate", "Completion Rate (%)"],
] as const;

function defaultTokenFactory(): string {
  const rand = Math.random().toString(36).slice(2);
  return `tok-${Date.now().toString(36)}-${rand}`;
}

export class TrainerStore {
  state: TrainerState = initialState();
  private listeners = new Set<(state: TrainerState) => void>();

  constructor(
    private api: TrainerApi,
    private makeToken: () => string = defaultTokenFactory,
  ) {}

  subscribe(listener: (state: TrainerState) => void): () => void {
    this.listeners.add(listener);
    return () => this.listeners.delete(listener);
  }

  private notify(): void {
    for (const listener of this.listeners) {
      listener(this.state);
    }
  }

  private patch(partial: Partial<TrainerState>): void {
    this.state = { ...this.state, ...partial };
    this.notify();
  }

  async loadScenes(): Promise<void> {
    try {
      const body = await this.api.scenes();
      this.patch({ scenes: body.scenes, sceneError: null });
    } catch (err) {
      this.patch({ sceneError: describe(err) });
    }
  }

  /** Create a session; on failure show a retryable banner and stay on the list. */
  async startTraining(sceneId: string): Promise<void> {
    this.patch({ sceneError: null });
    try {
      const created = await this.api.createSession(sceneId);
      this.patch({
        sceneId,
        sessionId: created.session_id,
        messages: [{ speaker: "bot", text: created.opening_utterance, tag: "scripted" }],
        phase: "active",
        pending: false,
        hint: null,
        error: null,
        retryText: null,
        lastToken: null,
        score: null,
      });
    } catch (err) {
      this.patch({ sceneError: describe(err), sessionId: null, phase: "idle" });
    }
  }

  /** Restore an existing session's transcript from the server, in server order. */
  async resumeSession(sessionId: string): Promise<void> {
    const body = await this.api.transcript(sessionId);
    const phase: ChatPhase =
      body.phase === "await_agent" ? "active" : body.phase === "completed" ? "completed" : "abandoned";
    this.patch({
      sessionId,
      messages: body.transcript.map((entry) => ({
        speaker: entry.speaker === "bot" ? "bot" : "trainee",
        text: entry.text,
        tag: entry.tag,
      })),
      phase,
      pending: false,
      error: null,
      retryText: null,
      lastToken: null,
    });
    if (phase !== "active") {
      await this.fetchScore();
    }
  }

  setComposer(text: string): void {
    this.patch({ composer: text });
  }

  setTrainerMode(on: boolean): void {
    this.patch({ trainerMode: on });
  }

  /** Send the composer text. A second call while pending is a no-op, so a
   * double-click produces exactly one trainee turn. */
  async sendMessage(): Promise<void> {
    const text = this.state.composer.trim();
    if (!composerEnabled(this.state) || !text || !this.state.sessionId) {
      return;
    }
    const token = this.makeToken();
    this.patch({
      messages: [...this.state.messages, { speaker: "trainee", text, tag: null, optimistic: true }],
      composer: "",
      pending: true,
      error: null,
      retryText: null,
      lastToken: token,
    });
    await this.deliver(text, token);
  }

  /** Re-send a failed message with the same idempotency token. */
  async retrySend(): Promise<void> {
    const text = this.state.retryText;
    const token = this.state.lastToken;
    if (!text || !token || this.state.pending) {
      return;
    }
    this.patch({ pending: true, error: null, retryText: null });
    await this.deliver(text, token);
  }

  private async deliver(text: string, token: string): Promise<void> {
    const sessionId = this.state.sessionId;
    if (!sessionId) {
      return;
    }
    try {
      const reply = await this.api.sendMessage(sessionId, text, token);
      const messages = this.state.messages.map((m) =>
        m.optimistic ? { speaker: m.speaker, text: m.text, tag: m.tag } : m,
      );
      messages.push({ speaker: "bot", text: reply.bot_utterance, tag: reply.path });
      this.patch({ messages, pending: false, lastToken: null, hint: null });
      if (reply.completed) {
        this.patch({ phase: "completed" });
        await this.closeAndScore("completed");
      }
    } catch (err) {
      // keep the optimistic turn and the token: the retry replays, never duplicates
      this.patch({ pending: false, error: describe(err), retryText: text });
    }
  }

  async requestHint(): Promise<void> {
    if (!this.state.sessionId || !composerEnabled(this.state)) {
      return;
    }
    this.patch({ pending: true });
    try {
      const hint = await this.api.requestHint(this.state.sessionId);
      this.patch({
        hint,
        pending: false,
        // the server records the hint as a bot turn; mirror it
        messages: [...this.state.messages, { speaker: "bot", text: hint.hint, tag: "hint" }],
      });
    } catch (err) {
      this.patch({ pending: false, error: describe(err) });
    }
  }

  async quitSession(): Promise<void> {
    if (!this.state.sessionId || this.state.phase !== "active") {
      return;
    }
    this.patch({ phase: "abandoned" });
    await this.closeAndScore("trainee_quit");
  }

  private async closeAndScore(reason: string): Promise<void> {
    if (!this.state.sessionId) {
      return;
    }
    try {
      await this.api.closeSession(this.state.sessionId, reason);
      await this.fetchScore();
    } catch (err) {
      this.patch({ error: describe(err) });
    }
  }

  private async fetchScore(): Promise<void> {
    if (!this.state.sessionId) {
      return;
    }
    try {
      const score = await this.api.score(this.state.sessionId);
      this.patch({ score });
    } catch (err) {
      this.patch({ error: describe(err) });
    }
  }

  async loadMetrics(): Promise<void> {
    try {
      const metrics = await this.api.metrics();
      this.patch({ metrics, metricsError: null });
    } catch (err) {
      this.patch({ metricsError: describe(err) });
    }
  }
}

function describe(err: unknown): string {
  if (err instanceof ApiError) {
    return `${err.code}: ${err.message}`;
  }
  return err instanceof Error ? err.message : String(err);
}
