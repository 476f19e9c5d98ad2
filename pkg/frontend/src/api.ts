/** Typed client for the trainer service HTTP API.
 *
 * Every type mirrors a server response field-for-field; the UI renders these
 * objects directly and never derives state the server did not send.
 */

export interface SceneSummary {
  scene_id: string;
  num_scripts: number;
}

export interface CreateSessionResponse {
  session_id: string;
  opening_utterance: string;
}

export interface MessageResponse {
  bot_utterance: string;
  path: string;
  completed: boolean;
}

export interface HintResponse {
  hint: string;
  revealed: boolean;
  full_text: string | null;
}

export interface CloseResponse {
  session_id: string;
  completed: boolean;
  phase: string;
}

export interface PerTurnDetail {
  turn_index: number;
  fluency_turn: number;
  matched: boolean;
  violations: string[];
  expected_text: string | null;
}

export interface ScoreReport {
  session_id: string;
  fluency: number;
  consistency: number;
  compliance: number;
  final: number;
  reasons: string[];
  per_turn: PerTurnDetail[];
}

export interface TranscriptEntry {
  speaker: string;
  text: string;
  tag: string | null;
}

export interface TranscriptResponse {
  session_id: string;
  phase: string;
  transcript: TranscriptEntry[];
}

export interface MetricsResponse {
  num_sessions: number;
  waiting_time_avg: number | null;
  avg_duration: number | null;
  avg_rounds: number | null;
  completion_rate: number | null;
}

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class TrainerApi {
  constructor(
    private baseUrl: string,
    private fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const init: RequestInit = { method, headers: { "content-type": "application/json" } };
    if (body !== undefined) {
      init.body = JSON.stringify(body);
    }
    const response = await this.fetchFn(`${this.baseUrl}${path}`, init);
    const payload = await response.json().catch(() => ({}));
    if (!response.ok) {
      const detail = payload as { code?: string; message?: string };
      throw new ApiError(
        response.status,
        detail.code ?? "internal",
        detail.message ?? `request failed with ${response.status}`,
      );
    }
    return payload as T;
  }

  scenes(): Promise<{ scenes: SceneSummary[] }> {
    return this.request("GET", "/scenes");
  }

  createSession(sceneId: string): Promise<CreateSessionResponse> {
    return this.request("POST", "/sessions", { scene_id: sceneId });
  }

  sendMessage(
    sessionId: string,
    text: string,
    idempotencyToken: string,
  ): Promise<MessageResponse> {
    return this.request("POST", `/sessions/${sessionId}/messages`, {
      text,
      idempotency_token: idempotencyToken,
    });
  }

  requestHint(sessionId: string): Promise<HintResponse> {
    return this.request("POST", `/sessions/${sessionId}/hint`);
  }

  closeSession(sessionId: string, reason: string): Promise<CloseResponse> {
    return this.request("POST", `/sessions/${sessionId}/close`, { reason });
  }

  score(sessionId: string): Promise<ScoreReport> {
    return this.request("GET", `/sessions/${sessionId}/score`);
  }

  transcript(sessionId: string): Promise<TranscriptResponse> {
    return this.request("GET", `/sessions/${sessionId}/transcript`);
  }

  metrics(): Promise<MetricsResponse> {
    return this.request("GET", "/metrics");
  }
}
