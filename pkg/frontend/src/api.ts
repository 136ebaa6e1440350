// Typed client for the pipeline service. Everything the UI shows comes from
// these endpoints; no values are computed client-side beyond unit formatting.

export type EventKind =
  | "phase_started"
  | "phase_finished"
  | "llm_call"
  | "tool_run"
  | "case_result"
  | "iteration_done"
  | "human_feedback_applied"
  | "session_done";

export const EVENT_KINDS: readonly EventKind[] = [
  "phase_started",
  "phase_finished",
  "llm_call",
  "tool_run",
  "case_result",
  "iteration_done",
  "human_feedback_applied",
  "session_done",
];

export interface AgentEvent {
  session_id: string;
  sequence: number;
  kind: EventKind;
  timestamp: number;
  payload: Record<string, any>;
}

export interface FlowKpis {
  flow_id: number;
  throughput_bps: number;
  mean_delay_s: number;
  mean_jitter_s: number;
  loss_ratio: number;
  delivery_ratio: number;
  tx_packets: number;
  rx_packets: number;
  rx_bytes: number;
}

export interface AggregateKpis {
  throughput_bps: number;
  mean_delay_s: number;
  mean_jitter_s: number;
  loss_ratio: number;
  tx_packets: number;
  rx_packets: number;
}

export interface KpiBundle {
  aggregate: AggregateKpis;
  flows: FlowKpis[];
  flow_count: number;
}

export interface CaseOutcome {
  case_id: string;
  kind: string;
  passed: boolean;
  detail: string;
  exit_status: number | null;
  duration_s: number;
  error_classes: { class: string; rule_id: string; evidence: string }[];
}

export interface IterationReport {
  all_passed: boolean;
  cases: CaseOutcome[];
  kpis: KpiBundle | null;
  tool_time_s: number;
}

export interface Interpretation {
  verdict: string;
  summary: string;
  findings: unknown[];
}

export interface ScriptInfo {
  iteration: number;
  payload_kind: string;
  source_text: string;
  prompt_fingerprint?: string;
  retrieved_chunk_ids?: string[];
}

export interface IterationRecord {
  index: number;
  script: ScriptInfo | null;
  report: IterationReport | null;
  interpretation: Interpretation | null;
  feedback_source: string | null;
  wall_s: number;
}

export interface SessionReport {
  session_id: string;
  status: string;
  verdict: string | null;
  requirements: string | null;
  spec: Record<string, unknown> | null;
  iterations: IterationRecord[];
  human_feedback: { text: string; approve: boolean; timestamp: number }[];
  max_iterations: number;
  failure_reason: string | null;
}

export interface SessionHandle {
  session_id: string;
  status: string;
  created_at: number;
}

export interface SessionSummary {
  session_id: string;
  status: string;
  iterations_run: number;
  max_iterations: number;
  pause_for_human: boolean;
  verdict: string | null;
  failure_reason: string | null;
}

export interface CreateSessionOptions {
  model?: string;
  max_iterations?: number;
  pause_for_human?: boolean;
  payload_kind?: string;
}

export interface FeedbackDraft {
  text: string;
  approve: boolean;
}

// Drafts carry either refinement text or an approval, never both and never
// neither. Returns a user-facing problem string, or null when sendable.
export function feedbackProblem(draft: FeedbackDraft): string | null {
  const text = draft.text.trim();
  if (draft.approve && text) return "choose either feedback text or approval, not both";
  if (!draft.approve && !text) return "feedback text must not be empty";
  return null;
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

async function errorFrom(res: Response): Promise<ApiError> {
  try {
    const body = await res.json();
    if (body && body.error && typeof body.error.code === "string") {
      return new ApiError(res.status, body.error.code, String(body.error.message ?? ""));
    }
  } catch {
    // non-JSON error body; fall through
  }
  return new ApiError(res.status, "internal_error", `http ${res.status}`);
}

export class ApiClient {
  readonly baseUrl: string;

  constructor(baseUrl = "") {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const res = await fetch(this.baseUrl + path, {
      method,
      headers: body === undefined ? {} : { "content-type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    if (!res.ok) throw await errorFrom(res);
    return (await res.json()) as T;
  }

  createSession(opts: CreateSessionOptions = {}): Promise<SessionHandle> {
    return this.request("POST", "/api/sessions", opts);
  }

  getSession(sessionId: string): Promise<SessionSummary> {
    return this.request("GET", `/api/sessions/${sessionId}`);
  }

  submitRequirements(sessionId: string, requirements: string): Promise<{ status: string }> {
    return this.request("POST", `/api/sessions/${sessionId}/requirements`, { requirements });
  }

  // Validates locally first so an empty draft never reaches the wire.
  sendFeedback(sessionId: string, draft: FeedbackDraft): Promise<{ status: string; session_status: string }> {
    const problem = feedbackProblem(draft);
    if (problem) return Promise.reject(new ApiError(0, "validation_error", problem));
    return this.request("POST", `/api/sessions/${sessionId}/feedback`, {
      text: draft.text,
      approve: draft.approve,
    });
  }

  getReport(sessionId: string): Promise<SessionReport> {
    return this.request("GET", `/api/sessions/${sessionId}/report`);
  }

  health(): Promise<{ status: string; sessions: number; active: number; capacity: number }> {
    return this.request("GET", "/api/health");
  }

  eventsUrl(sessionId: string, fromSequence = 0): string {
    const qs = fromSequence > 0 ? `?from_sequence=${fromSequence}` : "";
    return `${this.baseUrl}/api/sessions/${sessionId}/events${qs}`;
  }
}
