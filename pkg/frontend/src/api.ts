// Typed client for the session service. The fetch implementation is
// injectable so tests can run against a stub with no service built.

export interface Candidate {
  entity: string;
  entity_id: number;
  score: number;
  source: "beam" | "fallback";
}

export interface TraceStep {
  hop: number;
  relation: string;
  entity: string;
}

export interface AskResponse {
  answer: string;
  answer_id: number;
  topic_used: string;
  top_k: Candidate[];
  trace: TraceStep[];
  turn_index: number;
}

export interface SessionInfo {
  session_id: string;
  topic_entity: string;
}

export interface ErrorDetail {
  code: string;
  message: string;
  suggestions: string[];
}

export class ServiceError extends Error {
  detail: ErrorDetail;

  constructor(detail: ErrorDetail) {
    super(detail.message);
    this.detail = detail;
  }
}

export interface ResponseLike {
  ok: boolean;
  status: number;
  json(): Promise<unknown>;
}

export type FetchLike = (url: string, init?: {
  method?: string;
  headers?: Record<string, string>;
  body?: string;
}) => Promise<ResponseLike>;

function normalizeDetail(payload: unknown): ErrorDetail {
  if (payload && typeof payload === "object" && "detail" in payload) {
    const detail = (payload as { detail: unknown }).detail;
    if (detail && typeof detail === "object" && "message" in detail) {
      const d = detail as Partial<ErrorDetail>;
      return {
        code: d.code ?? "error",
        message: d.message ?? "request failed",
        suggestions: d.suggestions ?? [],
      };
    }
    return { code: "error", message: JSON.stringify(detail), suggestions: [] };
  }
  return { code: "error", message: "request failed", suggestions: [] };
}

export class ServiceClient {
  private baseUrl: string;
  private fetchImpl: FetchLike;

  constructor(baseUrl: string, fetchImpl?: FetchLike) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
    this.fetchImpl = fetchImpl ?? (fetch as unknown as FetchLike);
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const response = await this.fetchImpl(this.baseUrl + path, {
      method,
      headers: { "Content-Type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const payload = await response.json();
    if (!response.ok) {
      throw new ServiceError(normalizeDetail(payload));
    }
    return payload as T;
  }

  createSession(topicEntityKey: string): Promise<SessionInfo> {
    return this.request<SessionInfo>("POST", "/sessions", {
      topic_entity_key: topicEntityKey,
    });
  }

  ask(sessionId: string, question: string, topK = 10): Promise<AskResponse> {
    return this.request<AskResponse>("POST", `/sessions/${sessionId}/ask`, {
      question,
      top_k: topK,
    });
  }

  deleteSession(sessionId: string): Promise<unknown> {
    return this.request("DELETE", `/sessions/${sessionId}`);
  }
}
