/**
 * Typed client for the eval-service HTTP API.
 *
 * Domain errors from the server carry a JSON body with a stable
 * machine-readable `code` and become ApiError. Transport failures
 * (server unreachable, connection dropped) become NetworkError, so
 * callers can tell what is retryable from what was rejected for cause.
 */

export interface TaskPayload {
  task_id: string;
  pair_id: string;
  source: string;
  candidate: string;
  annotator: string;
  rules: string[];
}

export interface NextTaskResponse {
  done: boolean;
  task: TaskPayload | null;
}

export interface CreateSessionBody {
  pairs: Array<{ id: string; source: string }>;
  systems: Record<string, string[]>;
  annotators: string[];
  double_subset_size: number;
  seed: number;
}

export interface SessionInfo {
  session_id: string;
  n_tasks: number;
  n_pairs: number;
  n_double_pairs: number;
  annotators: string[];
}

export type Verdict = "good" | "bad";

export interface VerdictSubmission {
  task_id: string;
  annotator: string;
  verdict: Verdict;
  failing_rule: string | null;
}

export interface SubmissionReceipt {
  accepted: boolean;
  task_id: string;
  annotator: string;
}

export interface SystemStats {
  n_good: number;
  n_answered: number;
  n_tasks: number;
  accuracy: number | null;
  accuracy_pct: number | null;
}

export interface StatsReport {
  session_id: string;
  systems: Record<string, SystemStats>;
  n_annotations: number;
  n_expected: number;
  done: boolean;
}

export interface AgreementReport {
  n_items: number;
  percent_agreement: number | null;
  kappa: number | null;
  kappa_defined: boolean;
}

export class ApiError extends Error {
  readonly code: string;
  readonly status: number;

  constructor(code: string, message: string, status: number) {
    super(message);
    this.name = "ApiError";
    this.code = code;
    this.status = status;
  }
}

export class NetworkError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "NetworkError";
  }
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class EvalClient {
  private readonly base: string;
  private readonly fetchFn: FetchLike;

  constructor(baseUrl: string, fetchFn?: FetchLike) {
    this.base = baseUrl.replace(/\/+$/, "");
    this.fetchFn = fetchFn ?? ((input, init) => fetch(input, init));
  }

  createSession(body: CreateSessionBody): Promise<SessionInfo> {
    return this.request("POST", "/sessions", body);
  }

  nextTask(sessionId: string, annotator: string): Promise<NextTaskResponse> {
    const query = `annotator=${encodeURIComponent(annotator)}`;
    return this.request("GET", `/sessions/${encodeURIComponent(sessionId)}/next?${query}`);
  }

  submit(sessionId: string, submission: VerdictSubmission): Promise<SubmissionReceipt> {
    return this.request("POST", `/sessions/${encodeURIComponent(sessionId)}/annotations`, submission);
  }

  stats(sessionId: string): Promise<StatsReport> {
    return this.request("GET", `/sessions/${encodeURIComponent(sessionId)}/stats`);
  }

  agreement(sessionId: string): Promise<AgreementReport> {
    return this.request("GET", `/sessions/${encodeURIComponent(sessionId)}/agreement`);
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    let response: Response;
    try {
      response = await this.fetchFn(this.base + path, {
        method,
        headers: body === undefined ? undefined : { "Content-Type": "application/json" },
        body: body === undefined ? undefined : JSON.stringify(body),
      });
    } catch (err) {
      throw new NetworkError(`${method} ${path}: ${String(err)}`);
    }
    if (!response.ok) {
      throw await readApiError(response, method, path);
    }
    return (await response.json()) as T;
  }
}

async function readApiError(response: Response, method: string, path: string): Promise<ApiError> {
  let code = `http_${response.status}`;
  let message = `${method} ${path} failed with status ${response.status}`;
  try {
    const data: unknown = await response.json();
    if (typeof data === "object" && data !== null) {
      const record = data as Record<string, unknown>;
      if (typeof record.code === "string") {
        code = record.code;
        message = typeof record.message === "string" ? record.message : message;
      } else if (record.detail !== undefined) {
        // validation failures (422) have a `detail` list instead of code/message
        code = "invalid_request";
        message = JSON.stringify(record.detail);
      }
    }
  } catch {
    // non-JSON body, keep the generic fallback
  }
  return new ApiError(code, message, response.status);
}
