/** Typed client for the review service endpoints. */

export interface TripleDoc {
  head: string;
  relation: string;
  tail: string;
}

export interface InferenceSummary {
  explanation_id: string;
  query: TripleDoc;
  predicted: boolean;
  text: string;
}

export interface ReviewHop {
  head: string;
  relation: string;
  tail: string;
  slot: string;
  options: (TripleDoc | null)[];
}

export interface ExplanationDetail {
  id: string;
  status: string;
  query: TripleDoc;
  predicted: boolean;
  text: string;
  review_hops: ReviewHop[];
}

export interface Session {
  session_id: string;
  status: string;
  explanation_ids: string[];
}

export interface LinkPredictionSummary {
  mrr: number;
  hits_at: Record<string, number>;
}

export interface JobStatus {
  job_id: string;
  status: "queued" | "running" | "done" | "failed";
  before: LinkPredictionSummary | null;
  after: LinkPredictionSummary | null;
  error: string | null;
}

export interface CorrectionIn {
  explanation_id: string;
  hop_index: number;
  chosen: number;
  session_id: string | null;
}

export interface CorrectionOut extends CorrectionIn {
  record_id: string;
}

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

export class ApiClient {
  constructor(
    private baseUrl: string = "",
    private fetchImpl: typeof fetch = globalThis.fetch.bind(globalThis),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchImpl(`${this.baseUrl}${path}`, {
      headers: { "Content-Type": "application/json" },
      ...init,
    });
    if (!response.ok) {
      let detail = response.statusText;
      try {
        const body = await response.json();
        if (body && body.detail) detail = String(body.detail);
      } catch {
        // keep the status text
      }
      throw new ApiError(response.status, detail);
    }
    return (await response.json()) as T;
  }

  listPending(): Promise<InferenceSummary[]> {
    return this.request("/inferences?status=pending");
  }

  getExplanation(id: string): Promise<ExplanationDetail> {
    return this.request(`/explanations/${id}`);
  }

  createSession(): Promise<Session> {
    return this.request("/sessions", { method: "POST", body: "{}" });
  }

  getSession(id: string): Promise<Session> {
    return this.request(`/sessions/${id}`);
  }

  submitSession(id: string): Promise<Session> {
    return this.request(`/sessions/${id}/submit`, { method: "POST", body: "{}" });
  }

  postCorrection(body: CorrectionIn): Promise<CorrectionOut> {
    return this.request("/corrections", { method: "POST", body: JSON.stringify(body) });
  }

  retrain(): Promise<{ job_id: string; status: string }> {
    return this.request("/retrain", { method: "POST", body: "{}" });
  }

  getJob(id: string): Promise<JobStatus> {
    return this.request(`/jobs/${id}`);
  }

  /** Poll until the job is done or failed; rejects on failure or timeout. */
  async pollJob(
    id: string,
    intervalMs = 1500,
    timeoutMs = 300000,
    sleep: (ms: number) => Promise<void> = (ms) => new Promise((r) => setTimeout(r, ms)),
  ): Promise<JobStatus> {
    const deadline = Date.now() + timeoutMs;
    for (;;) {
      const job = await this.getJob(id);
      if (job.status === "done") return job;
      if (job.status === "failed") {
        throw new ApiError(500, job.error ?? `job ${id} failed`);
      }
      if (Date.now() >= deadline) throw new ApiError(408, `job ${id} timed out`);
      await sleep(intervalMs);
    }
  }
}
