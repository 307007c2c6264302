import { KeyEvent } from "./capture.js";

export interface EnrollResult {
  subject_id: string;
  enrollments: number;
}

export interface Decision {
  subject_id: string;
  score: number;
  threshold: number;
  accept: boolean;
  scorer: string;
  enrollments: number;
}

export interface Health {
  status: string;
  model_sha256: string;
  scorer: string;
  threshold: number;
  max_len: number;
  subjects: number;
}

/**
 * Canonical request body. Field order is pinned by construction so a fixed
 * event stream always serializes to the same bytes.
 */
export function requestBody(events: KeyEvent[]): string {
  return JSON.stringify({
    events: events.map(({ keycode, press_ms, release_ms }) => ({ keycode, press_ms, release_ms })),
  });
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: string,
  ) {
    super(`service returned ${status}: ${detail}`);
  }
}

type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ServiceClient {
  constructor(
    readonly baseUrl: string,
    private readonly fetchFn: FetchLike = (url, init) => fetch(url, init),
  ) {}

  async enroll(subject: string, events: KeyEvent[]): Promise<EnrollResult> {
    return this.post(`/subjects/${encodeURIComponent(subject)}/enroll`, events);
  }

  async verify(subject: string, events: KeyEvent[]): Promise<Decision> {
    return this.post(`/subjects/${encodeURIComponent(subject)}/verify`, events);
  }

  async health(): Promise<Health> {
    const res = await this.fetchFn(`${this.baseUrl}/health`);
    if (!res.ok) throw new ApiError(res.status, await detailOf(res));
    return res.json();
  }

  private async post<T>(path: string, events: KeyEvent[]): Promise<T> {
    const res = await this.fetchFn(this.baseUrl + path, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: requestBody(events),
    });
    if (!res.ok) throw new ApiError(res.status, await detailOf(res));
    return res.json();
  }
}

async function detailOf(res: Response): Promise<string> {
  const data = await res.json().catch(() => null);
  if (data && typeof data.detail === "string") return data.detail;
  if (data && data.detail !== undefined) return JSON.stringify(data.detail);
  return res.statusText || "request failed";
}
