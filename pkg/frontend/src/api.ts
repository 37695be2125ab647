/** Typed client for the listening-test HTTP API. */

import type { Ack, NextSample, ResponsePayload } from "./types";

export class ApiError extends Error {
  constructor(
    public status: number,
    detail: string,
  ) {
    super(detail);
  }
}

export class ApiClient {
  constructor(
    private baseUrl: string,
    private token: string,
  ) {}

  audioUrl(path: string): string {
    return this.baseUrl + path;
  }

  async next(): Promise<NextSample> {
    const res = await fetch(`${this.baseUrl}/api/v1/session/${this.token}/next`);
    if (!res.ok) throw new ApiError(res.status, await detailOf(res));
    return (await res.json()) as NextSample;
  }

  async submit(payload: ResponsePayload): Promise<Ack> {
    const res = await fetch(`${this.baseUrl}/api/v1/session/${this.token}/response`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(payload),
    });
    if (!res.ok) throw new ApiError(res.status, await detailOf(res));
    return (await res.json()) as Ack;
  }

  /**
   * Submit with the same idempotency key across network retries: a timeout
   * after the server persisted the response must not double-count it.
   */
  async submitWithRetry(payload: ResponsePayload, attempts = 3): Promise<Ack> {
    let lastError: unknown;
    for (let i = 0; i < attempts; i++) {
      try {
        return await this.submit(payload);
      } catch (err) {
        if (err instanceof ApiError) throw err; // server verdicts are final
        lastError = err; // network failure: retry the identical payload
      }
    }
    throw lastError;
  }
}

async function detailOf(res: Response): Promise<string> {
  try {
    const body = (await res.json()) as { detail?: string };
    return body.detail ?? res.statusText;
  } catch {
    return res.statusText;
  }
}

export function freshIdempotencyKey(): string {
  if (typeof crypto !== "undefined" && crypto.randomUUID) return crypto.randomUUID();
  return `key-${Date.now()}-${Math.random().toString(36).slice(2)}`;
}
