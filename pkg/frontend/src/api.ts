/** Typed client for the labeling service; throws ApiError on error envelopes. */

import { AdaptStatus, AnnotatedTrajectory, PairResponse, Winner } from "./types.js";

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
    public field?: string
  ) {
    super(message);
  }
}

const request = async <T>(base: string, path: string, init?: RequestInit): Promise<T> => {
  const res = await fetch(base + path, {
    headers: { "content-type": "application/json" },
    ...init,
  });
  const body = await res.json().catch(() => ({}));
  if (!res.ok) {
    const err = (body as { error?: { code?: string; message?: string; field?: string } }).error ?? {};
    throw new ApiError(res.status, err.code ?? "error", err.message ?? res.statusText, err.field);
  }
  return body as T;
};

export class Client {
  constructor(public base: string = "") {}

  createSession(user?: string, nQuery?: number): Promise<{ session_id: string; n_pairs: number }> {
    return request(this.base, "/sessions", {
      method: "POST",
      body: JSON.stringify({ user: user ?? null, n_query: nQuery ?? null }),
    });
  }

  nextPair(sid: string): Promise<PairResponse> {
    return request(this.base, `/sessions/${sid}/next-pair`);
  }

  postLabel(sid: string, pairId: string, winner: Winner, criteria?: string): Promise<{ labels: number }> {
    return request(this.base, `/sessions/${sid}/labels`, {
      method: "POST",
      body: JSON.stringify({ pair_id: pairId, winner, criteria: criteria ?? null }),
    });
  }

  startAdapt(sid: string, nAdapt?: number, u?: number, v?: number): Promise<{ job_id: string }> {
    return request(this.base, `/sessions/${sid}/adapt`, {
      method: "POST",
      body: JSON.stringify({ n_adapt: nAdapt ?? null, u: u ?? null, v: v ?? null }),
    });
  }

  adaptStatus(sid: string): Promise<AdaptStatus> {
    return request(this.base, `/sessions/${sid}/adapt/status`);
  }

  samples(sid: string, n: number, seed: number): Promise<{ samples: AnnotatedTrajectory[] }> {
    return request(this.base, `/sessions/${sid}/samples?n=${n}&seed=${seed}`);
  }

  healthz(): Promise<{ status: string }> {
    return request(this.base, "/healthz");
  }
}
