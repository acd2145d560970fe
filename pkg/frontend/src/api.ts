/** Thin wrappers over the node's POST endpoints. */

import type { FetchLike } from "./transport.js";
import type { SessionView } from "./types.js";

export interface ApiError {
  status: number;
  detail: string;
}

async function post(
  fetchFn: FetchLike,
  url: string,
  body: unknown,
): Promise<{ ok: true; value: SessionView } | { ok: false; error: ApiError }> {
  let resp: Response;
  try {
    resp = await fetchFn(url, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
  } catch (err) {
    return { ok: false, error: { status: 0, detail: `node unreachable: ${String(err)}` } };
  }
  const payload = (await resp.json().catch(() => ({}))) as Record<string, unknown>;
  if (!resp.ok) {
    return {
      ok: false,
      error: { status: resp.status, detail: String(payload.detail ?? resp.statusText) },
    };
  }
  return { ok: true, value: payload as unknown as SessionView };
}

export function requestTrade(base: string, units: number, fetchFn: FetchLike = fetch) {
  return post(fetchFn, `${base}/trade/request`, { units });
}

export function approveTrade(base: string, orderId: string, fetchFn: FetchLike = fetch) {
  return post(fetchFn, `${base}/trade/approve`, { order_id: orderId });
}
