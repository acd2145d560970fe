/** Pure UI state: everything displayed derives from node snapshots and the
 * sequenced event stream. The client holds no trading logic of its own. */

import type { NodeEvent, SessionView, Snapshot } from "./types.js";

export type ConnectionStatus = "connecting" | "live" | "stale" | "down";

export interface FeedEntry {
  seq: number;
  event: string;
  detail: string;
}

export interface PendingRequest {
  units: number;
  sentAt: number;
  orderId: string | null; // filled in once the server replies
}

export interface UiState {
  connection: ConnectionStatus;
  snapshot: Snapshot | null;
  lastSeq: number;
  feed: FeedEntry[];
  pending: PendingRequest | null;
  approving: Set<string>; // order ids with an approve in flight
  lastHeardAt: number;
}

export const FEED_LIMIT = 100;

export function initialState(now = Date.now()): UiState {
  return {
    connection: "connecting",
    snapshot: null,
    lastSeq: 0,
    feed: [],
    pending: null,
    approving: new Set(),
    lastHeardAt: now,
  };
}

function describe(event: NodeEvent): string {
  const d = event.data as Record<string, unknown>;
  switch (event.event) {
    case "block_committed":
      return `block #${d.index} committed (${d.amount} Wh, nonce ${d.nonce})`;
    case "session_committed":
      return `order ${d.order_id} committed in block #${d.block_index}`;
    case "trade_requested":
      return `incoming request ${d.order_id}: ${d.units} Wh`;
    case "trade_rejected":
      return `order ${d.order_id} rejected: ${d.reason}`;
    case "mining_started":
      return `mining started for ${d.order_id}`;
    case "tick":
      return `interval: surplus ${Math.round(Number(d.surplus_w ?? 0))} W`;
    case "peer_added":
      return `peer connected: ${d.node_id}`;
    case "peer_lost":
      return `peer lost: ${d.node_id}`;
    default:
      return event.event;
  }
}

/** Apply a fresh snapshot obtained by plain polling (`/status`). */
export function applySnapshot(state: UiState, snapshot: Snapshot, now = Date.now()): UiState {
  return reconcilePending(
    { ...state, snapshot, connection: "live", lastHeardAt: now },
    snapshot,
  );
}

/** Apply one stream event. Replayed or out-of-order frames (seq at or
 * below the last applied) are dropped so reconnects cannot corrupt state. */
export function applyEvent(state: UiState, event: NodeEvent, now = Date.now()): UiState {
  if (event.seq <= state.lastSeq && event.event !== "hello") {
    return { ...state, lastHeardAt: now };
  }
  const feed =
    event.event === "hello"
      ? state.feed
      : [{ seq: event.seq, event: event.event, detail: describe(event) }, ...state.feed].slice(
          0,
          FEED_LIMIT,
        );
  const next: UiState = {
    ...state,
    connection: "live",
    snapshot: event.snapshot,
    lastSeq: Math.max(state.lastSeq, event.seq),
    feed,
    lastHeardAt: now,
  };
  return reconcilePending(next, event.snapshot);
}

/** Resolve the optimistic pending row against server-side sessions. */
function reconcilePending(state: UiState, snapshot: Snapshot): UiState {
  let pending = state.pending;
  if (pending) {
    const match = snapshot.sessions.find(
      (s) =>
        s.role === "buyer" &&
        (pending!.orderId ? s.order_id === pending!.orderId : s.units === pending!.units),
    );
    if (match && !isActive(match)) {
      pending = null; // settled: committed, rejected or timed out
    }
  }
  const approving = new Set(
    [...state.approving].filter((orderId) => {
      const s = snapshot.sessions.find((x) => x.order_id === orderId);
      return s !== undefined && isActive(s);
    }),
  );
  if (pending === state.pending && approving.size === state.approving.size) {
    return state;
  }
  return { ...state, pending, approving };
}

export function isActive(session: SessionView): boolean {
  return (
    session.state === "requested" || session.state === "accepted" || session.state === "mining"
  );
}

export function markConnection(state: UiState, connection: ConnectionStatus): UiState {
  return state.connection === connection ? state : { ...state, connection };
}

/** Stale when the stream has been silent for longer than the threshold. */
export function checkStaleness(state: UiState, now: number, thresholdMs = 10_000): UiState {
  if (state.connection === "live" && now - state.lastHeardAt > thresholdMs) {
    return { ...state, connection: "stale" };
  }
  return state;
}

export function beginRequest(state: UiState, units: number, now = Date.now()): UiState {
  return { ...state, pending: { units, sentAt: now, orderId: null } };
}

export function attachOrderId(state: UiState, orderId: string): UiState {
  if (!state.pending) return state;
  return { ...state, pending: { ...state.pending, orderId } };
}

export function clearPending(state: UiState): UiState {
  return state.pending ? { ...state, pending: null } : state;
}

export function beginApprove(state: UiState, orderId: string): UiState {
  const approving = new Set(state.approving);
  approving.add(orderId);
  return { ...state, approving };
}
