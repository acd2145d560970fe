/** Node connectivity: WebSocket stream with reconnect/backoff, plus a
 * polling fallback so the console still converges with WebSockets blocked.
 *
 * The socket constructor and fetch function are injectable for tests.
 */

import type { NodeEvent, Snapshot } from "./types.js";

export interface SocketLike {
  onopen: (() => void) | null;
  onmessage: ((event: { data: string }) => void) | null;
  onclose: (() => void) | null;
  onerror: (() => void) | null;
  close(): void;
}

export type SocketFactory = (url: string) => SocketLike;
export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export interface TransportHandlers {
  onEvent(event: NodeEvent): void;
  onSnapshot(snapshot: Snapshot): void;
  onStatusChange(status: "connecting" | "live" | "down"): void;
}

export interface TransportOptions {
  socketFactory?: SocketFactory;
  fetchFn?: FetchLike;
  pollIntervalMs?: number;
  backoffBaseMs?: number;
  backoffMaxMs?: number;
  setTimer?: (fn: () => void, ms: number) => unknown;
  clearTimer?: (handle: unknown) => void;
}

export class NodeTransport {
  private readonly base: string;
  private readonly wsUrl: string;
  private readonly handlers: TransportHandlers;
  private readonly socketFactory: SocketFactory;
  private readonly fetchFn: FetchLike;
  private readonly pollIntervalMs: number;
  private readonly backoffBaseMs: number;
  private readonly backoffMaxMs: number;
  private readonly setTimer: (fn: () => void, ms: number) => unknown;
  private readonly clearTimer: (handle: unknown) => void;

  private socket: SocketLike | null = null;
  private attempts = 0;
  private stopped = false;
  private reconnectHandle: unknown = null;
  private pollHandle: unknown = null;

  constructor(baseUrl: string, handlers: TransportHandlers, options: TransportOptions = {}) {
    this.base = baseUrl.replace(/\/$/, "");
    this.wsUrl = this.base.replace(/^http/, "ws") + "/events";
    this.handlers = handlers;
    this.socketFactory =
      options.socketFactory ?? ((url) => new WebSocket(url) as unknown as SocketLike);
    this.fetchFn = options.fetchFn ?? ((url, init) => fetch(url, init));
    this.pollIntervalMs = options.pollIntervalMs ?? 3_000;
    this.backoffBaseMs = options.backoffBaseMs ?? 500;
    this.backoffMaxMs = options.backoffMaxMs ?? 8_000;
    this.setTimer = options.setTimer ?? ((fn, ms) => setTimeout(fn, ms));
    this.clearTimer = options.clearTimer ?? ((h) => clearTimeout(h as number));
  }

  start(): void {
    this.stopped = false;
    this.handlers.onStatusChange("connecting");
    void this.hydrate();
    this.openSocket();
    this.schedulePoll();
  }

  stop(): void {
    this.stopped = true;
    if (this.reconnectHandle !== null) this.clearTimer(this.reconnectHandle);
    if (this.pollHandle !== null) this.clearTimer(this.pollHandle);
    this.socket?.close();
    this.socket = null;
  }

  /** Exponential backoff delay for the given attempt number. */
  backoffDelay(attempt: number): number {
    return Math.min(this.backoffBaseMs * 2 ** Math.max(0, attempt - 1), this.backoffMaxMs);
  }

  private async hydrate(): Promise<void> {
    try {
      const resp = await this.fetchFn(`${this.base}/status`);
      if (resp.ok) {
        this.handlers.onSnapshot((await resp.json()) as Snapshot);
      }
    } catch {
      this.handlers.onStatusChange("down");
    }
  }

  private openSocket(): void {
    if (this.stopped) return;
    let socket: SocketLike;
    try {
      socket = this.socketFactory(this.wsUrl);
    } catch {
      this.scheduleReconnect();
      return;
    }
    this.socket = socket;
    socket.onopen = () => {
      this.attempts = 0;
      this.handlers.onStatusChange("live");
    };
    socket.onmessage = (message) => {
      try {
        this.handlers.onEvent(JSON.parse(message.data) as NodeEvent);
      } catch {
        // a malformed frame is ignored; the next snapshot resynchronises
      }
    };
    socket.onclose = () => {
      if (this.socket === socket) this.socket = null;
      this.scheduleReconnect();
    };
    socket.onerror = () => {
      socket.close();
    };
  }

  private scheduleReconnect(): void {
    if (this.stopped) return;
    this.attempts += 1;
    this.handlers.onStatusChange("down");
    this.reconnectHandle = this.setTimer(() => this.openSocket(), this.backoffDelay(this.attempts));
  }

  /** Poll /status regardless of socket health; harmless when live, and the
   * only data path when WebSockets are unavailable. */
  private schedulePoll(): void {
    if (this.stopped) return;
    this.pollHandle = this.setTimer(async () => {
      await this.hydrate();
      this.schedulePoll();
    }, this.pollIntervalMs);
  }
}
