import type { NodeEvent, SessionView, Snapshot } from "../src/types.js";

export function makeSession(overrides: Partial<SessionView> = {}): SessionView {
  return {
    order_id: "ord-1",
    role: "buyer",
    buyer: "library",
    seller: "energy-lab",
    units: 200,
    state: "requested",
    reason: null,
    block_index: null,
    created_wall: 1000,
    committed_wall: null,
    ...overrides,
  };
}

export function makeSnapshot(overrides: Partial<Snapshot> = {}): Snapshot {
  return {
    node_id: "library",
    address: "ab".repeat(32),
    sim_time: "2020-04-23T09:00:00Z",
    clock_mode: "replay",
    clock_factor: 60,
    market: {
      gen_w: 0,
      demand_w: 5000,
      surplus_w: 0,
      surplus_remaining_wh: 0,
      energy_sold_wh: 0,
      energy_bought_wh: 0,
      interval_s: 300,
    },
    balance: 100_000,
    endowment: 100_000,
    chain: {
      height: 1,
      difficulty_bits: 12,
      last_block: {
        index: 0,
        timestamp: "2020-04-23T00:00:00Z",
        sender: "genesis",
        receiver: "genesis",
        amount: 0,
        nonce: 0,
        prev_hash: "0".repeat(64),
        hash: "c".repeat(64),
      },
    },
    peers: [{ node_id: "energy-lab", host: "127.0.0.1", port: 7402, state: "established" }],
    sessions: [],
    forecast: null,
    ...overrides,
  };
}

export function makeEvent(
  seq: number,
  event: string,
  snapshot: Snapshot,
  data: Record<string, unknown> = {},
): NodeEvent {
  return { seq, event, data, snapshot };
}
