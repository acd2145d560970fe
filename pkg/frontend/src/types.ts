/** Payload shapes served by a wattchain node's HTTP and WebSocket API. */

export interface BlockView {
  index: number;
  timestamp: string;
  sender: string;
  receiver: string;
  amount: number;
  nonce: number;
  prev_hash: string;
  hash: string;
}

export interface MarketView {
  gen_w: number;
  demand_w: number;
  surplus_w: number;
  surplus_remaining_wh: number;
  energy_sold_wh: number;
  energy_bought_wh: number;
  interval_s: number;
}

export type SessionState =
  | "requested"
  | "accepted"
  | "mining"
  | "committed"
  | "rejected"
  | "timed_out";

export interface SessionView {
  order_id: string;
  role: "buyer" | "seller";
  buyer: string;
  seller: string;
  units: number;
  state: SessionState;
  reason: string | null;
  block_index: number | null;
  created_wall: number;
  committed_wall: number | null;
}

export interface ForecastPoint {
  timestamp: string;
  predicted_w: number;
}

export interface ForecastView {
  date: string;
  points: ForecastPoint[];
}

export interface Snapshot {
  node_id: string;
  address: string;
  sim_time: string;
  clock_mode: string;
  clock_factor: number;
  market: MarketView | null;
  balance: number;
  endowment: number;
  chain: {
    height: number;
    difficulty_bits: number;
    last_block: BlockView;
  };
  peers: { node_id: string; host: string; port: number; state: string }[];
  sessions: SessionView[];
  forecast: ForecastView | null;
}

export interface NodeEvent {
  seq: number;
  event: string;
  data: Record<string, unknown>;
  snapshot: Snapshot;
}
