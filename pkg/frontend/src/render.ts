/** DOM rendering. Every displayed number originates from the node; this
 * module only formats. */

import { isActive, UiState } from "./state.js";
import type { SessionView } from "./types.js";

function el(id: string): HTMLElement {
  const found = document.getElementById(id);
  if (!found) throw new Error(`missing element #${id}`);
  return found;
}

function fmtW(value: number): string {
  return value >= 10_000 ? `${(value / 1000).toFixed(1)} kW` : `${Math.round(value)} W`;
}

function shortHash(hash: string): string {
  return `${hash.slice(0, 10)}…${hash.slice(-6)}`;
}

const STATE_LABEL: Record<string, string> = {
  requested: "requested",
  accepted: "accepted",
  mining: "mining ⛏",
  committed: "committed ✓",
  rejected: "rejected ✕",
  timed_out: "timed out",
};

function sessionRow(session: SessionView, approving: Set<string>, mine: string): string {
  const direction = session.role === "buyer" ? `buy from ${session.seller}` : `sell to ${session.buyer}`;
  const stateText = STATE_LABEL[session.state] ?? session.state;
  const reason = session.reason ? ` (${session.reason})` : "";
  const block =
    session.block_index !== null
      ? `<span class="mono">block #${session.block_index}</span>`
      : "";
  const canApprove =
    session.role === "seller" && session.state === "requested" && !approving.has(session.order_id);
  const approveBtn = canApprove
    ? `<button data-approve="${session.order_id}">approve</button>`
    : session.role === "seller" && approving.has(session.order_id) && isActive(session)
      ? `<button disabled>approving…</button>`
      : "";
  return `<tr class="s-${session.state}" data-order="${session.order_id}">
    <td class="mono">${session.order_id}</td>
    <td>${direction}</td>
    <td class="num">${session.units}</td>
    <td>${stateText}${reason} ${block}</td>
    <td>${approveBtn}</td>
  </tr>`;
}

export function render(state: UiState): void {
  const banner = el("banner");
  if (state.connection === "live") {
    banner.className = "banner hidden";
    banner.textContent = "";
  } else if (state.connection === "stale") {
    banner.className = "banner stale";
    banner.textContent = "no updates from the node for 10 s — data may be stale";
  } else {
    banner.className = "banner down";
    banner.textContent =
      state.connection === "connecting" ? "connecting to node…" : "node unreachable — retrying";
  }

  const snap = state.snapshot;
  if (!snap) return;

  el("node-id").textContent = snap.node_id;
  el("sim-time").textContent = `${snap.sim_time} (${snap.clock_mode} ×${snap.clock_factor})`;
  el("balance").textContent = `${snap.balance.toLocaleString()} tokens`;
  el("height").textContent = String(snap.chain.height);
  el("peers").textContent = snap.peers.map((p) => p.node_id).join(", ") || "none";

  const market = snap.market;
  if (market) {
    el("gen").textContent = fmtW(market.gen_w);
    el("demand").textContent = fmtW(market.demand_w);
    el("surplus").textContent = fmtW(market.surplus_w);
    el("sellable").textContent = `${market.surplus_remaining_wh} Wh`;
    el("traded").textContent =
      `sold ${market.energy_sold_wh} Wh · bought ${market.energy_bought_wh} Wh`;
  } else {
    for (const id of ["gen", "demand", "surplus", "sellable"]) el(id).textContent = "–";
    el("traded").textContent = "market idle (clock outside data range)";
  }

  const pendingNote = el("pending-note");
  if (state.pending) {
    pendingNote.textContent = `request for ${state.pending.units} Wh pending…`;
    pendingNote.className = "pending";
  } else {
    pendingNote.textContent = "";
    pendingNote.className = "hidden";
  }

  const rows = [...snap.sessions]
    .sort((a, b) => b.created_wall - a.created_wall)
    .map((s) => sessionRow(s, state.approving, snap.node_id))
    .join("");
  el("sessions-body").innerHTML =
    rows || `<tr><td colspan="5" class="dim">no trades yet</td></tr>`;

  const last = snap.chain.last_block;
  el("last-block").innerHTML =
    snap.chain.height > 1
      ? `#${last.index} · ${last.amount} Wh · nonce ${last.nonce} · ` +
        `<span class="mono" title="${last.hash}">${shortHash(last.hash)}</span>`
      : "origin block only";

  el("feed").innerHTML = state.feed
    .map((entry) => `<li><span class="mono dim">#${entry.seq}</span> ${entry.detail}</li>`)
    .join("");

  renderForecast(state);
}

function renderForecast(state: UiState): void {
  const canvas = document.getElementById("forecast-canvas") as HTMLCanvasElement | null;
  const label = el("forecast-label");
  const forecast = state.snapshot?.forecast ?? null;
  if (!canvas || !forecast || forecast.points.length === 0) {
    label.textContent = "no forecast loaded";
    return;
  }
  label.textContent = `minute-ahead forecast for ${forecast.date} (${forecast.points.length} steps)`;
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  const { width, height } = canvas;
  ctx.clearRect(0, 0, width, height);
  const values = forecast.points.map((p) => p.predicted_w);
  const peak = Math.max(...values, 1);
  ctx.beginPath();
  values.forEach((v, i) => {
    const x = (i / (values.length - 1)) * (width - 8) + 4;
    const y = height - 4 - (v / peak) * (height - 8);
    if (i === 0) ctx.moveTo(x, y);
    else ctx.lineTo(x, y);
  });
  ctx.strokeStyle = "#e8a33d";
  ctx.lineWidth = 1.5;
  ctx.stroke();
}
