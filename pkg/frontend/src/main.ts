/** Entry point: bind one console to one node (`?node=http://127.0.0.1:8401`). */

import { approveTrade, requestTrade } from "./api.js";
import { render } from "./render.js";
import {
  applyEvent,
  applySnapshot,
  attachOrderId,
  beginApprove,
  beginRequest,
  checkStaleness,
  clearPending,
  initialState,
  markConnection,
  UiState,
} from "./state.js";
import { NodeTransport } from "./transport.js";
import { validateUnits } from "./validate.js";

const params = new URLSearchParams(window.location.search);
const base = (params.get("node") ?? "http://127.0.0.1:8401").replace(/\/$/, "");

let state: UiState = initialState();

function update(next: UiState): void {
  state = next;
  render(state);
}

const transport = new NodeTransport(base, {
  onEvent: (event) => update(applyEvent(state, event)),
  onSnapshot: (snapshot) => update(applySnapshot(state, snapshot)),
  onStatusChange: (status) =>
    update(markConnection(state, status === "live" ? "live" : status)),
});

transport.start();
setInterval(() => update(checkStaleness(state, Date.now())), 1_000);

const form = document.getElementById("request-form") as HTMLFormElement;
const unitsInput = document.getElementById("units-input") as HTMLInputElement;
const requestError = document.getElementById("request-error") as HTMLElement;

form.addEventListener("submit", (submitEvent) => {
  submitEvent.preventDefault();
  void (async () => {
    const balance = state.snapshot?.balance ?? null;
    const verdict = validateUnits(unitsInput.value, balance);
    if (!verdict.ok) {
      requestError.textContent = verdict.error ?? "invalid input";
      return;
    }
    requestError.textContent = "";
    const units = Number(unitsInput.value.trim());
    update(beginRequest(state, units));
    const result = await requestTrade(base, units);
    if (result.ok) {
      update(attachOrderId(state, result.value.order_id));
      unitsInput.value = "";
    } else {
      update(clearPending(state));
      requestError.textContent = result.error.detail;
    }
  })();
});

document.getElementById("sessions-body")?.addEventListener("click", (clickEvent) => {
  const target = clickEvent.target as HTMLElement;
  const orderId = target.getAttribute("data-approve");
  if (!orderId || state.approving.has(orderId)) return;
  update(beginApprove(state, orderId));
  void approveTrade(base, orderId).then((result) => {
    if (!result.ok) {
      // the rejection reason also arrives on the session row via the stream
      const row = document.querySelector(`tr[data-order="${orderId}"] td:nth-child(4)`);
      if (row) row.textContent = `rejected (${result.error.detail})`;
    }
  });
});

document.getElementById("node-url")!.textContent = base;
