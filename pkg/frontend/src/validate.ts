/** Client-side input checks. These only save a round trip: the node is the
 * sole authority and re-validates everything. */

export interface ValidationResult {
  ok: boolean;
  error?: string;
}

export function validateUnits(raw: string, balance: number | null): ValidationResult {
  const trimmed = raw.trim();
  if (trimmed === "") {
    return { ok: false, error: "enter the units (Wh) to request" };
  }
  if (!/^\d+$/.test(trimmed)) {
    return { ok: false, error: "units must be a whole positive number" };
  }
  const units = Number(trimmed);
  if (units <= 0) {
    return { ok: false, error: "units must be greater than zero" };
  }
  if (!Number.isSafeInteger(units)) {
    return { ok: false, error: "units is too large" };
  }
  if (balance !== null && units > balance) {
    return { ok: false, error: `insufficient tokens: balance is ${balance}` };
  }
  return { ok: true };
}
