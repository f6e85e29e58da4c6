import type { RankedSpec } from "./api.js";
import { formatProbability, fullPrecision, productLabel } from "./format.js";
import type { HistoryEntry, Session } from "./state.js";

export interface Elements {
  picker: HTMLSelectElement;
  question: HTMLInputElement;
  ask: HTMLButtonElement;
  history: HTMLElement;
  status: HTMLElement;
}

export function grabElements(doc: Document): Elements {
  const get = <T extends HTMLElement>(id: string): T => {
    const el = doc.getElementById(id);
    if (!el) throw new Error(`missing #${id}`);
    return el as T;
  };
  return {
    picker: get<HTMLSelectElement>("product-picker"),
    question: get<HTMLInputElement>("question-input"),
    ask: get<HTMLButtonElement>("ask-button"),
    history: get<HTMLElement>("history"),
    status: get<HTMLElement>("status"),
  };
}

function rankedTable(doc: Document, ranked: RankedSpec[]): HTMLTableElement {
  const table = doc.createElement("table");
  table.className = "ranked";
  for (const spec of ranked) {
    const row = table.insertRow();
    row.insertCell().textContent = spec.spec_name;
    row.insertCell().textContent = spec.spec_value;
    const prob = row.insertCell();
    prob.className = "prob";
    prob.textContent = formatProbability(spec.probability);
    prob.title = fullPrecision(spec.probability);
  }
  return table;
}

function entryBlock(doc: Document, entry: HistoryEntry): HTMLElement {
  const block = doc.createElement("div");
  block.className = "entry";

  const q = doc.createElement("div");
  q.className = "question";
  q.textContent = `${entry.productId}: ${entry.question}`;
  block.appendChild(q);

  if (entry.response) {
    const answer = doc.createElement("div");
    answer.className = "answer";
    answer.textContent = entry.response.answer_sentence;
    block.appendChild(answer);
    block.appendChild(rankedTable(doc, entry.response.ranked));
  } else if (entry.error) {
    const err = doc.createElement("div");
    err.className = "error";
    err.textContent = entry.error;
    block.appendChild(err);
  } else {
    const waiting = doc.createElement("div");
    waiting.className = "waiting";
    waiting.textContent = "waiting for the model...";
    block.appendChild(waiting);
  }
  return block;
}

/** Full redraw from the session. Cheap at chat scale and keeps the DOM a
 * pure function of the state, which is what the tests rely on. */
export function render(session: Session, els: Elements): void {
  const doc = els.history.ownerDocument;

  const previous = els.picker.value;
  els.picker.replaceChildren();
  for (const p of session.products) {
    const opt = doc.createElement("option");
    opt.value = p.product_id;
    opt.textContent = productLabel(p.product_id, p.category, p.spec_count);
    els.picker.appendChild(opt);
  }
  const selectedId = session.selected?.product_id ?? previous;
  if (selectedId) els.picker.value = selectedId;

  els.ask.disabled = session.pending;

  els.history.replaceChildren();
  for (const entry of session.history) {
    els.history.appendChild(entryBlock(doc, entry));
  }
}

export function renderStatus(els: Elements, text: string, isError = false): void {
  els.status.textContent = text;
  els.status.className = isError ? "status error" : "status";
}
