import type { ProductSummary, RankResponse } from "./api.js";

/** One submitted question. Exactly one of response/error gets filled when
 * the request settles; until then the entry is the pending one. */
export interface HistoryEntry {
  question: string;
  productId: string;
  response?: RankResponse;
  error?: string;
}

export type RejectReason = "empty" | "no-product" | "busy";

/**
 * Session state for the ask loop. History is append-only and at most one
 * request is in flight: begin() refuses a second submission until the first
 * one settled. All mutation goes through the four methods so the UI can
 * re-render after each.
 */
export class Session {
  products: ProductSummary[] = [];
  selected: ProductSummary | null = null;
  history: HistoryEntry[] = [];
  pending = false;

  setProducts(products: ProductSummary[]): void {
    this.products = products;
    if (this.selected && !products.some((p) => p.product_id === this.selected!.product_id)) {
      this.selected = null;
    }
  }

  selectProduct(productId: string): void {
    this.selected = this.products.find((p) => p.product_id === productId) ?? null;
  }

  /** Validate and append a pending history entry. Returns the entry index,
   * or the reason the submission was refused (in which case nothing was
   * appended and no request should be sent). */
  begin(question: string): number | RejectReason {
    if (this.pending) return "busy";
    if (!this.selected) return "no-product";
    if (question.trim() === "") return "empty";
    this.pending = true;
    this.history.push({ question, productId: this.selected.product_id });
    return this.history.length - 1;
  }

  resolve(index: number, response: RankResponse): void {
    this.settle(index).response = response;
  }

  fail(index: number, message: string): void {
    this.settle(index).error = message;
  }

  private settle(index: number): HistoryEntry {
    const entry = this.history[index];
    if (!entry) throw new Error(`no history entry at ${index}`);
    if (entry.response || entry.error) throw new Error(`entry ${index} already settled`);
    this.pending = false;
    return entry;
  }
}
