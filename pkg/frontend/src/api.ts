/** Typed client for the ranking service. The three endpoints below are the
 * only coupling to the backend; every schema mirrors the service's JSON. */

export interface ProductSummary {
  product_id: string;
  category: string;
  spec_count: number;
}

export interface RankedSpec {
  spec_name: string;
  spec_value: string;
  probability: number;
}

export interface RankResponse {
  product_id: string;
  ranked: RankedSpec[];
  answer_sentence: string;
}

export interface HealthResponse {
  status: string;
  checkpoint_digest: string;
  vocab_size: number;
}

export interface RankRequest {
  product_id: string;
  question: string;
  top_k?: number;
}

/** status 0 means the service could not be reached at all. */
export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
    this.name = "ApiError";
  }
}

async function request<T>(baseUrl: string, path: string, init?: RequestInit): Promise<T> {
  let res: Response;
  try {
    res = await fetch(baseUrl + path, init);
  } catch {
    throw new ApiError(0, "service unreachable");
  }
  if (!res.ok) {
    // the service answers errors as {code, message}; fall back to the status
    // line when the body is not in that shape
    let message = `request failed (${res.status})`;
    try {
      const body: unknown = await res.json();
      if (body && typeof body === "object" && "message" in body) {
        message = String((body as { message: unknown }).message);
      }
    } catch {
      // keep the fallback message
    }
    throw new ApiError(res.status, message);
  }
  return (await res.json()) as T;
}

export function getHealth(baseUrl = ""): Promise<HealthResponse> {
  return request<HealthResponse>(baseUrl, "/healthz");
}

export function getProducts(baseUrl = ""): Promise<ProductSummary[]> {
  return request<ProductSummary[]>(baseUrl, "/products");
}

export function postRank(req: RankRequest, baseUrl = ""): Promise<RankResponse> {
  return request<RankResponse>(baseUrl, "/rank", {
    method: "POST",
    headers: { "content-type": "application/json" },
    body: JSON.stringify(req),
  });
}
