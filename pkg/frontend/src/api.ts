/** Thin typed client for the annotation service HTTP API. */

import type { RleMask } from "./rle.js";

export interface ItemSummary {
  item_id: string;
  image: string;
  source: string;
  quality_text: string;
  n_annotations: number;
}

export interface ItemPage {
  total: number;
  page: number;
  items: ItemSummary[];
}

export interface WorkingRegion {
  class: number;
  mask: RleMask;
}

export interface SessionView {
  session_id: string;
  item_id: string;
  annotator_id: string;
  reference_text: string;
  candidates: RleMask[];
  working: WorkingRegion[];
  state: "open" | "submitted";
}

export interface BlockEdit {
  op: "add" | "remove";
  x: number;
  y: number;
  size?: number;
}

export class ApiError extends Error {
  constructor(
    public status: number,
    public detail: string,
  ) {
    super(`API error ${status}: ${detail}`);
  }
}

export class ApiClient {
  constructor(private baseUrl: string) {
    this.baseUrl = baseUrl.replace(/\/$/, "");
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const resp = await fetch(this.baseUrl + path, {
      method,
      headers: body === undefined ? {} : { "Content-Type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const payload = await resp.json().catch(() => ({}));
    if (!resp.ok) {
      const detail =
        typeof payload === "object" && payload !== null && "detail" in payload
          ? String((payload as { detail: unknown }).detail)
          : resp.statusText;
      throw new ApiError(resp.status, detail);
    }
    return payload as T;
  }

  listItems(page = 1, pageSize = 50): Promise<ItemPage> {
    return this.request("GET", `/api/items?page=${page}&page_size=${pageSize}`);
  }

  createSession(itemId: string, annotatorId: string): Promise<SessionView> {
    return this.request("POST", "/api/sessions", {
      item_id: itemId,
      annotator_id: annotatorId,
    });
  }

  getSession(sessionId: string): Promise<SessionView> {
    return this.request("GET", `/api/sessions/${sessionId}`);
  }

  pick(sessionId: string, x: number, y: number): Promise<{ region: RleMask | null }> {
    return this.request("POST", `/api/sessions/${sessionId}/pick`, { x, y });
  }

  adjust(
    sessionId: string,
    mask: RleMask,
    edits: BlockEdit[],
  ): Promise<{ region: RleMask }> {
    return this.request("POST", `/api/sessions/${sessionId}/adjust`, { mask, edits });
  }

  label(sessionId: string, mask: RleMask, cls: number): Promise<SessionView> {
    return this.request("POST", `/api/sessions/${sessionId}/label`, { mask, cls });
  }

  submit(sessionId: string): Promise<{ session_id: string; annotation_id: string }> {
    return this.request("POST", `/api/sessions/${sessionId}/submit`);
  }

  imageUrl(itemId: string): string {
    return `${this.baseUrl}/api/items/${itemId}/image`;
  }
}
