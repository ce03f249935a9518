import type { EditReceipt, MaskPayload, Palette, SessionHandle } from "./types.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly reason: string,
  ) {
    super(`api error ${status}: ${reason}`);
  }
}

/** Thin REST client over the studio service; transport is injectable for tests. */
export class StudioApi {
  constructor(
    readonly baseUrl: string,
    private readonly fetchFn: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const res = await this.fetchFn(`${this.baseUrl}${path}`, init);
    if (!res.ok) {
      let reason = res.statusText;
      try {
        reason = JSON.stringify(await res.json());
      } catch {
        /* non-JSON error body */
      }
      throw new ApiError(res.status, reason);
    }
    return (await res.json()) as T;
  }

  palette(): Promise<Palette> {
    return this.request<Palette>("/palette");
  }

  async createSession(image: Blob, mask: Blob): Promise<SessionHandle> {
    const form = new FormData();
    form.append("image", image, "image.png");
    form.append("mask", mask, "mask.png");
    return this.request<SessionHandle>("/sessions", { method: "POST", body: form });
  }

  sessionState(id: string): Promise<SessionHandle> {
    return this.request<SessionHandle>(`/sessions/${id}`);
  }

  canonicalMask(id: string): Promise<MaskPayload> {
    return this.request<MaskPayload>(`/sessions/${id}/mask`);
  }

  preview(id: string): Promise<{ preview_b64: string; content_hash: string }> {
    return this.request(`/sessions/${id}/preview`);
  }

  commitMask(id: string, mask: MaskPayload): Promise<EditReceipt> {
    return this.request<EditReceipt>(`/sessions/${id}/edits`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ type: "mask-edit", mask }),
    });
  }

  restyle(id: string, classes: string[], styleSeed: number): Promise<EditReceipt> {
    return this.request<EditReceipt>(`/sessions/${id}/edits`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({
        type: "region-restyle",
        assignments: [{ classes, style_seed: styleSeed }],
      }),
    });
  }

  styleMix(id: string, layers: number[], styleSeed: number): Promise<EditReceipt> {
    return this.request<EditReceipt>(`/sessions/${id}/edits`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ type: "style-mix", block: "texture", layers, style_seed: styleSeed }),
    });
  }

  undoLast(id: string, index?: number): Promise<EditReceipt> {
    const suffix = index === undefined ? "" : `?index=${index}`;
    return this.request<EditReceipt>(`/sessions/${id}/edits/last${suffix}`, {
      method: "DELETE",
    });
  }
}
