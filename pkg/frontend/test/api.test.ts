import { describe, expect, it } from "vitest";

import { ApiError, StudioApi } from "../src/api.js";

const jsonResponse = (body: unknown, status = 200): Response =>
  new Response(JSON.stringify(body), {
    status,
    headers: { "content-type": "application/json" },
  });

describe("StudioApi", () => {
  it("hits the documented endpoints", async () => {
    const calls: { url: string; init?: RequestInit }[] = [];
    const api = new StudioApi("http://svc", async (url, init) => {
      calls.push({ url, init });
      return jsonResponse({ ok: true });
    });
    await api.palette();
    await api.sessionState("abc");
    await api.commitMask("abc", { width: 2, height: 2, b64: "AAAA" });
    await api.undoLast("abc", 4);
    expect(calls.map((c) => c.url)).toEqual([
      "http://svc/palette",
      "http://svc/sessions/abc",
      "http://svc/sessions/abc/edits",
      "http://svc/sessions/abc/edits/last?index=4",
    ]);
    const editBody = JSON.parse(String(calls[2].init?.body));
    expect(editBody.type).toBe("mask-edit");
    expect(calls[3].init?.method).toBe("DELETE");
  });

  it("raises ApiError with the server reason", async () => {
    const api = new StudioApi("", async () =>
      jsonResponse({ reason: "class_out_of_range" }, 400));
    await expect(api.palette()).rejects.toThrowError(ApiError);
    await expect(api.palette()).rejects.toThrow(/class_out_of_range/);
  });
});
