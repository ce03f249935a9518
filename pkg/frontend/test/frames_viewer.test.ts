import { describe, expect, it } from "vitest";

import { FRAME_HEADER_BYTES, FrameStore, parseFrameHeader } from "../src/frames.js";
import { ViewChannel, type ViewerSocket } from "../src/viewer.js";

function frame(frameId: number, width: number, height: number, hr: boolean,
               payload = new Uint8Array([1, 2, 3])): ArrayBuffer {
  const buf = new ArrayBuffer(FRAME_HEADER_BYTES + payload.length);
  const view = new DataView(buf);
  view.setUint32(0, frameId, true);
  view.setUint32(4, width, true);
  view.setUint32(8, height, true);
  view.setUint32(12, hr ? 1 : 0, true);
  new Uint8Array(buf, FRAME_HEADER_BYTES).set(payload);
  return buf;
}

describe("frame protocol", () => {
  it("parses the 16-byte little-endian header", () => {
    const header = parseFrameHeader(frame(9, 32, 16, true));
    expect(header).toEqual({ frameId: 9, width: 32, height: 16, hr: true });
  });

  it("rejects truncated frames", () => {
    expect(() => parseFrameHeader(new ArrayBuffer(4))).toThrow(/shorter/);
  });

  it("keeps only the newest frame", () => {
    const store = new FrameStore();
    expect(store.accept(frame(1, 8, 8, false))).toBe(true);
    expect(store.accept(frame(3, 8, 8, true))).toBe(true);
    expect(store.accept(frame(2, 8, 8, false))).toBe(false); // stale
    expect(store.current?.header.frameId).toBe(3);
    expect([...(store.current?.png ?? [])]).toEqual([1, 2, 3]);
  });
});

class FakeSocket implements ViewerSocket {
  sent: string[] = [];
  closed = false;
  onmessage: ((ev: { data: ArrayBuffer }) => void) | null = null;
  onclose: ((ev: { code: number }) => void) | null = null;
  onopen: (() => void) | null = null;
  binaryType?: string;

  send(data: string): void {
    this.sent.push(data);
  }

  close(): void {
    this.closed = true;
    this.onclose?.({ code: 1000 });
  }
}

describe("ViewChannel", () => {
  it("queues the latest request until the socket opens", () => {
    const sockets: FakeSocket[] = [];
    const channel = new ViewChannel(
      "ws://test",
      () => {
        const s = new FakeSocket();
        sockets.push(s);
        return s;
      },
      () => undefined,
    );
    channel.connect();
    channel.request({ yaw: 0.1, pitch: 0, hr: false });
    channel.request({ yaw: 0.2, pitch: 0, hr: true });
    expect(sockets[0].sent).toHaveLength(0);
    sockets[0].onopen?.();
    expect(sockets[0].sent).toHaveLength(1); // only the latest queued request
    expect(JSON.parse(sockets[0].sent[0]).yaw).toBeCloseTo(0.2);
    channel.close();
  });

  it("delivers frames through the latest-wins store", () => {
    const sockets: FakeSocket[] = [];
    let delivered = 0;
    const channel = new ViewChannel(
      "ws://test",
      () => {
        const s = new FakeSocket();
        sockets.push(s);
        return s;
      },
      () => {
        delivered += 1;
      },
    );
    channel.connect();
    sockets[0].onopen?.();
    sockets[0].onmessage?.({ data: frame(1, 8, 8, false) });
    sockets[0].onmessage?.({ data: frame(1, 8, 8, false) }); // duplicate id: dropped
    expect(delivered).toBe(1);
    expect(channel.frames.current?.header.frameId).toBe(1);
    channel.close();
  });
});
