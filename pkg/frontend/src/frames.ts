import type { FrameHeader } from "./types.js";

export const FRAME_HEADER_BYTES = 16;

/** Parse the 16-byte little-endian frame header: id, width, height, flags. */
export function parseFrameHeader(buffer: ArrayBuffer): FrameHeader {
  if (buffer.byteLength < FRAME_HEADER_BYTES) {
    throw new Error(`frame shorter than header: ${buffer.byteLength} bytes`);
  }
  const view = new DataView(buffer);
  return {
    frameId: view.getUint32(0, true),
    width: view.getUint32(4, true),
    height: view.getUint32(8, true),
    hr: (view.getUint32(12, true) & 1) === 1,
  };
}

export function framePng(buffer: ArrayBuffer): Uint8Array {
  return new Uint8Array(buffer, FRAME_HEADER_BYTES);
}

/** Latest-wins frame store: stale frames (by id) never replace newer ones. */
export class FrameStore {
  private lastId = -1;
  current: { header: FrameHeader; png: Uint8Array } | null = null;

  accept(buffer: ArrayBuffer): boolean {
    const header = parseFrameHeader(buffer);
    if (header.frameId <= this.lastId) return false;
    this.lastId = header.frameId;
    this.current = { header, png: framePng(buffer) };
    return true;
  }
}
