import type { MaskPayload, Palette } from "./types.js";

export interface BrushState {
  classIndex: number;
  radius: number; // pixels, >= 1
  erase: boolean; // erase paints the background class
}

export interface StrokePoint {
  x: number;
  y: number;
}

const BACKGROUND_CLASS = 0;

/** Index mask held as a flat Uint8Array, row-major, one byte per pixel. */
export class MaskModel {
  readonly width: number;
  readonly height: number;
  data: Uint8Array;

  constructor(width: number, height: number, data?: Uint8Array) {
    this.width = width;
    this.height = height;
    this.data = data ? Uint8Array.from(data) : new Uint8Array(width * height);
    if (this.data.length !== width * height) {
      throw new Error("mask payload size does not match dimensions");
    }
  }

  clone(): MaskModel {
    return new MaskModel(this.width, this.height, this.data);
  }

  at(x: number, y: number): number {
    return this.data[y * this.width + x];
  }

  fill(classIndex: number): void {
    this.data.fill(checkClass(classIndex));
  }

  equals(other: MaskModel): boolean {
    if (other.width !== this.width || other.height !== this.height) return false;
    for (let i = 0; i < this.data.length; i++) {
      if (this.data[i] !== other.data[i]) return false;
    }
    return true;
  }
}

export function checkClass(classIndex: number, numClasses = 19): number {
  if (!Number.isInteger(classIndex) || classIndex < 0 || classIndex >= numClasses) {
    throw new Error(`class index out of range: ${classIndex}`);
  }
  return classIndex;
}

function stampDisc(mask: MaskModel, cx: number, cy: number, radius: number, value: number): void {
  const r = Math.max(1, radius);
  const x0 = Math.max(0, Math.floor(cx - r));
  const x1 = Math.min(mask.width - 1, Math.ceil(cx + r));
  const y0 = Math.max(0, Math.floor(cy - r));
  const y1 = Math.min(mask.height - 1, Math.ceil(cy + r));
  const r2 = r * r;
  for (let y = y0; y <= y1; y++) {
    for (let x = x0; x <= x1; x++) {
      const dx = x - cx;
      const dy = y - cy;
      if (dx * dx + dy * dy <= r2) {
        mask.data[y * mask.width + x] = value;
      }
    }
  }
}

/**
 * Rasterize a stroke into the mask: discs stamped along each path segment.
 * A zero-length path changes nothing. Returns the same (mutated) mask.
 */
export function paintStroke(mask: MaskModel, path: StrokePoint[], brush: BrushState): MaskModel {
  if (path.length === 0) return mask;
  const value = brush.erase ? BACKGROUND_CLASS : checkClass(brush.classIndex);
  const radius = Math.max(1, brush.radius);
  if (path.length === 1) {
    stampDisc(mask, path[0].x, path[0].y, radius, value);
    return mask;
  }
  for (let i = 1; i < path.length; i++) {
    const a = path[i - 1];
    const b = path[i];
    const steps = Math.max(1, Math.ceil(Math.hypot(b.x - a.x, b.y - a.y)));
    for (let s = 0; s <= steps; s++) {
      const t = s / steps;
      stampDisc(mask, a.x + (b.x - a.x) * t, a.y + (b.y - a.y) * t, radius, value);
    }
  }
  return mask;
}

/** Wire encoding shared with the service: raw bytes, base64. */
export function encodeMask(mask: MaskModel): MaskPayload {
  let binary = "";
  const chunk = 0x8000;
  for (let i = 0; i < mask.data.length; i += chunk) {
    binary += String.fromCharCode(...mask.data.subarray(i, i + chunk));
  }
  return { width: mask.width, height: mask.height, b64: btoa(binary) };
}

export function decodeMask(payload: MaskPayload): MaskModel {
  const binary = atob(payload.b64);
  const data = new Uint8Array(binary.length);
  for (let i = 0; i < binary.length; i++) {
    data[i] = binary.charCodeAt(i);
  }
  return new MaskModel(payload.width, payload.height, data);
}

/** RGBA overlay of the mask using the palette colors (for canvas display). */
export function maskToRgba(mask: MaskModel, palette: Palette, alpha = 160): Uint8ClampedArray {
  const lut = new Uint8ClampedArray(palette.num_classes * 3);
  for (const cls of palette.classes) {
    lut.set(cls.color, cls.index * 3);
  }
  const out = new Uint8ClampedArray(mask.data.length * 4);
  for (let i = 0; i < mask.data.length; i++) {
    const c = mask.data[i] * 3;
    out[i * 4] = lut[c];
    out[i * 4 + 1] = lut[c + 1];
    out[i * 4 + 2] = lut[c + 2];
    out[i * 4 + 3] = alpha;
  }
  return out;
}
