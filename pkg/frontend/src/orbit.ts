import type { CameraRequest } from "./types.js";

export const YAW_LIMIT = (45 * Math.PI) / 180;
export const PITCH_LIMIT = (20 * Math.PI) / 180;

export interface OrbitOptions {
  /** radians of yaw for a drag across the full viewport width */
  yawPerWidth?: number;
  pitchPerHeight?: number;
  width: number;
  height: number;
}

const clamp = (v: number, lim: number) => Math.min(lim, Math.max(-lim, v));

/**
 * Maps pointer drags to a clamped camera request stream. While dragging it
 * emits low-res requests (coalesce-friendly); releasing emits one final
 * hr=true request at the settled camera.
 */
export class OrbitControl {
  yaw = 0;
  pitch = 0;
  private dragging = false;
  private lastX = 0;
  private lastY = 0;
  private readonly yawPerWidth: number;
  private readonly pitchPerHeight: number;

  constructor(
    private readonly emit: (req: CameraRequest) => void,
    private readonly opts: OrbitOptions,
  ) {
    this.yawPerWidth = opts.yawPerWidth ?? 2 * YAW_LIMIT;
    this.pitchPerHeight = opts.pitchPerHeight ?? 2 * PITCH_LIMIT;
  }

  pointerDown(x: number, y: number): void {
    this.dragging = true;
    this.lastX = x;
    this.lastY = y;
  }

  pointerMove(x: number, y: number): void {
    if (!this.dragging) return;
    const dx = x - this.lastX;
    const dy = y - this.lastY;
    this.lastX = x;
    this.lastY = y;
    if (dx === 0 && dy === 0) return;
    this.yaw = clamp(this.yaw + (dx / this.opts.width) * this.yawPerWidth, YAW_LIMIT);
    this.pitch = clamp(this.pitch - (dy / this.opts.height) * this.pitchPerHeight, PITCH_LIMIT);
    this.emit({ yaw: this.yaw, pitch: this.pitch, hr: false });
  }

  pointerUp(): void {
    if (!this.dragging) return;
    this.dragging = false;
    // quality-on-settle: one final high-res frame at the resting camera
    this.emit({ yaw: this.yaw, pitch: this.pitch, hr: true });
  }
}
