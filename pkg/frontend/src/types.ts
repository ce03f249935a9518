export interface PaletteClass {
  index: number;
  name: string;
  color: [number, number, number];
}

export interface Palette {
  num_classes: number;
  classes: PaletteClass[];
}

export interface SessionHandle {
  id: string;
  state: "initializing" | "inverting" | "ready" | "failed";
  progress?: number;
  error?: string | null;
  edits?: number;
}

export interface MaskPayload {
  width: number;
  height: number;
  b64: string;
}

export interface EditReceipt {
  index: number;
  unchanged: boolean;
  content_hash: string;
  preview_b64: string;
}

export interface CameraRequest {
  yaw: number; // radians
  pitch: number; // radians
  hr: boolean;
}

export interface FrameHeader {
  frameId: number;
  width: number;
  height: number;
  hr: boolean;
}
