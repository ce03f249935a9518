import { FrameStore } from "./frames.js";
import type { CameraRequest } from "./types.js";

export interface ViewerSocket {
  send(data: string): void;
  close(): void;
  onmessage: ((ev: { data: ArrayBuffer }) => void) | null;
  onclose: ((ev: { code: number }) => void) | null;
  onopen: (() => void) | null;
  binaryType?: string;
}

export type SocketFactory = (url: string) => ViewerSocket;

/**
 * Free-view channel: forwards camera requests, keeps the newest frame, and
 * reconnects with the session resumed if the socket drops unexpectedly.
 */
export class ViewChannel {
  readonly frames = new FrameStore();
  private socket: ViewerSocket | null = null;
  private open = false;
  private queue: CameraRequest[] = [];
  private closedByUser = false;

  constructor(
    private readonly url: string,
    private readonly makeSocket: SocketFactory,
    private readonly onFrame: (store: FrameStore) => void,
    private readonly reconnectDelayMs = 1000,
  ) {}

  connect(): void {
    this.closedByUser = false;
    const socket = this.makeSocket(this.url);
    socket.binaryType = "arraybuffer";
    socket.onopen = () => {
      this.open = true;
      for (const req of this.queue.splice(0)) this.request(req);
    };
    socket.onmessage = (ev) => {
      if (this.frames.accept(ev.data)) this.onFrame(this.frames);
    };
    socket.onclose = () => {
      this.open = false;
      this.socket = null;
      if (!this.closedByUser) {
        setTimeout(() => this.connect(), this.reconnectDelayMs);
      }
    };
    this.socket = socket;
  }

  request(req: CameraRequest): void {
    if (!this.socket || !this.open) {
      this.queue = [req]; // latest wins while (re)connecting
      return;
    }
    this.socket.send(JSON.stringify(req));
  }

  close(): void {
    this.closedByUser = true;
    this.socket?.close();
    this.socket = null;
    this.open = false;
  }
}
