import { StudioApi } from "./api.js";
import { MaskCommitQueue } from "./commits.js";
import { decodeMask, MaskModel, maskToRgba, paintStroke, type BrushState } from "./mask.js";
import { OrbitControl } from "./orbit.js";
import type { Palette } from "./types.js";
import { ViewChannel } from "./viewer.js";

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
};

async function boot(): Promise<void> {
  const api = new StudioApi("");
  const palette: Palette = await api.palette();

  const classSelect = $<HTMLSelectElement>("brush-class");
  for (const cls of palette.classes) {
    const opt = document.createElement("option");
    opt.value = String(cls.index);
    opt.textContent = `${cls.index} ${cls.name}`;
    classSelect.append(opt);
  }
  classSelect.value = "13"; // hair: the most common first edit

  const brush: BrushState = { classIndex: 13, radius: 3, erase: false };
  classSelect.onchange = () => (brush.classIndex = Number(classSelect.value));
  const radiusInput = $<HTMLInputElement>("brush-radius");
  radiusInput.onchange = () => (brush.radius = Number(radiusInput.value));
  $<HTMLInputElement>("brush-erase").onchange = (e) =>
    (brush.erase = (e.target as HTMLInputElement).checked);

  const statusEl = $<HTMLSpanElement>("status");
  const setStatus = (text: string) => (statusEl.textContent = text);

  const imageInput = $<HTMLInputElement>("file-image");
  const maskInput = $<HTMLInputElement>("file-mask");
  let sessionId: string | null = null;
  let mask: MaskModel | null = null;

  const maskCanvas = $<HTMLCanvasElement>("mask-canvas");
  const previewImg = $<HTMLImageElement>("preview");
  const viewImg = $<HTMLImageElement>("view");

  const drawMask = () => {
    if (!mask) return;
    const ctx = maskCanvas.getContext("2d");
    if (!ctx) return;
    maskCanvas.width = mask.width;
    maskCanvas.height = mask.height;
    const img = ctx.createImageData(mask.width, mask.height);
    img.data.set(maskToRgba(mask, palette, 255));
    ctx.putImageData(img, 0, 0);
  };

  let queue: MaskCommitQueue | null = null;

  const refreshPreview = (previewB64: string) => {
    previewImg.src = `data:image/png;base64,${previewB64}`;
  };

  $<HTMLButtonElement>("create-session").onclick = async () => {
    const image = imageInput.files?.[0];
    const maskFile = maskInput.files?.[0];
    if (!image || !maskFile) {
      setStatus("choose an image and a mask first");
      return;
    }
    setStatus("inverting...");
    const handle = await api.createSession(image, maskFile);
    sessionId = handle.id;
    const poll = setInterval(async () => {
      if (!sessionId) return;
      const state = await api.sessionState(sessionId);
      setStatus(`${state.state} ${(100 * (state.progress ?? 0)).toFixed(0)}%`);
      if (state.state === "ready") {
        clearInterval(poll);
        mask = decodeMask(await api.canonicalMask(sessionId));
        drawMask();
        refreshPreview((await api.preview(sessionId)).preview_b64);
        queue = new MaskCommitQueue(
          (payload) => api.commitMask(sessionId as string, payload),
          {
            onReceipt: (receipt) => {
              // server preview replaces the optimistic overlay
              refreshPreview(receipt.preview_b64);
              setStatus(receipt.unchanged ? "no change" : `edit #${receipt.index}`);
            },
            onOffline: (attempt) => setStatus(`offline, retry #${attempt}`),
          },
        );
        connectViewer();
      }
      if (state.state === "failed") {
        clearInterval(poll);
        setStatus(`failed: ${state.error}`);
      }
    }, 500);
  };

  let drawing = false;
  let path: { x: number; y: number }[] = [];
  const canvasPos = (ev: PointerEvent) => {
    const rect = maskCanvas.getBoundingClientRect();
    return {
      x: ((ev.clientX - rect.left) / rect.width) * maskCanvas.width,
      y: ((ev.clientY - rect.top) / rect.height) * maskCanvas.height,
    };
  };
  maskCanvas.onpointerdown = (ev) => {
    if (!mask) return;
    drawing = true;
    path = [canvasPos(ev)];
  };
  maskCanvas.onpointermove = (ev) => {
    if (!drawing || !mask) return;
    path.push(canvasPos(ev));
    paintStroke(mask, path.slice(-2), brush);
    drawMask();
    queue?.maskChanged(mask);
  };
  maskCanvas.onpointerup = () => {
    drawing = false;
    queue?.flush();
  };

  $<HTMLButtonElement>("undo").onclick = async () => {
    if (!sessionId) return;
    const receipt = await api.undoLast(sessionId);
    refreshPreview(receipt.preview_b64);
    mask = decodeMask(await api.canonicalMask(sessionId));
    drawMask();
  };

  $<HTMLButtonElement>("restyle-hair").onclick = async () => {
    if (!sessionId) return;
    const receipt = await api.restyle(sessionId, ["hair"], Math.floor(Math.random() * 1e6));
    refreshPreview(receipt.preview_b64);
  };

  function connectViewer(): void {
    if (!sessionId) return;
    const proto = location.protocol === "https:" ? "wss" : "ws";
    const channel = new ViewChannel(
      `${proto}://${location.host}/sessions/${sessionId}/view`,
      (url) => new WebSocket(url) as unknown as import("./viewer.js").ViewerSocket,
      (frames) => {
        const frame = frames.current;
        if (!frame) return;
        viewImg.src = URL.createObjectURL(new Blob([frame.png.slice()], { type: "image/png" }));
      },
    );
    channel.connect();
    const orbit = new OrbitControl((req) => channel.request(req), {
      width: viewImg.clientWidth || 256,
      height: viewImg.clientHeight || 256,
    });
    viewImg.onpointerdown = (ev) => {
      viewImg.setPointerCapture(ev.pointerId);
      orbit.pointerDown(ev.clientX, ev.clientY);
    };
    viewImg.onpointermove = (ev) => orbit.pointerMove(ev.clientX, ev.clientY);
    viewImg.onpointerup = () => orbit.pointerUp();
    channel.request({ yaw: 0, pitch: 0, hr: true });
  }
}

void boot();
