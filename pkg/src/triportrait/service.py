"""Session-oriented editing service: HTTP for inversion/edits, WS for view frames.

Binary frame protocol: 16-byte little-endian header (frame id, width, height,
flags bit0 = hr) followed by PNG bytes. Edits are serialized per session;
camera requests are coalesced per connection (latest wins, one render in
flight).
"""

from __future__ import annotations

import asyncio
import base64
import hashlib
import io
import json
import math
import os
import struct
import threading
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from fastapi import FastAPI, HTTPException, Request, UploadFile, WebSocket, WebSocketDisconnect
from fastapi.responses import JSONResponse
from PIL import Image

from .camera import pose_from_angles
from .checkpoint import load_container, load_generator_checkpoint, load_state_arrays
from .config import InversionConfig
from .editing import RegionStyleSpec, global_style_adjust, region_restyle, render_view
from .encoders import PortraitEncoder
from .errors import RejectedInputError
from .inversion import Session, apply_mask_edit, hybrid_invert, load_session, save_session
from .palette import NUM_CLASSES, class_indices, palette_json


YAW_RANGE = math.radians(45.0)
PITCH_RANGE = math.radians(20.0)


@dataclass
class ServiceConfig:
    checkpoint: str
    session_dir: str = "sessions"
    max_sessions: int = 8
    max_upload_bytes: int = 8 * 1024 * 1024
    n_opt: int = 300
    n_pti: int = 350
    port: int = 8321

    @classmethod
    def load(cls, path: str | None = None) -> "ServiceConfig":
        """JSON config file with environment overrides."""
        data = {}
        if path:
            data = json.loads(Path(path).read_text())
        if os.environ.get("STUDIO_CKPT"):
            data["checkpoint"] = os.environ["STUDIO_CKPT"]
        if os.environ.get("STUDIO_PORT"):
            data["port"] = int(os.environ["STUDIO_PORT"])
        if os.environ.get("STUDIO_MAX_SESSIONS"):
            data["max_sessions"] = int(os.environ["STUDIO_MAX_SESSIONS"])
        if "checkpoint" not in data:
            raise ValueError("service needs a checkpoint (config file or STUDIO_CKPT)")
        return cls(**data)


@dataclass
class SessionEntry:
    id: str
    state: str = "initializing"   # initializing | inverting | ready | failed
    progress: float = 0.0
    error: str | None = None
    session: Session | None = None
    lock: threading.Lock = field(default_factory=threading.Lock)


def _png_bytes(array: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(array).save(buf, format="PNG")
    return buf.getvalue()


def _image_to_png_b64(image: torch.Tensor) -> str:
    arr = ((image.permute(1, 2, 0).numpy() + 1) * 127.5).round().clip(0, 255).astype(np.uint8)
    return base64.b64encode(_png_bytes(arr)).decode("ascii")


def _decode_png(data: bytes):
    try:
        return Image.open(io.BytesIO(data))
    except Exception:
        raise RejectedInputError("not a decodable image")


class Studio:
    """Owns the model stack and all live sessions."""

    def __init__(self, cfg: ServiceConfig):
        self.cfg = cfg
        self.generator, segments, meta = load_generator_checkpoint(cfg.checkpoint)
        res = self.generator.render_cfg.output_resolution
        self.encoder = PortraitEncoder(**meta.get("encoder_cfg", {"resolution": res}))
        self.encoder_can = PortraitEncoder(
            **meta.get("encoder_canonical_cfg", {"resolution": res}))
        if "encoder" in segments:
            load_state_arrays(self.encoder, segments["encoder"])
        if "encoder.canonical" in segments:
            load_state_arrays(self.encoder_can, segments["encoder.canonical"])
        self.encoder.eval()
        self.encoder_can.eval()
        self.sessions: dict[str, SessionEntry] = {}
        self.executor = ThreadPoolExecutor(max_workers=2)
        self.session_dir = Path(cfg.session_dir)
        self.session_dir.mkdir(parents=True, exist_ok=True)
        self._restore_sessions()

    # -- persistence ------------------------------------------------------------

    def _session_path(self, sid: str) -> Path:
        return self.session_dir / f"{sid}.session"

    def _restore_sessions(self) -> None:
        for path in sorted(self.session_dir.glob("*.session")):
            sid = path.stem
            try:
                session = load_session(path, self.generator, self.encoder_can)
            except Exception:
                continue  # stale or incompatible file; skip
            self.sessions[sid] = SessionEntry(sid, state="ready", progress=1.0,
                                              session=session)

    def persist(self, entry: SessionEntry) -> None:
        save_session(entry.session, self._session_path(entry.id))

    # -- session lifecycle --------------------------------------------------------

    def validate_upload(self, image_bytes: bytes, mask_bytes: bytes):
        res = self.generator.render_cfg.output_resolution
        if max(len(image_bytes), len(mask_bytes)) > self.cfg.max_upload_bytes:
            raise HTTPException(413, detail={"reason": "payload_too_large"})
        img = _decode_png(image_bytes).convert("RGB")
        msk = _decode_png(mask_bytes)
        if img.size != (res, res) or msk.size != (res, res):
            raise RejectedInputError(f"inputs must be {res}x{res}")
        mask = np.asarray(msk)
        if mask.ndim == 3:
            mask = mask[..., 0]
        if mask.max() >= NUM_CLASSES:
            raise RejectedInputError("class_out_of_range")
        image = torch.from_numpy(np.asarray(img, dtype=np.float32) / 127.5 - 1.0
                                 ).permute(2, 0, 1)
        return image, torch.from_numpy(mask.astype(np.int64))

    def start_session(self, image: torch.Tensor, mask: torch.Tensor) -> SessionEntry:
        active = sum(1 for e in self.sessions.values() if e.state != "failed")
        if active >= self.cfg.max_sessions:
            raise HTTPException(429, detail={"reason": "session_cap_reached"})
        entry = SessionEntry(uuid.uuid4().hex)
        self.sessions[entry.id] = entry

        def job():
            entry.state = "inverting"
            try:
                inv_cfg = InversionConfig(n_opt=self.cfg.n_opt, n_pti=self.cfg.n_pti)

                def on_progress(frac):
                    entry.progress = float(frac)

                session = hybrid_invert(self.generator, self.encoder, image, mask,
                                        inv_cfg, progress=on_progress)
                entry.session = session
                entry.state = "ready"
                entry.progress = 1.0
                self.persist(entry)
            except Exception as e:  # surfaced via GET /sessions/{id}
                entry.state = "failed"
                entry.error = str(e)

        self.executor.submit(job)
        return entry

    def entry(self, sid: str) -> SessionEntry:
        if sid not in self.sessions:
            raise HTTPException(404, detail={"reason": "unknown_session"})
        return self.sessions[sid]

    def ready_entry(self, sid: str) -> SessionEntry:
        entry = self.entry(sid)
        if entry.state != "ready":
            raise HTTPException(409, detail={"reason": "session_not_ready",
                                             "state": entry.state})
        return entry

    # -- edits -------------------------------------------------------------------

    def _styles_from_seed(self, seed: int) -> torch.Tensor:
        z = torch.randn(1, self.generator.model_cfg.style_dim,
                        generator=torch.Generator().manual_seed(int(seed)))
        rcfg = self.generator.render_cfg
        cond = pose_from_angles(0.0, 0.0, radius=rcfg.camera_radius, focal=rcfg.focal)
        with torch.no_grad():
            styles = self.generator.map_latent(z, cond)
        return styles.layers

    def apply_edit(self, entry: SessionEntry, payload: dict) -> dict:
        session = entry.session
        kind = payload.get("type")
        before_hash = session.canonical_hash()
        if kind == "mask-edit":
            spec = payload.get("mask") or {}
            try:
                raw = base64.b64decode(spec["b64"])
                mask = np.frombuffer(raw, dtype=np.uint8).reshape(
                    int(spec["height"]), int(spec["width"])).copy()
            except Exception:
                raise HTTPException(422, detail={"reason": "bad_mask_payload"})
            current = session.canonical_semantic.argmax(dim=1)[0].numpy().astype(np.uint8)
            if current.shape == mask.shape and np.array_equal(current, mask):
                # true no-op commit: skip re-encoding, leave the stack alone
                return {"index": len(session.edit_stack) - 1, "unchanged": True,
                        "content_hash": before_hash,
                        "preview_b64": _image_to_png_b64(session.canonical_image[0])}
            apply_mask_edit(session, torch.from_numpy(mask.astype(np.int64)),
                            self.encoder_can)
        elif kind == "region-restyle":
            try:
                assignments = []
                for a in payload.get("assignments", []):
                    classes = set(class_indices(a["classes"]))
                    styles = self._styles_from_seed(a["style_seed"])[0, 8:]
                    assignments.append((classes, styles))
                spec = RegionStyleSpec(assignments=assignments,
                                       blend_band=float(payload.get("blend_band", 0.0)))
            except (KeyError, ValueError) as e:
                raise HTTPException(422, detail={"reason": str(e)})
            region_restyle(session, spec, session.camera)
        elif kind == "style-mix":
            block = payload.get("block", "texture")
            layers = [int(i) for i in payload.get("layers", [])]
            values = self._styles_from_seed(payload.get("style_seed", 0))
            offset = 0 if block == "shape" else 8
            picked = values[:, [offset + i for i in layers]] if layers \
                else torch.zeros(1, 0, 512)
            global_style_adjust(session, block, picked, layers)
        else:
            raise HTTPException(422, detail={"reason": f"unknown edit type: {kind}"})
        self.persist(entry)
        after_hash = session.canonical_hash()
        return {
            "index": len(session.edit_stack) - 1,
            "unchanged": after_hash == before_hash,
            "content_hash": after_hash,
            "preview_b64": _image_to_png_b64(session.canonical_image[0]),
        }

    def undo_last(self, entry: SessionEntry, expected_index: int | None) -> dict:
        session = entry.session
        top = len(session.edit_stack) - 1
        if expected_index is not None and top != expected_index:
            # replayed DELETE: the edit is already gone
            return {"index": top, "unchanged": True,
                    "content_hash": session.canonical_hash()}
        if session.edit_stack:
            session.edit_stack.pop()
            from .inversion import replay_edits

            replay_edits(session, self.encoder_can)
            self.persist(entry)
        return {"index": len(session.edit_stack) - 1, "unchanged": False,
                "content_hash": session.canonical_hash()}

    # -- rendering -----------------------------------------------------------------

    def render_frame(self, entry: SessionEntry, yaw: float, pitch: float,
                     hr: bool) -> tuple[bytes, int, int]:
        rcfg = self.generator.render_cfg
        camera = pose_from_angles(yaw, pitch, radius=rcfg.camera_radius, focal=rcfg.focal)
        with entry.lock:
            if hr:
                out = render_view(entry.session, camera, hr=True)
                image = out.image[0]
            else:
                bundle = render_view(entry.session, camera, hr=False)
                image = bundle.rgb_map()[0]
        arr = ((image.permute(1, 2, 0).numpy() + 1) * 127.5).round().clip(0, 255
                                                                          ).astype(np.uint8)
        return _png_bytes(arr), arr.shape[1], arr.shape[0]


def build_app(cfg: ServiceConfig) -> FastAPI:
    studio = Studio(cfg)
    app = FastAPI(title="triportrait studio")
    app.state.studio = studio

    @app.exception_handler(RejectedInputError)
    async def _rejected(request: Request, exc: RejectedInputError):
        return JSONResponse(status_code=400, content={"reason": str(exc)})

    @app.get("/palette")
    def get_palette():
        return palette_json()

    @app.post("/sessions", status_code=202)
    async def create_session(image: UploadFile, mask: UploadFile):
        img, msk = studio.validate_upload(await image.read(), await mask.read())
        entry = studio.start_session(img, msk)
        return {"id": entry.id, "state": entry.state}

    @app.get("/sessions/{sid}")
    def session_state(sid: str):
        entry = studio.entry(sid)
        return {"id": entry.id, "state": entry.state, "progress": entry.progress,
                "error": entry.error,
                "edits": len(entry.session.edit_stack) if entry.session else 0}

    @app.get("/sessions/{sid}/mask")
    def session_mask(sid: str):
        entry = studio.ready_entry(sid)
        with entry.lock:
            mask = entry.session.canonical_semantic.argmax(dim=1)[0].numpy().astype(np.uint8)
        return {"width": int(mask.shape[1]), "height": int(mask.shape[0]),
                "b64": base64.b64encode(mask.tobytes()).decode("ascii")}

    @app.get("/sessions/{sid}/preview")
    def session_preview(sid: str):
        entry = studio.ready_entry(sid)
        with entry.lock:
            b64 = _image_to_png_b64(entry.session.canonical_image[0])
            digest = entry.session.canonical_hash()
        return {"preview_b64": b64, "content_hash": digest}

    @app.post("/sessions/{sid}/edits")
    def post_edit(sid: str, payload: dict):
        entry = studio.ready_entry(sid)
        with entry.lock:
            try:
                return studio.apply_edit(entry, payload)
            except RejectedInputError as e:
                raise HTTPException(422, detail={"reason": str(e)})

    @app.delete("/sessions/{sid}/edits/last")
    def undo_edit(sid: str, index: int | None = None):
        entry = studio.ready_entry(sid)
        with entry.lock:
            return studio.undo_last(entry, index)

    @app.websocket("/sessions/{sid}/view")
    async def view_channel(ws: WebSocket, sid: str):
        await ws.accept()
        entry = studio.sessions.get(sid)
        if entry is None or entry.state != "ready":
            await ws.close(code=1008)
            return
        latest: dict = {}
        wake = asyncio.Event()
        closed = asyncio.Event()

        async def receiver():
            try:
                while True:
                    msg = json.loads(await ws.receive_text())
                    yaw = float(msg.get("yaw", 0.0))
                    pitch = float(msg.get("pitch", 0.0))
                    if not (math.isfinite(yaw) and math.isfinite(pitch)) \
                            or abs(yaw) > YAW_RANGE + 1e-6 or abs(pitch) > PITCH_RANGE + 1e-6:
                        await ws.close(code=1008)
                        closed.set()
                        wake.set()
                        return
                    latest.update(yaw=yaw, pitch=pitch, hr=bool(msg.get("hr", False)))
                    wake.set()
            except WebSocketDisconnect:
                closed.set()
                wake.set()
            except Exception:
                closed.set()
                wake.set()

        recv_task = asyncio.create_task(receiver())
        frame_id = 0
        try:
            while not closed.is_set():
                await wake.wait()
                wake.clear()
                if closed.is_set() or not latest:
                    continue
                req = dict(latest)  # coalesced: render only the newest camera
                png, w, h = await asyncio.to_thread(
                    studio.render_frame, entry, req["yaw"], req["pitch"], req["hr"])
                header = struct.pack("<IIII", frame_id, w, h, 1 if req["hr"] else 0)
                await ws.send_bytes(header + png)
                frame_id += 1
        except (WebSocketDisconnect, RuntimeError):
            pass
        finally:
            recv_task.cancel()
        return

    return app


def main(config_path: str | None = None):  # pragma: no cover - thin uvicorn wrapper
    import uvicorn

    cfg = ServiceConfig.load(config_path)
    uvicorn.run(build_app(cfg), host="0.0.0.0", port=cfg.port)
