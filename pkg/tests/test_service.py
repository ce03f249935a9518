import base64
import io
import json
import struct
import time

import numpy as np
import pytest
import torch
from fastapi.testclient import TestClient
from PIL import Image

from triportrait.camera import pose_from_angles
from triportrait.checkpoint import save_training_checkpoint
from triportrait.encoders import PortraitEncoder
from triportrait.generator import Generator
from triportrait.service import ServiceConfig, build_app

from conftest import tiny_model_cfg, tiny_render_cfg

RES = 16


def _make_checkpoint(path):
    torch.manual_seed(42)
    gen = Generator(tiny_model_cfg(trunk_resolution=8, plane_resolution=16,
                                   trunk_channels=8, branch_channels=8,
                                   superres_channels=8),
                    tiny_render_cfg(lr_resolution=8, output_resolution=RES,
                                    coarse_samples=6, fine_samples=6))
    enc = PortraitEncoder(RES, base_channels=8)
    enc_can = PortraitEncoder(RES, base_channels=8)
    save_training_checkpoint(path, gen, encoder=enc, encoder_canonical=enc_can)
    return gen


def _portrait_pngs(gen):
    z = torch.randn(1, 512, generator=torch.Generator().manual_seed(1))
    cam = pose_from_angles(0.1, 0.0)
    with torch.no_grad():
        out = gen.synthesize(z, cam, cam)
    img = ((out.image[0].permute(1, 2, 0).numpy() + 1) * 127.5).round().astype(np.uint8)
    mask = out.semantic_mask()[0].numpy().astype(np.uint8)
    img_buf, mask_buf = io.BytesIO(), io.BytesIO()
    Image.fromarray(img).save(img_buf, format="PNG")
    Image.fromarray(mask, mode="L").save(mask_buf, format="PNG")
    return img_buf.getvalue(), mask_buf.getvalue()


@pytest.fixture(scope="module")
def studio_env(tmp_path_factory):
    root = tmp_path_factory.mktemp("studio")
    ckpt = root / "model.tpck"
    gen = _make_checkpoint(ckpt)
    cfg = ServiceConfig(checkpoint=str(ckpt), session_dir=str(root / "sessions"),
                        max_sessions=64, n_opt=0, n_pti=0)
    app = build_app(cfg)
    client = TestClient(app)
    image_png, mask_png = _portrait_pngs(gen)
    return dict(root=root, cfg=cfg, app=app, client=client,
                image=image_png, mask=mask_png, gen=gen)


def _create_ready_session(env) -> str:
    client = env["client"]
    r = client.post("/sessions", files={
        "image": ("p.png", env["image"], "image/png"),
        "mask": ("m.png", env["mask"], "image/png"),
    })
    assert r.status_code == 202
    sid = r.json()["id"]
    assert r.json()["state"] in ("initializing", "inverting")
    for _ in range(400):
        state = client.get(f"/sessions/{sid}").json()
        if state["state"] == "ready":
            return sid
        if state["state"] == "failed":
            raise AssertionError(f"inversion failed: {state['error']}")
        time.sleep(0.05)
    raise AssertionError("session never became ready")


def test_palette_served(studio_env):
    data = studio_env["client"].get("/palette").json()
    assert data["num_classes"] == 19
    assert len(data["classes"]) == 19
    assert data["classes"][13]["name"] == "hair"


def test_create_session_and_become_ready(studio_env):
    sid = _create_ready_session(studio_env)
    state = studio_env["client"].get(f"/sessions/{sid}").json()
    assert state["progress"] == 1.0


def test_out_of_range_mask_class_rejected(studio_env):
    bad = np.full((RES, RES), 31, dtype=np.uint8)
    buf = io.BytesIO()
    Image.fromarray(bad, mode="L").save(buf, format="PNG")
    r = studio_env["client"].post("/sessions", files={
        "image": ("p.png", studio_env["image"], "image/png"),
        "mask": ("m.png", buf.getvalue(), "image/png"),
    })
    assert r.status_code == 400
    assert "class_out_of_range" in r.text


def test_garbage_media_rejected(studio_env):
    r = studio_env["client"].post("/sessions", files={
        "image": ("p.png", b"not a png", "image/png"),
        "mask": ("m.png", studio_env["mask"], "image/png"),
    })
    assert r.status_code == 400


def test_unknown_session_404(studio_env):
    assert studio_env["client"].get("/sessions/deadbeef").status_code == 404


def test_concurrent_submissions_get_distinct_handles(studio_env):
    client = studio_env["client"]
    files = {"image": ("p.png", studio_env["image"], "image/png"),
             "mask": ("m.png", studio_env["mask"], "image/png")}
    ids = {client.post("/sessions", files=files).json()["id"] for _ in range(3)}
    assert len(ids) == 3


def test_oversized_payload_413(tmp_path):
    ckpt = tmp_path / "model.tpck"
    _make_checkpoint(ckpt)
    cfg = ServiceConfig(checkpoint=str(ckpt), session_dir=str(tmp_path / "s"),
                        max_upload_bytes=64)
    client = TestClient(build_app(cfg))
    r = client.post("/sessions", files={
        "image": ("p.png", b"x" * 100, "image/png"),
        "mask": ("m.png", b"y" * 100, "image/png"),
    })
    assert r.status_code == 413


def test_session_cap_429(tmp_path):
    ckpt = tmp_path / "model.tpck"
    gen = _make_checkpoint(ckpt)
    cfg = ServiceConfig(checkpoint=str(ckpt), session_dir=str(tmp_path / "s"),
                        max_sessions=1, n_opt=0, n_pti=0)
    client = TestClient(build_app(cfg))
    image_png, mask_png = _portrait_pngs(gen)
    files = {"image": ("p.png", image_png, "image/png"),
             "mask": ("m.png", mask_png, "image/png")}
    assert client.post("/sessions", files=files).status_code == 202
    assert client.post("/sessions", files=files).status_code == 429


def test_edit_before_ready_409(tmp_path):
    ckpt = tmp_path / "model.tpck"
    gen = _make_checkpoint(ckpt)
    # big budgets keep the job busy long enough to observe "not ready"
    cfg = ServiceConfig(checkpoint=str(ckpt), session_dir=str(tmp_path / "s"),
                        n_opt=2000, n_pti=0)
    client = TestClient(build_app(cfg))
    image_png, mask_png = _portrait_pngs(gen)
    r = client.post("/sessions", files={
        "image": ("p.png", image_png, "image/png"),
        "mask": ("m.png", mask_png, "image/png"),
    })
    sid = r.json()["id"]
    r = client.post(f"/sessions/{sid}/edits", json={"type": "style-mix", "layers": []})
    assert r.status_code == 409


def _current_mask(env, sid):
    data = env["client"].get(f"/sessions/{sid}/mask").json()
    raw = base64.b64decode(data["b64"])
    return np.frombuffer(raw, dtype=np.uint8).reshape(data["height"], data["width"])


def test_noop_mask_edit_flags_unchanged(studio_env):
    sid = _create_ready_session(studio_env)
    mask = _current_mask(studio_env, sid)
    payload = {"type": "mask-edit", "mask": {
        "width": int(mask.shape[1]), "height": int(mask.shape[0]),
        "b64": base64.b64encode(mask.tobytes()).decode("ascii")}}
    r = studio_env["client"].post(f"/sessions/{sid}/edits", json=payload)
    assert r.status_code == 200
    body = r.json()
    assert body["unchanged"] is True
    state = studio_env["client"].get(f"/sessions/{sid}").json()
    assert state["edits"] == 0


def test_real_mask_edit_and_undo_restores_hash(studio_env):
    client = studio_env["client"]
    sid = _create_ready_session(studio_env)
    base_hash = client.get(f"/sessions/{sid}/preview").json()["content_hash"]
    mask = _current_mask(studio_env, sid).copy()
    mask[: mask.shape[0] // 3] = 13  # paint a hair block
    payload = {"type": "mask-edit", "mask": {
        "width": int(mask.shape[1]), "height": int(mask.shape[0]),
        "b64": base64.b64encode(mask.tobytes()).decode("ascii")}}
    r = client.post(f"/sessions/{sid}/edits", json=payload)
    assert r.status_code == 200
    body = r.json()
    assert body["index"] == 0
    assert body["preview_b64"]

    # undo restores the canonical hash; replaying the DELETE is a no-op
    r = client.delete(f"/sessions/{sid}/edits/last", params={"index": 0})
    assert r.status_code == 200
    assert r.json()["content_hash"] == base_hash
    r2 = client.delete(f"/sessions/{sid}/edits/last", params={"index": 0})
    assert r2.json()["unchanged"] is True
    assert r2.json()["content_hash"] == base_hash


def test_restyle_and_style_mix_edits(studio_env):
    client = studio_env["client"]
    sid = _create_ready_session(studio_env)
    r = client.post(f"/sessions/{sid}/edits", json={
        "type": "region-restyle",
        "assignments": [{"classes": ["hair"], "style_seed": 5}],
    })
    assert r.status_code == 200
    r = client.post(f"/sessions/{sid}/edits", json={
        "type": "style-mix", "block": "texture", "layers": [0, 1], "style_seed": 9})
    assert r.status_code == 200
    assert r.json()["index"] == 1
    r = client.post(f"/sessions/{sid}/edits", json={
        "type": "region-restyle",
        "assignments": [{"classes": ["hair"], "style_seed": 5},
                        {"classes": ["hair", "cloth"], "style_seed": 6}],
    })
    assert r.status_code == 422  # overlapping class sets
    r = client.post(f"/sessions/{sid}/edits", json={"type": "bogus"})
    assert r.status_code == 422


def test_websocket_canonical_frame_matches_preview(studio_env):
    client = studio_env["client"]
    sid = _create_ready_session(studio_env)
    preview_png = base64.b64decode(
        client.get(f"/sessions/{sid}/preview").json()["preview_b64"])
    with client.websocket_connect(f"/sessions/{sid}/view") as ws:
        ws.send_text(json.dumps({"yaw": 0.0, "pitch": 0.0, "hr": True}))
        frame = ws.receive_bytes()
    frame_id, w, h, flags = struct.unpack("<IIII", frame[:16])
    assert (w, h, flags) == (RES, RES, 1)
    assert frame[16:] == preview_png


def test_websocket_burst_coalesces(studio_env):
    client = studio_env["client"]
    sid = _create_ready_session(studio_env)
    n = 40
    with client.websocket_connect(f"/sessions/{sid}/view") as ws:
        for i in range(n - 1):
            yaw = -0.4 + 0.8 * i / n
            ws.send_text(json.dumps({"yaw": yaw, "pitch": 0.1, "hr": False}))
        ws.send_text(json.dumps({"yaw": 0.3, "pitch": -0.1, "hr": True}))
        frames = []
        while True:
            frame = ws.receive_bytes()
            frames.append(frame)
            if struct.unpack("<IIII", frame[:16])[3] == 1:  # hr flag = final request
                break
    assert len(frames) <= n
    entry = studio_env["app"].state.studio.sessions[sid]
    png, w, h = studio_env["app"].state.studio.render_frame(entry, 0.3, -0.1, True)
    assert frames[-1][16:] == png


def test_websocket_rejects_invalid_camera(studio_env):
    client = studio_env["client"]
    sid = _create_ready_session(studio_env)
    with client.websocket_connect(f"/sessions/{sid}/view") as ws:
        ws.send_text(json.dumps({"yaw": 2.5, "pitch": 0.0}))
        with pytest.raises(Exception):
            while True:
                ws.receive_bytes()


def test_hr_flag_toggles_resolution(studio_env):
    client = studio_env["client"]
    sid = _create_ready_session(studio_env)
    with client.websocket_connect(f"/sessions/{sid}/view") as ws:
        ws.send_text(json.dumps({"yaw": 0.1, "pitch": 0.0, "hr": False}))
        frame = ws.receive_bytes()
    _, w, h, flags = struct.unpack("<IIII", frame[:16])
    assert (w, h, flags) == (8, 8, 0)  # LR fast path at the render resolution


def test_session_persistence_across_restart(studio_env):
    client = studio_env["client"]
    sid = _create_ready_session(studio_env)
    mask = _current_mask(studio_env, sid).copy()
    mask[:4] = 18
    client.post(f"/sessions/{sid}/edits", json={"type": "mask-edit", "mask": {
        "width": int(mask.shape[1]), "height": int(mask.shape[0]),
        "b64": base64.b64encode(mask.tobytes()).decode("ascii")}})
    digest = client.get(f"/sessions/{sid}/preview").json()["content_hash"]

    fresh_app = build_app(studio_env["cfg"])
    fresh = TestClient(fresh_app)
    state = fresh.get(f"/sessions/{sid}").json()
    assert state["state"] == "ready"
    assert fresh.get(f"/sessions/{sid}/preview").json()["content_hash"] == digest
