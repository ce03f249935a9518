"""Single-file checkpoint container with named segments.

Layout (all integers little-endian):
    magic b"TPCK" | version u32 | segment_count u32
    per segment: name (u16 len + utf-8) | entry_count u32
    per entry:   key (u16 len + utf-8) | dtype u8 | ndim u8 | shape u64*ndim | data

dtype tags: 0 = float32, 1 = int64, 2 = uint8, 3 = raw bytes (JSON payloads),
4 = float64 (session weight deltas, which must reconstruct weights bitwise).
Tensor data is little-endian; writes are atomic (temp file + rename).
"""

from __future__ import annotations

import dataclasses
import io
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np
import torch

MAGIC = b"TPCK"
VERSION = 1

_DTYPE_TAGS = {np.dtype("float32"): 0, np.dtype("int64"): 1, np.dtype("uint8"): 2,
               np.dtype("float64"): 4}
_TAG_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<i8"), 2: np.dtype("u1"), 4: np.dtype("<f8")}


class CheckpointError(RuntimeError):
    pass


def _write_str(buf: io.BytesIO, s: str) -> None:
    raw = s.encode("utf-8")
    buf.write(struct.pack("<H", len(raw)))
    buf.write(raw)


def _read_str(buf) -> str:
    (n,) = struct.unpack("<H", buf.read(2))
    return buf.read(n).decode("utf-8")


def _coerce(value) -> np.ndarray | bytes:
    if isinstance(value, bytes):
        return value
    if isinstance(value, torch.Tensor):
        value = value.detach().cpu().numpy()
    arr = np.asarray(value)
    if arr.dtype == np.float64:
        arr = arr.astype("<f8")
    elif arr.dtype.kind == "f":
        arr = arr.astype("<f4")
    elif arr.dtype.kind in "iu" and arr.dtype != np.uint8:
        arr = arr.astype("<i8")
    elif arr.dtype == np.uint8:
        pass
    elif arr.dtype.kind == "b":
        arr = arr.astype("u1")
    else:
        raise CheckpointError(f"unsupported dtype: {arr.dtype}")
    return arr


def save_container(path: str | Path, segments: dict[str, dict[str, object]]) -> None:
    """Atomically write segments of named tensors / raw byte blobs."""
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(segments)))
    for seg_name, entries in segments.items():
        _write_str(buf, seg_name)
        buf.write(struct.pack("<I", len(entries)))
        for key, value in entries.items():
            _write_str(buf, key)
            value = _coerce(value)
            if isinstance(value, bytes):
                buf.write(struct.pack("<BB", 3, 1))
                buf.write(struct.pack("<Q", len(value)))
                buf.write(value)
            else:
                tag = _DTYPE_TAGS[np.dtype(value.dtype.name)]
                buf.write(struct.pack("<BB", tag, value.ndim))
                for dim in value.shape:
                    buf.write(struct.pack("<Q", dim))
                buf.write(value.tobytes())
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(buf.getvalue())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_container(path: str | Path) -> dict[str, dict[str, np.ndarray | bytes]]:
    with open(path, "rb") as f:
        data = f.read()
    buf = io.BytesIO(data)
    if buf.read(4) != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint container")
    version, n_segments = struct.unpack("<II", buf.read(8))
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported container version {version}")
    segments: dict[str, dict[str, np.ndarray | bytes]] = {}
    for _ in range(n_segments):
        seg_name = _read_str(buf)
        (n_entries,) = struct.unpack("<I", buf.read(4))
        entries: dict[str, np.ndarray | bytes] = {}
        for _ in range(n_entries):
            key = _read_str(buf)
            tag, ndim = struct.unpack("<BB", buf.read(2))
            if tag == 3:
                (nbytes,) = struct.unpack("<Q", buf.read(8))
                entries[key] = buf.read(nbytes)
                continue
            shape = tuple(struct.unpack("<Q", buf.read(8))[0] for _ in range(ndim))
            dtype = _TAG_DTYPES[tag]
            count = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(buf.read(count * dtype.itemsize), dtype=dtype)
            entries[key] = arr.reshape(shape).copy()
        segments[seg_name] = entries
    return segments


# -- torch adapters -----------------------------------------------------------

def state_dict_arrays(module: torch.nn.Module, exclude: tuple[str, ...] = ()) -> dict:
    return {k: v for k, v in module.state_dict().items() if k not in exclude}


def load_state_arrays(module: torch.nn.Module, arrays: dict, strict: bool = True) -> None:
    sd = {}
    ref = module.state_dict()
    for key, value in arrays.items():
        if key not in ref:
            if strict:
                raise CheckpointError(f"unexpected checkpoint key: {key}")
            continue
        sd[key] = torch.as_tensor(np.asarray(value)).to(ref[key].dtype).reshape(ref[key].shape)
    missing = set(ref) - set(sd)
    if missing and strict:
        raise CheckpointError(f"missing checkpoint keys: {sorted(missing)}")
    module.load_state_dict(sd, strict=strict)


def generator_segments(generator) -> dict[str, dict]:
    """Split a generator into the container's named segments."""
    return {
        "generator.backbone": {
            **{f"mapping.{k}": v for k, v in state_dict_arrays(
                generator.mapping, exclude=("w_mean",)).items()},
            **{f"backbone.{k}": v for k, v in state_dict_arrays(generator.backbone).items()},
        },
        "decoder.semantic": state_dict_arrays(generator.field.semantic_decoder),
        "decoder.texture": state_dict_arrays(generator.field.texture_decoder),
        "render.background": {"background": generator.field.background},
        "superres": state_dict_arrays(generator.superres),
        "styles.ema": {"w_mean": generator.mapping.w_mean},
    }


def load_generator_segments(generator, segments: dict) -> None:
    backbone_seg = segments["generator.backbone"]
    mapping_arrays = {k[len("mapping."):]: v for k, v in backbone_seg.items()
                      if k.startswith("mapping.")}
    mapping_arrays["w_mean"] = segments["styles.ema"]["w_mean"]
    load_state_arrays(generator.mapping, mapping_arrays)
    load_state_arrays(generator.backbone,
                      {k[len("backbone."):]: v for k, v in backbone_seg.items()
                       if k.startswith("backbone.")})
    load_state_arrays(generator.field.semantic_decoder, segments["decoder.semantic"])
    load_state_arrays(generator.field.texture_decoder, segments["decoder.texture"])
    with torch.no_grad():
        generator.field.background.copy_(
            torch.as_tensor(np.asarray(segments["render.background"]["background"])))
    load_state_arrays(generator.superres, segments["superres"])


def save_training_checkpoint(path, generator, discriminator=None, encoder=None,
                             encoder_canonical=None, meta: dict | None = None) -> None:
    segments = generator_segments(generator)
    payload = dict(meta or {})
    if discriminator is not None:
        segments["discriminator"] = state_dict_arrays(discriminator)
    if encoder is not None:
        segments["encoder"] = state_dict_arrays(encoder)
        payload.setdefault("encoder_cfg", encoder.hparams())
    if encoder_canonical is not None:
        segments["encoder.canonical"] = state_dict_arrays(encoder_canonical)
        payload.setdefault("encoder_canonical_cfg", encoder_canonical.hparams())
    payload.setdefault("model_cfg", dataclasses.asdict(generator.model_cfg))
    payload.setdefault("render_cfg", dataclasses.asdict(generator.render_cfg))
    segments["meta"] = {"json": json.dumps(payload).encode("utf-8")}
    save_container(path, segments)


def checkpoint_meta(segments: dict) -> dict:
    return json.loads(segments["meta"]["json"].decode("utf-8"))


def load_generator_checkpoint(path):
    """Rebuild a Generator (and config) from a checkpoint file."""
    from .config import ModelConfig, RenderConfig
    from .generator import Generator

    segments = load_container(path)
    meta = checkpoint_meta(segments)
    model_cfg = ModelConfig(**meta["model_cfg"])
    render_cfg = RenderConfig(**meta["render_cfg"])
    gen = Generator(model_cfg, render_cfg)
    load_generator_segments(gen, segments)
    gen.eval()
    return gen, segments, meta
