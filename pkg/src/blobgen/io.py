"""Persistence: binary model checkpoints, scene documents, PNG codec."""

from __future__ import annotations

import io as _io
import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .blobs import Blob, BlobScene
from .config import ModelConfig, TrainConfig
from .errors import FormatError
from .model import SceneModel
from .nets import set_params

MAGIC = b"BLBG"
VERSION = 1


# ---------------------------------------------------------------------------
# checkpoint format: magic, u32 version, u32 header length, JSON header,
# then tensor entries until EOF:
#   u32 name length | name utf-8 | u32 rank | u32 extents... | f32 LE data
# ---------------------------------------------------------------------------

def _named_tensors(model: SceneModel) -> dict[str, np.ndarray]:
    out = {f"layout.{k}": t.data for k, t in model.layout.params().items()}
    out.update({f"decoder.{k}": t.data for k, t in model.decoder.params().items()})
    if model.disc is not None:
        out.update({f"disc.{k}": t.data for k, t in model.disc.params().items()})
    if model.encoder is not None:
        out.update({f"encoder.{k}": t.data for k, t in model.encoder.params().items()})
    out.update({f"ema_layout.{k}": v for k, v in model.ema_layout.items()})
    out.update({f"ema_decoder.{k}": v for k, v in model.ema_decoder.items()})
    if model.trunc_mean is not None:
        out["extra.trunc_mean"] = model.trunc_mean
    return out


def save_checkpoint(path: str | Path, model: SceneModel) -> None:
    header = {
        "kind": "blob-scene-model",
        "model": model.cfg.to_dict(),
        "train": model.train_cfg.to_dict(),
        "step": model.step,
        "has_disc": model.disc is not None,
        "has_encoder": model.encoder is not None,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    buf = _io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    buf.write(struct.pack("<I", len(header_bytes)))
    buf.write(header_bytes)
    tensors = _named_tensors(model)
    for name in sorted(tensors):
        arr = np.asarray(tensors[name], dtype="<f4", order="C")
        nb = name.encode("utf-8")
        buf.write(struct.pack("<I", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes())
    Path(path).write_bytes(buf.getvalue())


def _read_exact(f, n: int, what: str) -> bytes:
    b = f.read(n)
    if len(b) != n:
        raise FormatError(f"checkpoint truncated while reading {what}")
    return b


def read_checkpoint_header(path: str | Path) -> dict:
    with open(path, "rb") as f:
        if _read_exact(f, 4, "magic") != MAGIC:
            raise FormatError("not a model checkpoint (bad magic)")
        (version,) = struct.unpack("<I", _read_exact(f, 4, "version"))
        if version != VERSION:
            raise FormatError(f"unsupported checkpoint version {version}; "
                              f"this build reads version {VERSION}")
        (hlen,) = struct.unpack("<I", _read_exact(f, 4, "header length"))
        try:
            return json.loads(_read_exact(f, hlen, "header").decode("utf-8"))
        except (json.JSONDecodeError, UnicodeDecodeError) as e:
            raise FormatError(f"corrupt checkpoint header: {e}") from e


def _read_tensors(path: str | Path) -> dict[str, np.ndarray]:
    tensors: dict[str, np.ndarray] = {}
    with open(path, "rb") as f:
        _read_exact(f, 4, "magic")
        _read_exact(f, 4, "version")
        (hlen,) = struct.unpack("<I", _read_exact(f, 4, "header length"))
        _read_exact(f, hlen, "header")
        while True:
            raw = f.read(4)
            if not raw:
                break
            if len(raw) != 4:
                raise FormatError("checkpoint truncated in tensor table (name length)")
            (nlen,) = struct.unpack("<I", raw)
            name = _read_exact(f, nlen, "tensor name").decode("utf-8")
            (rank,) = struct.unpack("<I", _read_exact(f, 4, f"rank of {name}"))
            shape = struct.unpack(f"<{rank}I", _read_exact(f, 4 * rank, f"shape of {name}"))
            count = int(np.prod(shape, dtype=np.int64)) if rank else 1
            data = _read_exact(f, 4 * count, f"data of {name}")
            tensors[name] = np.frombuffer(data, dtype="<f4").reshape(shape).copy()
    return tensors


def load_checkpoint(path: str | Path) -> SceneModel:
    header = read_checkpoint_header(path)
    try:
        cfg = ModelConfig.from_dict(header["model"])
        tcfg = TrainConfig.from_dict(header["train"])
        step = int(header["step"])
    except KeyError as e:
        raise FormatError(f"checkpoint header missing section {e}") from e
    tensors = _read_tensors(path)
    model = SceneModel.create(cfg, tcfg, seed=0, with_disc=header.get("has_disc", False))
    model.step = step

    def section(prefix: str) -> dict[str, np.ndarray]:
        vals = {k[len(prefix) + 1:]: v for k, v in tensors.items()
                if k.startswith(prefix + ".")}
        if not vals:
            raise FormatError(f"checkpoint section {prefix!r} is missing")
        return vals

    try:
        set_params(model.layout.params(), section("layout"))
        set_params(model.decoder.params(), section("decoder"))
        if model.disc is not None:
            set_params(model.disc.params(), section("disc"))
        if header.get("has_encoder"):
            from .inversion import Encoder
            model.encoder = Encoder(cfg, np.random.default_rng(0))
            set_params(model.encoder.params(), section("encoder"))
        model.ema_layout = section("ema_layout")
        model.ema_decoder = section("ema_decoder")
    except (KeyError, ValueError) as e:
        raise FormatError(f"checkpoint tensors do not match the model: {e}") from e
    model.trunc_mean = tensors.get("extra.trunc_mean")
    return model


# ---------------------------------------------------------------------------
# scene documents: structured text, >= 9 significant digits per number
# ---------------------------------------------------------------------------

SCENE_VERSION = 1


def _fmt(v) -> str:
    return format(float(np.float32(v)), ".9g")


def _fmt_vec(v) -> str:
    return "[" + ", ".join(_fmt(f) for f in np.asarray(v).reshape(-1)) + "]"


def scene_to_text(scene: BlobScene, sharpness_c: float = 0.02) -> str:
    """Serialize to deterministic JSON with float32-exact decimal numbers."""
    lines = ["{",
             f'  "version": {SCENE_VERSION},',
             f'  "k": {scene.k},',
             f'  "c": {_fmt(sharpness_c)},',
             '  "blobs": [']
    for i, b in enumerate(scene.blobs):
        entry = (f'    {{"x": {_fmt_vec(b.x)}, "s": {_fmt(b.s)}, "a": {_fmt(b.a)}, '
                 f'"theta": {_fmt(b.theta)}, "phi": {_fmt_vec(b.phi)}, '
                 f'"psi": {_fmt_vec(b.psi)}')
        if b.psi_border is not None:
            entry += f', "psi_border": {_fmt_vec(b.psi_border)}'
        entry += "}" + ("," if i + 1 < scene.k else "")
        lines.append(entry)
    lines.append("  ],")
    lines.append(f'  "background": {{"phi0": {_fmt_vec(scene.phi_bg)}, '
                 f'"psi0": {_fmt_vec(scene.psi_bg)}}}')
    lines.append("}")
    return "\n".join(lines) + "\n"


def _f32(v) -> np.float32:
    return np.float32(float(v))


def scene_from_text(text: str) -> tuple[BlobScene, float]:
    """Parse a scene document; returns (scene, sharpness constant)."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise FormatError(f"scene document is not valid JSON: {e}") from e
    return scene_from_dict(doc)


def scene_from_dict(doc: dict) -> tuple[BlobScene, float]:
    if not isinstance(doc, dict):
        raise FormatError("scene document must be an object")
    if doc.get("version") != SCENE_VERSION:
        raise FormatError(f"unsupported scene document version {doc.get('version')!r}")
    try:
        blobs = []
        for i, b in enumerate(doc["blobs"]):
            try:
                blobs.append(Blob(
                    x=np.array([_f32(v) for v in b["x"]]),
                    s=_f32(b["s"]), a=_f32(b["a"]), theta=_f32(b["theta"]),
                    phi=np.array([_f32(v) for v in b["phi"]]),
                    psi=np.array([_f32(v) for v in b["psi"]]),
                    psi_border=(np.array([_f32(v) for v in b["psi_border"]])
                                if "psi_border" in b else None)))
            except (KeyError, TypeError, ValueError) as e:
                raise FormatError(f"bad blob entry at blobs[{i}]: {e}") from e
        bg = doc["background"]
        scene = BlobScene(blobs,
                          np.array([_f32(v) for v in bg["phi0"]]),
                          np.array([_f32(v) for v in bg["psi0"]]))
        if len(blobs) != int(doc["k"]):
            raise FormatError(f"k={doc['k']} but document has {len(blobs)} blobs")
        return scene, float(_f32(doc["c"]))
    except KeyError as e:
        raise FormatError(f"scene document missing field {e}") from e
    except (TypeError, ValueError) as e:
        raise FormatError(f"malformed scene document: {e}") from e


def scene_to_dict(scene: BlobScene, sharpness_c: float = 0.02) -> dict:
    """Dict form of the document (used by the HTTP wire format)."""
    return json.loads(scene_to_text(scene, sharpness_c))


# ---------------------------------------------------------------------------
# PNG codec: 8-bit RGB, [-1, 1] mapped by (v + 1) * 127.5, half away from zero
# ---------------------------------------------------------------------------

def image_to_png(img: np.ndarray) -> bytes:
    img = np.asarray(img, dtype=np.float32)
    if img.ndim != 3 or img.shape[0] != 3:
        raise FormatError(f"expected [3, H, W] image, got {img.shape}")
    mapped = (np.clip(img, -1.0, 1.0) + 1.0) * np.float64(127.5)
    u8 = np.clip(np.floor(mapped + 0.5), 0, 255).astype(np.uint8)
    buf = _io.BytesIO()
    Image.fromarray(np.transpose(u8, (1, 2, 0)), mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def png_to_image(data: bytes) -> np.ndarray:
    try:
        with Image.open(_io.BytesIO(data)) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    except Exception as e:
        raise FormatError(f"bad PNG payload: {e}") from e
    return (np.transpose(arr, (2, 0, 1)) / np.float32(127.5) - 1.0).astype(np.float32)


def gray_to_png(values: np.ndarray) -> bytes:
    """[H, W] floats in [0, 1] -> 8-bit grayscale PNG (used for alpha maps)."""
    v = np.asarray(values, dtype=np.float64)
    u8 = np.clip(np.floor(v * 255.0 + 0.5), 0, 255).astype(np.uint8)
    buf = _io.BytesIO()
    Image.fromarray(u8, mode="L").save(buf, format="PNG")
    return buf.getvalue()
