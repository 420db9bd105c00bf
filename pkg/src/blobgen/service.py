"""HTTP service exposing sampling, rendering, editing, auto-complete, inversion.

JSON bodies in and out; images travel as base64 PNG. The loaded model is
immutable shared state; every request builds its own tensors, so concurrent
requests are safe and, given explicit seeds, deterministic.

Error contract: 400 malformed body (message carries a field path), 409 no
model or missing submodel, 422 scene/model dimension mismatch.
"""

from __future__ import annotations

import base64
import binascii
import json
import os
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from . import io as bio
from .blobs import BlobScene, scene_alpha_maps
from .editing import Constraint, EditCommand, apply_edits, autocomplete
from .errors import DomainError, FormatError, ShapeError, StateError
from .inversion import invert
from .model import SceneModel

ENV_CHECKPOINT = "BLOBGEN_CHECKPOINT"
ENV_BIND = "BLOBGEN_BIND"


class ApiError(Exception):
    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status
        self.message = message


def _field(path: str, err) -> ApiError:
    return ApiError(400, f"{path}: {err}")


def _require(body: dict, key: str, path: str = ""):
    if key not in body:
        raise ApiError(400, f"{path or key}: missing required field")
    return body[key]


def _opt_int(body: dict, key: str, default: int, lo: int, hi: int) -> int:
    v = body.get(key, default)
    if not isinstance(v, int) or isinstance(v, bool) or not lo <= v <= hi:
        raise ApiError(400, f"{key}: expected integer in [{lo}, {hi}]")
    return v


def _opt_float(body: dict, key: str, default: float, lo: float, hi: float) -> float:
    v = body.get(key, default)
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not lo <= v <= hi:
        raise ApiError(400, f"{key}: expected number in [{lo}, {hi}]")
    return float(v)


def _b64_png(img: np.ndarray) -> str:
    return base64.b64encode(bio.image_to_png(img)).decode("ascii")


class Service:
    """Endpoint logic, independent of the HTTP shell (directly testable)."""

    def __init__(self, model: SceneModel | None):
        self.model = model
        if model is not None and model.trunc_mean is None:
            model.ensure_trunc_mean()

    def _model(self) -> SceneModel:
        if self.model is None:
            raise ApiError(409, "no model loaded")
        return self.model

    def _parse_scene(self, body: dict, path: str = "scene") -> BlobScene:
        doc = _require(body, "scene", path)
        try:
            scene, _ = bio.scene_from_dict(doc)
        except FormatError as e:
            raise _field(path, e) from e
        try:
            self._model().check_scene(scene)
        except ShapeError as e:
            raise ApiError(422, str(e)) from e
        return scene

    # -- endpoints -----------------------------------------------------------
    def healthz(self, _body: dict) -> dict:
        return {"status": "ok", "model_loaded": self.model is not None}

    def model_info(self, _body: dict) -> dict:
        m = self._model()
        return {"model": m.cfg.to_dict(), "step": m.step,
                "train": m.train_cfg.to_dict(),
                "has_encoder": m.encoder is not None}

    def sample(self, body: dict) -> dict:
        m = self._model()
        seed = _opt_int(body, "seed", int.from_bytes(os.urandom(4), "little"), 0, 2 ** 62)
        truncation = _opt_float(body, "truncation", 1.0, 0.0, 1.0)
        scene = m.sample_scene(seed, truncation)
        img = m.render_scene(scene)
        return {"seed": seed, "scene": bio.scene_to_dict(scene, m.cfg.sharpness_c),
                "image": _b64_png(img)}

    def render(self, body: dict) -> dict:
        m = self._model()
        scene = self._parse_scene(body)
        img = m.render_scene(scene)
        out = {"image": _b64_png(img)}
        if body.get("return_alpha"):
            am = scene_alpha_maps(scene, m.cfg.img_res, m.cfg.img_res, m.cfg.sharpness_c)
            out["alpha_maps"] = [
                base64.b64encode(bio.gray_to_png(am.alpha[i + 1])).decode("ascii")
                for i in range(scene.k)]
        return out

    def edit(self, body: dict) -> dict:
        m = self._model()
        scene = self._parse_scene(body)
        edits = _require(body, "edits")
        if not isinstance(edits, list):
            raise ApiError(400, "edits: expected a list")
        cmds = []
        for i, e in enumerate(edits):
            try:
                cmds.append(EditCommand.from_dict(e))
            except (FormatError, DomainError) as err:
                raise _field(f"edits[{i}]", err) from err
        try:
            out = apply_edits(scene, cmds)
        except ShapeError as e:
            raise ApiError(422, str(e)) from e
        except DomainError as e:
            raise ApiError(400, f"edits: {e}") from e
        return {"scene": bio.scene_to_dict(out, m.cfg.sharpness_c)}

    def autocomplete_scene(self, body: dict) -> dict:
        m = self._model()
        raw = _require(body, "constraints")
        if not isinstance(raw, list):
            raise ApiError(400, "constraints: expected a list")
        cons = []
        for i, c in enumerate(raw):
            if not isinstance(c, dict):
                raise ApiError(400, f"constraints[{i}]: expected an object")
            try:
                cons.append(Constraint(int(_require(c, "index", f"constraints[{i}].index")),
                                       str(_require(c, "field", f"constraints[{i}].field")),
                                       np.asarray(_require(c, "value", f"constraints[{i}].value"),
                                                  dtype=np.float32)))
            except (DomainError, ValueError, TypeError) as e:
                raise _field(f"constraints[{i}]", e) from e
        seed = _opt_int(body, "seed", int.from_bytes(os.urandom(4), "little"), 0, 2 ** 62)
        iters = _opt_int(body, "iters", 300, 1, 10_000)
        try:
            res = autocomplete(m.layout, cons, rng=np.random.default_rng(seed), iters=iters)
        except ShapeError as e:
            raise ApiError(422, str(e)) from e
        except DomainError as e:
            raise ApiError(400, f"constraints: {e}") from e
        return {"seed": seed, "scene": bio.scene_to_dict(res.scene, m.cfg.sharpness_c),
                "final_loss": res.final_loss, "warning": res.warning}

    def invert_image(self, body: dict) -> dict:
        m = self._model()
        if m.encoder is None:
            raise ApiError(409, "model has no encoder; train one to invert images")
        b64 = _require(body, "image")
        try:
            png = base64.b64decode(b64, validate=True)
        except (binascii.Error, TypeError, ValueError) as e:
            raise _field("image", f"invalid base64 ({e})") from e
        try:
            img = bio.png_to_image(png)
        except FormatError as e:
            raise _field("image", e) from e
        if img.shape[1] != m.cfg.img_res or img.shape[2] != m.cfg.img_res:
            raise ApiError(422, f"image is {img.shape[1]}x{img.shape[2]}, "
                                f"model expects {m.cfg.img_res}x{m.cfg.img_res}")
        steps = _opt_int(body, "refine_steps", 200, 0, 5000)
        res = invert(m, m.encoder, img, refine_steps=steps)
        return {"scene": bio.scene_to_dict(res.scene, m.cfg.sharpness_c),
                "rmse": res.rmse, "diverged": res.diverged}


ROUTES = {
    ("GET", "/healthz"): "healthz",
    ("GET", "/model"): "model_info",
    ("POST", "/sample"): "sample",
    ("POST", "/render"): "render",
    ("POST", "/edit"): "edit",
    ("POST", "/autocomplete"): "autocomplete_scene",
    ("POST", "/invert"): "invert_image",
}


class _Handler(BaseHTTPRequestHandler):
    service: Service = None  # set by make_server
    protocol_version = "HTTP/1.1"

    def log_message(self, *args):  # quiet by default
        pass

    def _respond(self, status: int, payload: dict):
        data = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(data)

    def _dispatch(self, method: str):
        name = ROUTES.get((method, self.path.split("?")[0]))
        if name is None:
            self._respond(404, {"error": f"no route for {method} {self.path}"})
            return
        body = {}
        if method == "POST":
            length = int(self.headers.get("Content-Length") or 0)
            raw = self.rfile.read(length) if length else b""
            if raw:
                try:
                    body = json.loads(raw.decode("utf-8"))
                except (json.JSONDecodeError, UnicodeDecodeError) as e:
                    self._respond(400, {"error": f"body: invalid JSON ({e})"})
                    return
            if not isinstance(body, dict):
                self._respond(400, {"error": "body: expected a JSON object"})
                return
        try:
            self._respond(200, getattr(self.service, name)(body))
        except ApiError as e:
            self._respond(e.status, {"error": e.message})
        except Exception as e:  # defensive: never leak a stack trace as 200
            self._respond(500, {"error": f"internal error: {e}"})

    def do_GET(self):
        self._dispatch("GET")

    def do_POST(self):
        self._dispatch("POST")

    def do_OPTIONS(self):
        self.send_response(204)
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
        self.send_header("Access-Control-Allow-Headers", "Content-Type")
        self.send_header("Content-Length", "0")
        self.end_headers()


def make_server(model: SceneModel | None, host: str = "127.0.0.1",
                port: int = 0) -> ThreadingHTTPServer:
    handler = type("BoundHandler", (_Handler,), {"service": Service(model)})
    return ThreadingHTTPServer((host, port), handler)


def serve(checkpoint: str | None = None, host: str | None = None,
          port: int = 8642, block: bool = True) -> ThreadingHTTPServer:
    path = checkpoint or os.environ.get(ENV_CHECKPOINT)
    model = bio.load_checkpoint(path) if path else None
    host = host or os.environ.get(ENV_BIND, "127.0.0.1")
    server = make_server(model, host, port)
    if block:
        print(f"serving on http://{server.server_address[0]}:{server.server_address[1]} "
              f"(model: {'loaded' if model else 'none'})", flush=True)
        try:
            server.serve_forever()
        except KeyboardInterrupt:
            server.shutdown()
    else:
        threading.Thread(target=server.serve_forever, daemon=True).start()
    return server
