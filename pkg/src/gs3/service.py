"""Interactive render service: JSON control messages in, binary frames out.

Protocol (see protocol.schema.json): the client sends `{"type":"state", ...}`
messages carrying camera, light, toggles and quality; the server replies with
binary frames `"GS3F" + u32 seq + u32 width + u32 height + payload` (RGB8
rows by default, raw little-endian f32 when the state asked for
`"format":"f32"`). `{"type":"ping","seq":n}` gets `{"type":"pong","seq":n}`.
Malformed or invalid messages get `{"type":"error",...}`; the connection
stays open.

Frame production is coalescing: a single render worker per session always
renders the most recent pending state, so a dragging client sees fresh poses
and a slow one never queues unbounded work.
"""

from __future__ import annotations

import asyncio
import json
import struct
from dataclasses import dataclass
from importlib import resources

import numpy as np
import jsonschema
from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from fastapi.responses import PlainTextResponse

from .frames import Frame
from .gaussians import SceneModel
from .rasterize import RasterSettings
from .rendering import EnvironmentMap, RenderToggles, render_env, render_frame
from .shadow import LightDescriptor

FRAME_MAGIC = b"GS3F"

PROTOCOL_SCHEMA = json.loads(
    resources.files("gs3").joinpath("protocol.schema.json").read_text())
_VALIDATOR = jsonschema.Draft7Validator(PROTOCOL_SCHEMA)


def _builtin_env(name: str) -> EnvironmentMap:
    h = 16
    if name == "white":
        return EnvironmentMap(np.ones((h, 2 * h, 3)))
    if name == "sky":
        v = np.linspace(1.0, 0.05, h)[:, None, None]
        base = np.array([0.5, 0.7, 1.0])[None, None, :]
        return EnvironmentMap(np.broadcast_to(v * base, (h, 2 * h, 3)).copy())
    raise ValueError(f"unknown environment map {name!r}")


@dataclass
class StateRequest:
    camera: Frame
    light: dict
    toggles: RenderToggles
    fmt: str = "rgb8"
    exposure: float = 1.0


def parse_state(msg: dict) -> StateRequest:
    camera = Frame.from_dict(msg["camera"])
    quality = msg.get("quality") or {}
    if "width" in quality or "height" in quality:
        camera = camera.resized(int(quality.get("width", camera.width)),
                                int(quality.get("height", camera.height)))
    toggles = RenderToggles.from_dict(msg.get("toggles") or {})
    return StateRequest(camera=camera, light=msg["light"], toggles=toggles,
                        fmt=quality.get("format", "rgb8"),
                        exposure=float(msg.get("exposure", 1.0)))


def render_state(model: SceneModel, req: StateRequest,
                 settings: RasterSettings | None = None) -> np.ndarray:
    light = req.light
    if light.get("kind") == "env":
        envmap = _builtin_env(light.get("map", "white"))
        scale = float(light.get("intensity", 1.0))
        img = render_env(model, req.camera, envmap,
                         n_samples=int(light.get("samples", 64)),
                         toggles=req.toggles, settings=settings,
                         exposure=req.exposure)
        return img * scale
    return render_frame(model, req.camera, LightDescriptor.from_dict(light),
                        req.toggles, settings, exposure=req.exposure)


def encode_frame(seq: int, image: np.ndarray, fmt: str = "rgb8") -> bytes:
    h, w = image.shape[:2]
    header = FRAME_MAGIC + struct.pack("<III", seq, w, h)
    if fmt == "f32":
        return header + np.ascontiguousarray(image, dtype="<f4").tobytes()
    rgb8 = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    return header + rgb8.tobytes()


class SessionControl:
    """Transport-independent message handling for one session."""

    def __init__(self):
        self.error_count = 0

    def handle_text(self, text: str):
        """Returns ("reply", json_str), ("state", StateRequest) or ("none", None)."""
        try:
            msg = json.loads(text)
        except json.JSONDecodeError as e:
            self.error_count += 1
            return "reply", json.dumps({"type": "error", "message": f"bad JSON: {e.msg}"})
        err = jsonschema.exceptions.best_match(_VALIDATOR.iter_errors(msg))
        if err is not None:
            self.error_count += 1
            return "reply", json.dumps({"type": "error", "message": err.message})
        if msg["type"] == "ping":
            return "reply", json.dumps({"type": "pong", "seq": int(msg.get("seq", 0))})
        try:
            return "state", parse_state(msg)
        except (ValueError, KeyError) as e:
            self.error_count += 1
            return "reply", json.dumps({"type": "error", "message": str(e)})


def create_app(model: SceneModel, settings: RasterSettings | None = None,
               renderer=None):
    """FastAPI app exposing GET /health and the websocket endpoint /ws."""
    app = FastAPI(title="gs3 render service")
    do_render = renderer or (lambda req: render_state(model, req, settings))

    @app.get("/health")
    def health():
        return PlainTextResponse("ok")

    @app.websocket("/ws")
    async def ws_endpoint(ws: WebSocket):
        await ws.accept()
        control = SessionControl()
        slot: dict = {"state": None}
        wake = asyncio.Event()
        send_lock = asyncio.Lock()

        async def render_worker():
            seq = 0
            while True:
                await wake.wait()
                wake.clear()
                req = slot["state"]
                slot["state"] = None
                if req is None:
                    continue
                image = await asyncio.to_thread(do_render, req)
                seq += 1
                async with send_lock:
                    await ws.send_bytes(encode_frame(seq, image, req.fmt))
                if slot["state"] is not None:
                    wake.set()

        worker = asyncio.create_task(render_worker())
        try:
            while True:
                text = await ws.receive_text()
                kind, payload = control.handle_text(text)
                if kind == "reply":
                    async with send_lock:
                        await ws.send_text(payload)
                elif kind == "state":
                    slot["state"] = payload
                    wake.set()
        except WebSocketDisconnect:
            pass
        finally:
            worker.cancel()

    app.state.model = model
    return app


def serve(model: SceneModel, port: int, host: str = "127.0.0.1",
          settings: RasterSettings | None = None):
    """Block serving the interactive protocol on the given port."""
    import uvicorn

    uvicorn.run(create_app(model, settings), host=host, port=port, log_level="warning")
