"""FastAPI application exposing the backend endpoints the engine consumes.

Content types: application/json for structured requests, image/png for images
and masks, application/octet-stream for latent envelopes. Malformed bodies get
400 with a schema pointer; hub failures get 503 with the diagnostic.
"""

from __future__ import annotations

import base64
import json

import numpy as np
from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse

from .hub import HubUnavailable, ModelHub, create_hub
from .wire import (
    WireError,
    mask_png_encode,
    pack_latent,
    png_decode_rgb,
    png_encode,
    unpack_latent,
)


def _schema_error(path: str, message: str) -> JSONResponse:
    return JSONResponse(status_code=400, content={"error": message, "schema": path})


def _unavailable(exc: HubUnavailable) -> JSONResponse:
    return JSONResponse(status_code=503, content={"error": str(exc)})


def _json_field(doc: dict, field: str, path: str):
    if field not in doc:
        raise WireError(f"missing required field {field!r}")
    return doc[field]


def create_app(hub: ModelHub | None = None) -> FastAPI:
    hub = hub if hub is not None else create_hub("procedural")
    app = FastAPI(title="motionweave-bridge")

    @app.exception_handler(HubUnavailable)
    async def _hub_handler(request: Request, exc: HubUnavailable):
        return _unavailable(exc)

    @app.get("/health")
    async def health():
        schedule = hub.schedule_info()
        betas = np.linspace(
            schedule["beta_start"], schedule["beta_end"], schedule["T"]
        ).tolist()
        return {"status": "ok", "model": hub.name, "schedule": schedule, "betas": betas}

    @app.post("/first_frame")
    async def first_frame(request: Request):
        try:
            doc = json.loads(await request.body())
            prompt = str(_json_field(doc, "prompt", "/first_frame"))
            seed = int(_json_field(doc, "seed", "/first_frame"))
            size = int(doc.get("size", 512))
        except (json.JSONDecodeError, WireError, TypeError, ValueError) as exc:
            return _schema_error("/first_frame", str(exc))
        image, latent = hub.first_frame(prompt, seed, size)
        png = png_encode(image)
        header = {
            "png_len": len(png),
            "shape": list(latent.shape),
            "dtype": "<f4",
        }
        body = json.dumps(header).encode() + b"\n" + png + np.ascontiguousarray(
            latent, dtype="<f4"
        ).tobytes()
        return Response(content=body, media_type="application/octet-stream")

    @app.post("/denoise")
    async def denoise(request: Request):
        try:
            latent, header = unpack_latent(await request.body())
            if "t" not in header:
                raise WireError("missing required field 't'")
            t = int(header["t"])
            condition = str(header.get("condition", ""))
            frame = int(header.get("frame", 0))
        except (WireError, TypeError, ValueError) as exc:
            return _schema_error("/denoise", str(exc))
        eps = hub.denoise(latent, t, condition, frame)
        return Response(content=pack_latent(eps), media_type="application/octet-stream")

    @app.post("/decode")
    async def decode(request: Request):
        try:
            latent, _ = unpack_latent(await request.body())
        except WireError as exc:
            return _schema_error("/decode", str(exc))
        image = hub.decode(latent)
        return Response(content=png_encode(image), media_type="image/png")

    @app.post("/segment")
    async def segment(request: Request):
        try:
            doc = json.loads(await request.body())
            image = png_decode_rgb(base64.b64decode(_json_field(doc, "image_png", "/segment")))
            phrase = str(_json_field(doc, "phrase", "/segment"))
            confidence = float(doc.get("confidence", 0.3))
            if not (0.0 < confidence <= 1.0):
                raise WireError(f"confidence must be in (0, 1], got {confidence}")
        except (json.JSONDecodeError, WireError, TypeError, ValueError) as exc:
            return _schema_error("/segment", str(exc))
        mask = hub.segment(image, phrase, confidence)
        return Response(content=mask_png_encode(mask), media_type="image/png")

    @app.post("/heading")
    async def heading(request: Request):
        try:
            doc = json.loads(await request.body())
            image = png_decode_rgb(base64.b64decode(_json_field(doc, "image_png", "/heading")))
            character = str(_json_field(doc, "character", "/heading"))
        except (json.JSONDecodeError, WireError, TypeError, ValueError) as exc:
            return _schema_error("/heading", str(exc))
        direction = hub.heading(image, character)
        if direction is None:
            return JSONResponse(
                status_code=404, content={"error": f"character {character!r} not visible"}
            )
        return {"direction": direction}

    return app
