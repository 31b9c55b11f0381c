"""HTTP client for the model-bridge service.

Latents cross the wire as a one-line JSON header followed by a raw
little-endian float32 blob; images travel as PNG. The engine only ever sees
the bridge's endpoints, never the models behind them.
"""

from __future__ import annotations

import base64
import io
import json

import numpy as np
import requests
from PIL import Image

from .core import Direction, FrameImage, LatentGrid, Mask, Resolution, parse_direction
from .errors import BackendError, CharacterNotFoundError, FrameRangeError
from .segmenter import SegmentationRequest

LATENT_DTYPE = "<f4"


def pack_latent(data: np.ndarray, extra: dict | None = None) -> bytes:
    """JSON header line + raw little-endian float32 payload."""
    header = {"shape": list(data.shape), "dtype": LATENT_DTYPE}
    if extra:
        header.update(extra)
    blob = np.ascontiguousarray(data, dtype=LATENT_DTYPE).tobytes()
    return json.dumps(header).encode("utf-8") + b"\n" + blob


def unpack_latent(payload: bytes) -> tuple[np.ndarray, dict]:
    newline = payload.find(b"\n")
    if newline == -1:
        raise BackendError("latent payload missing its JSON header line")
    header = json.loads(payload[:newline].decode("utf-8"))
    if header.get("dtype") != LATENT_DTYPE:
        raise BackendError(f"unsupported latent dtype {header.get('dtype')!r}")
    shape = tuple(int(s) for s in header["shape"])
    blob = payload[newline + 1 :]
    expected = int(np.prod(shape)) * 4
    if len(blob) < expected:
        raise BackendError(f"latent blob truncated: {len(blob)} < {expected} bytes")
    data = np.frombuffer(blob[:expected], dtype=LATENT_DTYPE).reshape(shape)
    return data.copy(), header


def png_bytes(image: FrameImage) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(image.pixels).save(buf, format="PNG")
    return buf.getvalue()


def image_from_png(data: bytes) -> FrameImage:
    return FrameImage(np.asarray(Image.open(io.BytesIO(data)).convert("RGB"), dtype=np.uint8))


class BridgeBackend:
    """DenoiserBackend implementation speaking to a bridge service."""

    def __init__(self, base_url: str, latent_shape: tuple[int, int, int], timeout: float = 120.0):
        self.base_url = base_url.rstrip("/")
        self.latent_shape = latent_shape
        self.timeout = timeout
        self._session = requests.Session()

    def _post(self, path: str, **kwargs) -> requests.Response:
        url = f"{self.base_url}{path}"
        try:
            resp = self._session.post(url, timeout=self.timeout, **kwargs)
        except requests.RequestException as exc:
            raise BackendError(f"bridge unreachable: {exc}", endpoint=url) from exc
        if resp.status_code >= 400:
            raise BackendError(
                f"bridge returned {resp.status_code}: {resp.text[:200]}", endpoint=url
            )
        return resp

    def health(self) -> dict:
        url = f"{self.base_url}/health"
        try:
            resp = self._session.get(url, timeout=self.timeout)
            resp.raise_for_status()
            return resp.json()
        except requests.RequestException as exc:
            raise BackendError(f"bridge unreachable: {exc}", endpoint=url) from exc

    def denoise(self, x_t: LatentGrid, t: int, condition: str, frame: int = 0) -> np.ndarray:
        if t < 1:
            raise FrameRangeError(f"denoise timestep must be >= 1, got {t}")
        body = pack_latent(x_t.data, extra={"t": t, "condition": condition, "frame": frame})
        resp = self._post(
            "/denoise", data=body, headers={"Content-Type": "application/octet-stream"}
        )
        data, _ = unpack_latent(resp.content)
        return data.astype(np.float32)

    def decode(self, latent: LatentGrid) -> FrameImage:
        body = pack_latent(latent.data)
        resp = self._post(
            "/decode", data=body, headers={"Content-Type": "application/octet-stream"}
        )
        return image_from_png(resp.content)

    def encode(self, image: FrameImage) -> LatentGrid:
        raise BackendError(
            "the bridge exposes no encoder; latents originate bridge-side",
            endpoint=f"{self.base_url}/encode",
        )

    def first_frame(self, prompt: str, seed: int, size: int) -> tuple[FrameImage, LatentGrid]:
        """Bridge-side first-frame synthesis: PNG plus its latent in one response."""
        resp = self._post("/first_frame", json={"prompt": prompt, "seed": seed, "size": size})
        payload = resp.content
        newline = payload.find(b"\n")
        if newline == -1:
            raise BackendError("first_frame payload missing its JSON header line")
        header = json.loads(payload[:newline].decode("utf-8"))
        png_len = int(header["png_len"])
        body = payload[newline + 1 :]
        image = image_from_png(body[:png_len])
        latent, _ = unpack_latent(
            json.dumps({"shape": header["shape"], "dtype": header["dtype"]}).encode()
            + b"\n"
            + body[png_len:]
        )
        return image, LatentGrid(latent)


class BridgeSegmentationProvider:
    def __init__(self, backend: BridgeBackend):
        self._backend = backend

    def segment(self, req: SegmentationRequest) -> Mask:
        resp = self._backend._post(
            "/segment",
            json={
                "image_png": base64.b64encode(png_bytes(req.frame)).decode("ascii"),
                "phrase": req.phrase,
                "confidence": req.confidence,
            },
        )
        mask_img = Image.open(io.BytesIO(resp.content)).convert("1")
        return Mask(np.asarray(mask_img, dtype=bool), Resolution.IMAGE)


class BridgeHeadingProvider:
    def __init__(self, backend: BridgeBackend):
        self._backend = backend

    def heading(self, frame: FrameImage, character: str) -> Direction:
        url = f"{self._backend.base_url}/heading"
        try:
            resp = self._backend._session.post(
                url,
                json={
                    "image_png": base64.b64encode(png_bytes(frame)).decode("ascii"),
                    "character": character,
                },
                timeout=self._backend.timeout,
            )
        except requests.RequestException as exc:
            raise BackendError(f"bridge unreachable: {exc}", endpoint=url) from exc
        if resp.status_code == 404:
            raise CharacterNotFoundError(f"bridge cannot see {character!r} in the frame")
        if resp.status_code >= 400:
            raise BackendError(f"bridge returned {resp.status_code}", endpoint=url)
        return parse_direction(resp.json()["direction"])
