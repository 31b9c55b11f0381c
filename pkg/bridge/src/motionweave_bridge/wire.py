"""Wire helpers for the latent envelope: one JSON header line followed by a raw
little-endian float32 blob. Kept deliberately dependency-light; this format is
the language-neutral contract with the engine."""

from __future__ import annotations

import io
import json

import numpy as np
from PIL import Image

LATENT_DTYPE = "<f4"


class WireError(ValueError):
    """Malformed request payload; maps to HTTP 400 with a schema pointer."""


def pack_latent(data: np.ndarray, extra: dict | None = None) -> bytes:
    header = {"shape": list(data.shape), "dtype": LATENT_DTYPE}
    if extra:
        header.update(extra)
    return json.dumps(header).encode("utf-8") + b"\n" + np.ascontiguousarray(
        data, dtype=LATENT_DTYPE
    ).tobytes()


def unpack_latent(payload: bytes) -> tuple[np.ndarray, dict]:
    newline = payload.find(b"\n")
    if newline == -1:
        raise WireError("missing JSON header line before the latent blob")
    try:
        header = json.loads(payload[:newline].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise WireError(f"bad JSON header: {exc}") from exc
    if header.get("dtype") != LATENT_DTYPE:
        raise WireError(f"dtype must be {LATENT_DTYPE!r}, got {header.get('dtype')!r}")
    try:
        shape = tuple(int(s) for s in header["shape"])
    except (KeyError, TypeError, ValueError) as exc:
        raise WireError(f"bad shape field: {exc}") from exc
    blob = payload[newline + 1 :]
    expected = int(np.prod(shape)) * 4
    if len(blob) < expected:
        raise WireError(f"latent blob truncated: {len(blob)} < {expected} bytes")
    return np.frombuffer(blob[:expected], dtype=LATENT_DTYPE).reshape(shape).copy(), header


def png_encode(image: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(image).save(buf, format="PNG")
    return buf.getvalue()


def png_decode_rgb(data: bytes) -> np.ndarray:
    try:
        return np.asarray(Image.open(io.BytesIO(data)).convert("RGB"), dtype=np.uint8)
    except Exception as exc:  # PIL raises a zoo of types for bad bytes
        raise WireError(f"bad PNG payload: {exc}") from exc


def mask_png_encode(mask: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(mask.astype(bool)).convert("1").save(buf, format="PNG")
    return buf.getvalue()
