"""Model hubs: everything heavyweight lives behind this interface.

The service owns model policy (device, precision, batching); the HTTP layer
only marshals bytes. Two hubs ship: a deterministic procedural hub for
development, fixtures and contract tests, and a real-model hub that loads
pretrained pipelines when their weights are available locally.
"""

from __future__ import annotations

import hashlib
import threading
from typing import Protocol

import numpy as np

SCHEDULE = {"T": 50, "beta_start": 1e-4, "beta_end": 0.02, "t1": 20, "t2": 12}

COLOR_WORDS = {
    "red": (220, 40, 40),
    "green": (40, 180, 60),
    "blue": (50, 80, 220),
    "yellow": (230, 210, 50),
    "orange": (240, 140, 40),
    "purple": (150, 60, 200),
    "cyan": (60, 200, 220),
    "white": (240, 240, 240),
    "black": (15, 15, 15),
}


class HubUnavailable(RuntimeError):
    """Model weights could not be loaded; maps to HTTP 503 with the diagnostic."""


class ModelHub(Protocol):
    name: str

    def schedule_info(self) -> dict: ...

    def first_frame(self, prompt: str, seed: int, size: int) -> tuple[np.ndarray, np.ndarray]:
        """Returns (HxWx3 uint8 image, CxHxW float32 latent)."""

    def denoise(self, latent: np.ndarray, t: int, condition: str, frame: int) -> np.ndarray: ...

    def segment(self, image: np.ndarray, phrase: str, confidence: float) -> np.ndarray: ...

    def heading(self, image: np.ndarray, character: str) -> str | None: ...

    def decode(self, latent: np.ndarray) -> np.ndarray: ...


def _alpha_bar(t: int) -> float:
    betas = np.linspace(SCHEDULE["beta_start"], SCHEDULE["beta_end"], SCHEDULE["T"])
    return float(np.prod(1.0 - betas[:t]))


class ProceduralHub:
    """Deterministic stand-in with the same contract as the real models.

    First frames are procedural color scenes keyed by the prompt, segmentation
    is color matching against color words in the phrase, and heading compares
    the segmented centroid with the image center.
    """

    name = "procedural"
    latent_factor = 8

    def schedule_info(self) -> dict:
        return dict(SCHEDULE)

    def _scene(self, prompt: str, size: int) -> np.ndarray:
        digest = hashlib.blake2b(prompt.lower().encode(), digest_size=8).digest()
        rng = np.random.default_rng(np.frombuffer(digest, dtype=np.uint64))
        image = np.full((size, size, 3), 128, dtype=np.uint8)
        colors = [c for c in COLOR_WORDS if c in prompt.lower()] or ["red"]
        box = size // 4
        for i, color in enumerate(colors[:3]):
            x0 = int(rng.integers(0, size - box))
            y0 = int(rng.integers(0, size - box))
            image[y0 : y0 + box, x0 : x0 + box] = COLOR_WORDS[color]
        return image

    def _encode(self, image: np.ndarray) -> np.ndarray:
        f = self.latent_factor
        h, w = image.shape[:2]
        blocks = image.reshape(h // f, f, w // f, f, 3).mean(axis=(1, 3))
        return (blocks / 255.0 * 2.0 - 1.0).transpose(2, 0, 1).astype(np.float32)

    def first_frame(self, prompt: str, seed: int, size: int) -> tuple[np.ndarray, np.ndarray]:
        image = self._scene(f"{prompt}|{seed}", size)
        return image, self._encode(image)

    def denoise(self, latent: np.ndarray, t: int, condition: str, frame: int) -> np.ndarray:
        size = latent.shape[1] * self.latent_factor
        target = self._encode(self._scene(condition, size))
        abar = _alpha_bar(t)
        return ((latent - np.sqrt(abar) * target) / np.sqrt(1.0 - abar)).astype(np.float32)

    def segment(self, image: np.ndarray, phrase: str, confidence: float) -> np.ndarray:
        mask = np.zeros(image.shape[:2], dtype=bool)
        tolerance = 60.0 * (1.0 - confidence) + 20.0
        for word, rgb in COLOR_WORDS.items():
            if word in phrase.lower():
                dist = np.linalg.norm(image.astype(np.float32) - np.array(rgb), axis=2)
                mask |= dist < tolerance
        return mask

    def heading(self, image: np.ndarray, character: str) -> str | None:
        mask = self.segment(image, character, 0.3)
        if not mask.any():
            return None
        ys, xs = np.nonzero(mask)
        cx, cy = xs.mean(), ys.mean()
        dx = cx - image.shape[1] / 2.0
        dy = cy - image.shape[0] / 2.0
        if abs(dx) >= abs(dy):
            return "left" if dx < 0 else "right"
        return "up" if dy < 0 else "down"

    def decode(self, latent: np.ndarray) -> np.ndarray:
        f = self.latent_factor
        rgb = np.clip((latent + 1.0) / 2.0 * 255.0, 0, 255).astype(np.uint8)
        rgb = rgb.transpose(1, 2, 0)
        return np.repeat(np.repeat(rgb, f, axis=0), f, axis=1)


class RealModelHub:
    """Wraps pretrained text-to-image, grounded-segmentation and VQA pipelines.

    Loading is lazy and guarded; any import or weight failure surfaces as
    HubUnavailable so the service degrades to 503 instead of crashing.
    """

    name = "real"

    def __init__(self, model_dir: str | None = None, device: str = "cpu"):
        self.model_dir = model_dir
        self.device = device
        self._pipeline = None

    def _load(self):
        if self._pipeline is not None:
            return self._pipeline
        try:
            import torch  # noqa: F401
            from diffusers import StableDiffusionPipeline
        except ImportError as exc:
            raise HubUnavailable(f"model stack not importable: {exc}") from exc
        if not self.model_dir:
            raise HubUnavailable("no model_dir configured; pretrained weights are required")
        try:
            self._pipeline = StableDiffusionPipeline.from_pretrained(self.model_dir)
        except Exception as exc:
            raise HubUnavailable(f"failed to load weights from {self.model_dir}: {exc}") from exc
        self._pipeline.to(self.device)
        return self._pipeline

    def schedule_info(self) -> dict:
        return dict(SCHEDULE)

    def first_frame(self, prompt: str, seed: int, size: int):
        self._load()
        raise HubUnavailable("real-model inference paths are not wired in this build")

    def denoise(self, latent, t, condition, frame):
        self._load()
        raise HubUnavailable("real-model inference paths are not wired in this build")

    def segment(self, image, phrase, confidence):
        self._load()
        raise HubUnavailable("real-model inference paths are not wired in this build")

    def heading(self, image, character):
        self._load()
        raise HubUnavailable("real-model inference paths are not wired in this build")

    def decode(self, latent):
        self._load()
        raise HubUnavailable("real-model inference paths are not wired in this build")


class LockedHub:
    """Serialises access to a hub: one inference at a time per model instance."""

    def __init__(self, hub):
        self._hub = hub
        self._lock = threading.Lock()
        self.name = hub.name

    def __getattr__(self, attr):
        target = getattr(self._hub, attr)
        if not callable(target):
            return target

        def locked(*args, **kwargs):
            with self._lock:
                return target(*args, **kwargs)

        return locked


def create_hub(kind: str = "procedural", **kwargs) -> ModelHub:
    if kind == "procedural":
        return LockedHub(ProceduralHub())
    if kind == "real":
        return LockedHub(RealModelHub(**kwargs))
    raise ValueError(f"unknown hub kind {kind!r}")
