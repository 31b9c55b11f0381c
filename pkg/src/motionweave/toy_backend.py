"""Dependency-free stand-in for the pretrained model stack.

The scene compiler turns prompt keywords into sprite placements with
ground-truth geometry, the codec is an exact block-average/upsample pair, and
the denoiser steers DDIM/DDPM trajectories toward the compiled scene (or
per-frame warped targets) while optionally mixing each frame's estimate with
its anchor frame through the cross-frame attention layer. Everything is
deterministic, so end-to-end runs are verifiable at desk scale.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from .core import Direction, FrameImage, LatentGrid, Mask, PipelineConfig, Resolution
from .errors import (
    BackendError,
    CharacterNotFoundError,
    FrameRangeError,
    SceneCompileError,
)
from .segmenter import SegmentationRequest

COLORS: dict[str, tuple[int, int, int]] = {
    "red": (220, 40, 40),
    "green": (40, 180, 60),
    "blue": (50, 80, 220),
    "yellow": (230, 210, 50),
    "orange": (240, 140, 40),
    "purple": (150, 60, 200),
    "cyan": (60, 200, 220),
    "white": (240, 240, 240),
    "black": (15, 15, 15),
    "gray": (128, 128, 128),
}

SHAPES = ("square", "circle", "triangle", "wedge", "bar")

_FACING_RE = re.compile(r"\b(left|right|up|down)[\s\-]facing\b")
_BACKGROUND_RE = re.compile(
    r"\bon\s+(?:a\s+|an\s+|the\s+)?([a-z]+)(?:\s+background)?\b|\b([a-z]+)\s+background\b"
)


@dataclass(frozen=True)
class SceneEntity:
    name: str  # "<color> <shape>"
    shape: str
    color: tuple[int, int, int]
    facing: Direction
    bbox: tuple[int, int, int, int]  # x0, y0, x1, y1 (exclusive), image pixels


@dataclass
class CompiledScene:
    image: np.ndarray  # H x W x 3 uint8
    id_map: np.ndarray  # H x W int, 0 = background
    entities: list[SceneEntity] = field(default_factory=list)
    background: tuple[int, int, int] = COLORS["gray"]

    def entity_mask(self, index: int) -> Mask:
        return Mask(self.id_map == index + 1, Resolution.IMAGE)

    def find(self, phrase: str) -> int | None:
        """Index of the first entity whose name tokens all occur in the phrase
        (or vice versa); None when nothing matches."""
        tokens = set(re.findall(r"[a-z]+", phrase.lower()))
        for i, e in enumerate(self.entities):
            name_tokens = set(e.name.split())
            if name_tokens <= tokens or tokens <= name_tokens:
                return i
        return None


def _draw_entity(shape: str, facing: Direction, bbox, yy, xx) -> np.ndarray:
    x0, y0, x1, y1 = bbox
    cx, cy = (x0 + x1 - 1) / 2.0, (y0 + y1 - 1) / 2.0
    s = x1 - x0
    inside = (yy >= y0) & (yy < y1) & (xx >= x0) & (xx < x1)
    if shape == "square":
        return inside
    if shape == "bar":
        return inside & (np.abs(yy - cy) <= s / 4.0)
    if shape == "circle":
        return (xx - cx) ** 2 + (yy - cy) ** 2 <= (s / 2.0) ** 2
    if shape == "triangle":  # apex up
        return inside & (np.abs(xx - cx) <= (yy - y0) / 2.0)
    if shape == "wedge":  # apex toward the facing direction
        if facing is Direction.LEFT:
            return inside & (np.abs(yy - cy) <= (xx - x0) / 2.0)
        if facing is Direction.RIGHT:
            return inside & (np.abs(yy - cy) <= (x1 - 1 - xx) / 2.0)
        if facing is Direction.UP:
            return inside & (np.abs(xx - cx) <= (yy - y0) / 2.0)
        return inside & (np.abs(xx - cx) <= (y1 - 1 - yy) / 2.0)
    raise SceneCompileError(f"unknown shape {shape!r}", known_entities=SHAPES)


def compile_scene(prompt: str, image_size: int, latent_factor: int) -> CompiledScene:
    """Compile "<color> <shape>" mentions into a scene with ground-truth geometry.

    Entities are laid out on the horizontal midline, grid-aligned to the latent
    factor so the block codec is exact; "<direction>-facing" before a mention
    sets the sprite orientation and "on <color>" picks the background.
    """
    lowered = prompt.lower()
    tokens = re.findall(r"[a-z]+(?:-[a-z]+)?", lowered)
    mentions: list[tuple[str, str, Direction]] = []
    for i in range(len(tokens) - 1):
        color, shape = tokens[i], tokens[i + 1]
        if color in COLORS and shape in SHAPES:
            facing = Direction.RIGHT
            window = " ".join(tokens[max(0, i - 2) : i])
            m = _FACING_RE.search(window.replace("-", " ") + " ")
            if m is None:
                m = _FACING_RE.search(" ".join(t.replace("-", " ") for t in tokens[max(0, i - 2) : i]))
            if m is not None:
                facing = Direction(m.group(1))
            name = f"{color} {shape}"
            if name not in [mn for mn, _, _ in mentions]:
                mentions.append((name, shape, facing))
    if not mentions:
        raise SceneCompileError(
            f"no registered entity in prompt {prompt!r}; use '<color> <shape>' with "
            f"colors {sorted(COLORS)} and shapes {list(SHAPES)}",
            known_entities=SHAPES,
        )

    background = COLORS["gray"]
    bg_match = _BACKGROUND_RE.search(lowered)
    if bg_match:
        color_name = bg_match.group(1) or bg_match.group(2)
        if color_name in COLORS:
            background = COLORS[color_name]

    image = np.empty((image_size, image_size, 3), dtype=np.uint8)
    image[:] = background
    id_map = np.zeros((image_size, image_size), dtype=np.int32)
    yy, xx = np.mgrid[0:image_size, 0:image_size]
    sprite = (image_size // 8 // latent_factor) * latent_factor  # grid-aligned sprite size

    entities = []
    n = len(mentions)
    for i, (name, shape, facing) in enumerate(mentions):
        cx = round(image_size * (i + 1) / (n + 1) / latent_factor) * latent_factor
        cy = round(image_size / 2 / latent_factor) * latent_factor
        x0 = int(np.clip(cx - sprite // 2, 0, image_size - sprite))
        y0 = int(np.clip(cy - sprite // 2, 0, image_size - sprite))
        bbox = (x0, y0, x0 + sprite, y0 + sprite)
        geometry = _draw_entity(shape, facing, bbox, yy, xx)
        color = COLORS[name.split()[0]]
        image[geometry] = color
        id_map[geometry] = i + 1
        entities.append(SceneEntity(name=name, shape=shape, color=color, facing=facing, bbox=bbox))
    return CompiledScene(image=image, id_map=id_map, entities=entities, background=background)


class ToySegmentationProvider:
    """Segments by the scene compiler's identity map instead of pixel analysis;
    matched regions come back with the compiler's exact geometry."""

    def __init__(self, backend: "ToyBackend"):
        self._backend = backend

    def segment(self, req: SegmentationRequest) -> Mask:
        scene = self._backend.scene
        if scene is None:
            raise BackendError("toy backend has no compiled scene; run prepare_condition first")
        index = scene.find(req.phrase)
        if index is None:
            return Mask.empty(req.frame.height, req.frame.width, Resolution.IMAGE)
        return scene.entity_mask(index)


class ToyHeadingProvider:
    """Echoes the facing the scene compiler encoded for the named entity."""

    def __init__(self, backend: "ToyBackend"):
        self._backend = backend

    def heading(self, frame: FrameImage, character: str) -> Direction:
        scene = self._backend.scene
        if scene is None:
            raise BackendError("toy backend has no compiled scene; run prepare_condition first")
        index = scene.find(character)
        if index is None:
            raise CharacterNotFoundError(f"{character!r} is not visible in the scene")
        return scene.entities[index].facing


class ToyBackend:
    """Steering denoiser + exact block codec over a compiled scene.

    denoise() predicts the noise that would explain x_t if the clean latent were
    the frame's target; per-frame targets default to the compiled scene and can
    be replaced after warping so the settle keeps warped content. When the
    attention layer is enabled, the clean estimate is first mixed with the
    anchor frame's estimate via pooled cross-frame attention.
    """

    def __init__(self, config: PipelineConfig):
        self.config = config
        self.sched = config.schedule()
        self.latent_shape = (3, config.latent_size, config.latent_size)
        self.scene: CompiledScene | None = None
        self._target: np.ndarray | None = None
        self._frame_targets: dict[int, np.ndarray] = {}
        self._anchor_of: dict[int, int] = {}
        self._snapshot: dict[int, LatentGrid] | None = None
        self.attention_enabled = False
        self.attention_weight = config.attention_weight

    # --- scene / condition ---------------------------------------------------

    def prepare_condition(self, prompt: str):
        self.scene = compile_scene(prompt, self.config.image_size, self.config.latent_factor)
        self._target = self.encode(FrameImage(self.scene.image)).data
        self._frame_targets = {}

    def target_for(self, prompt: str) -> LatentGrid:
        """Compile a prompt to its latent target without switching scenes."""
        scene = compile_scene(prompt, self.config.image_size, self.config.latent_factor)
        return self.encode(FrameImage(scene.image))

    def scene_target(self) -> LatentGrid:
        if self._target is None:
            raise BackendError("toy backend has no compiled scene; run prepare_condition first")
        return LatentGrid(self._target)

    def set_frame_targets(self, targets):
        """Per-frame steering targets (e.g. the warp chain applied to the scene)."""
        if isinstance(targets, dict):
            self._frame_targets = {k: np.asarray(v.data if isinstance(v, LatentGrid) else v) for k, v in targets.items()}
        else:
            self._frame_targets = {
                k: np.asarray(v.data if isinstance(v, LatentGrid) else v)
                for k, v in enumerate(targets)
            }

    # --- attention wiring ------------------------------------------------------

    def bind_anchors(self, anchor_of: dict[int, int]):
        self._anchor_of = dict(anchor_of)

    def begin_timestep(self, frames: dict[int, LatentGrid], t: int):
        self._snapshot = frames

    def _pool(self, data: np.ndarray) -> np.ndarray:
        c, h, w = data.shape
        p = max(1, h // 16)
        pooled = data.reshape(c, h // p, p, w // p, p).mean(axis=(2, 4))
        return pooled

    def _attend(self, x0_hat: np.ndarray, anchor_x0: np.ndarray) -> np.ndarray:
        from .scheduler import cross_frame_attention

        c, h, w = x0_hat.shape
        q = self._pool(x0_hat).reshape(c, -1).T  # rows x channels
        kv = self._pool(anchor_x0).reshape(c, -1).T
        mixed = cross_frame_attention(q, kv, kv, d=c)
        ph = pw = int(np.sqrt(mixed.shape[0]))
        mixed = mixed.T.reshape(c, ph, pw)
        rep = h // ph
        return np.repeat(np.repeat(mixed, rep, axis=1), rep, axis=2).astype(np.float32)

    # --- denoiser backend protocol ---------------------------------------------

    def _x0_estimate(self, frame: int, condition: str) -> np.ndarray:
        if frame in self._frame_targets:
            return self._frame_targets[frame]
        if self._target is None:
            self.prepare_condition(condition)
        return self._target

    def denoise(self, x_t: LatentGrid, t: int, condition: str, frame: int = 0) -> np.ndarray:
        if not (1 <= t <= self.sched.timesteps):
            raise FrameRangeError(f"denoise timestep {t} outside 1..{self.sched.timesteps}")
        x0_hat = self._x0_estimate(frame, condition)
        if (
            self.attention_enabled
            and self.attention_weight > 0.0
            and self._snapshot is not None
        ):
            anchor = self._anchor_of.get(frame, frame)
            anchor_x0 = self._x0_estimate(anchor, condition)
            attended = self._attend(x0_hat, anchor_x0)
            x0_hat = (1.0 - self.attention_weight) * x0_hat + self.attention_weight * attended
        abar = self.sched.alpha_bar(t)
        eps = (x_t.data - np.sqrt(abar) * x0_hat) / np.sqrt(1.0 - abar)
        return eps.astype(np.float32)

    def encode(self, image: FrameImage) -> LatentGrid:
        """Factor-sized block average per channel, scaled to [-1, 1]."""
        f = self.config.latent_factor
        h, w = image.height, image.width
        blocks = image.pixels.reshape(h // f, f, w // f, f, 3).mean(axis=(1, 3))
        return LatentGrid((blocks / 255.0 * 2.0 - 1.0).transpose(2, 0, 1))

    def decode(self, latent: LatentGrid) -> FrameImage:
        """Nearest-neighbour upsample back to pixels; exact at block granularity."""
        f = self.config.latent_factor
        rgb = np.clip((latent.data + 1.0) / 2.0 * 255.0, 0.0, 255.0)
        rgb = np.rint(rgb).astype(np.uint8).transpose(1, 2, 0)
        return FrameImage(np.repeat(np.repeat(rgb, f, axis=0), f, axis=1))

    # --- companion providers -----------------------------------------------------

    def segmentation_provider(self) -> ToySegmentationProvider:
        return ToySegmentationProvider(self)

    def heading_provider(self) -> ToyHeadingProvider:
        return ToyHeadingProvider(self)


class OracleDenoiser:
    """Replays a fixed injected noise grid per frame.

    With the noise that forward_diffuse actually injected, a DDIM descent
    reconstructs x0 exactly (up to float error) from any timestep.
    """

    def __init__(self, eps_by_frame):
        if isinstance(eps_by_frame, np.ndarray):
            eps_by_frame = {0: eps_by_frame}
        self._eps = {k: np.asarray(v, dtype=np.float32) for k, v in eps_by_frame.items()}

    def denoise(self, x_t: LatentGrid, t: int, condition: str, frame: int = 0) -> np.ndarray:
        return self._eps[frame]
