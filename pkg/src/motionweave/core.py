"""Shared value types and the discrete direction algebra.

Coordinate convention used everywhere: x grows rightward, y grows downward
(raster order), so "up" carries a negative dy. Directions are the 8 compass
labels plus "motionless"; diagonal steps are lattice offsets (no sqrt(2)
normalisation) so warped content stays grid-aligned.
"""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass

import numpy as np

from .errors import PlanValidationError, ShapeError, VocabularyError

# Reserved name of the implicit motionless background; never a plan character.
BACKGROUND_NAME = "background"


class Direction(enum.Enum):
    MOTIONLESS = "motionless"
    LEFT = "left"
    RIGHT = "right"
    UP = "up"
    DOWN = "down"
    LEFT_DOWN = "left_down"
    LEFT_UP = "left_up"
    RIGHT_DOWN = "right_down"
    RIGHT_UP = "right_up"

    def __str__(self) -> str:
        return self.value

    @property
    def display(self) -> str:
        """Human/LLM-facing form, e.g. 'right down'."""
        return self.value.replace("_", " ")


_UNIT_OFFSETS: dict[Direction, tuple[int, int]] = {
    Direction.MOTIONLESS: (0, 0),
    Direction.LEFT: (-1, 0),
    Direction.RIGHT: (1, 0),
    Direction.UP: (0, -1),
    Direction.DOWN: (0, 1),
    Direction.LEFT_DOWN: (-1, 1),
    Direction.LEFT_UP: (-1, -1),
    Direction.RIGHT_DOWN: (1, 1),
    Direction.RIGHT_UP: (1, -1),
}

_OPPOSITES: dict[Direction, Direction] = {
    Direction.MOTIONLESS: Direction.MOTIONLESS,
    Direction.LEFT: Direction.RIGHT,
    Direction.RIGHT: Direction.LEFT,
    Direction.UP: Direction.DOWN,
    Direction.DOWN: Direction.UP,
    Direction.LEFT_DOWN: Direction.RIGHT_UP,
    Direction.LEFT_UP: Direction.RIGHT_DOWN,
    Direction.RIGHT_DOWN: Direction.LEFT_UP,
    Direction.RIGHT_UP: Direction.LEFT_DOWN,
}

_NORMALISE_RE = re.compile(r"[\s_\-]+")


def parse_direction(token: str) -> Direction:
    """Match a token against the nine labels, case/space/underscore-insensitively.

    Raises VocabularyError for anything else; fuzz matching never invents labels.
    """
    normalised = _NORMALISE_RE.sub("_", token.strip().lower()).strip("_")
    for d in Direction:
        if d.value == normalised:
            return d
    raise VocabularyError(token)


def opposite(d: Direction) -> Direction:
    return _OPPOSITES[d]


@dataclass(frozen=True)
class Delta:
    """Signed translation in grid cells (x rightward, y downward)."""

    dx: int
    dy: int

    def __neg__(self) -> "Delta":
        return Delta(-self.dx, -self.dy)

    def scaled(self, k: int) -> "Delta":
        return Delta(self.dx * k, self.dy * k)


def direction_to_delta(d: Direction, sigma: int) -> Delta:
    """Translate a direction label into a per-frame lattice offset of sigma cells."""
    if sigma < 1:
        raise ValueError(f"sigma must be >= 1, got {sigma}")
    ux, uy = _UNIT_OFFSETS[d]
    return Delta(ux * sigma, uy * sigma)


class Resolution(enum.Enum):
    IMAGE = "image"
    LATENT = "latent"


@dataclass(frozen=True)
class Mask:
    """Boolean occupancy grid locating one character at a given resolution."""

    grid: np.ndarray
    resolution: Resolution = Resolution.LATENT

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=bool)
        if grid.ndim != 2:
            raise ShapeError(f"mask grid must be 2-D, got shape {grid.shape}")
        object.__setattr__(self, "grid", grid)

    @property
    def height(self) -> int:
        return self.grid.shape[0]

    @property
    def width(self) -> int:
        return self.grid.shape[1]

    @property
    def is_empty(self) -> bool:
        return not bool(self.grid.any())

    @property
    def area(self) -> int:
        return int(self.grid.sum())

    @classmethod
    def empty(cls, height: int, width: int, resolution: Resolution = Resolution.LATENT) -> "Mask":
        return cls(np.zeros((height, width), dtype=bool), resolution)


@dataclass(frozen=True)
class LatentGrid:
    """C x H x W feature tensor; every operation must keep all values finite."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim != 3:
            raise ShapeError(f"latent grid must be C x H x W, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ShapeError("latent grid contains non-finite values")
        object.__setattr__(self, "data", data)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.data.shape)

    def copy(self) -> "LatentGrid":
        return LatentGrid(self.data.copy())


@dataclass(frozen=True)
class FrameImage:
    """RGB raster frame (H x W x 3, uint8)."""

    pixels: np.ndarray

    def __post_init__(self):
        pixels = np.asarray(self.pixels, dtype=np.uint8)
        if pixels.ndim != 3 or pixels.shape[2] != 3:
            raise ShapeError(f"frame must be H x W x 3, got shape {pixels.shape}")
        object.__setattr__(self, "pixels", pixels)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class CharacterTrack:
    """One moving character: a display name, a segmentation phrase and one
    direction per frame transition (F-1 entries)."""

    name: str
    phrase: str
    directions: tuple[Direction, ...]

    def is_motionless(self) -> bool:
        return all(d is Direction.MOTIONLESS for d in self.directions)


@dataclass(frozen=True)
class MotionPlan:
    """Per-character, per-transition directional intent compiled from a prompt.

    The motionless background is implicit and never listed as a character.
    """

    characters: tuple[CharacterTrack, ...]
    frame_count: int

    def __post_init__(self):
        object.__setattr__(self, "characters", tuple(self.characters))
        if self.frame_count < 1:
            raise PlanValidationError(f"frame_count must be positive, got {self.frame_count}")
        names = [c.name for c in self.characters]
        if len(set(names)) != len(names):
            raise PlanValidationError(f"duplicate character names: {names}")
        for c in self.characters:
            if c.name == BACKGROUND_NAME:
                raise PlanValidationError(
                    "the background is implicit and must not appear as a character"
                )
            if len(c.directions) != self.frame_count - 1:
                raise PlanValidationError(
                    f"character {c.name!r} has {len(c.directions)} directions, "
                    f"expected {self.frame_count - 1}"
                )

    def character(self, name: str) -> CharacterTrack:
        for c in self.characters:
            if c.name == name:
                return c
        raise KeyError(name)

    def names(self) -> list[str]:
        return [c.name for c in self.characters]

    def to_json_dict(self) -> dict:
        return {
            "frame_count": self.frame_count,
            "characters": [
                {
                    "name": c.name,
                    "phrase": c.phrase,
                    "directions": [d.value for d in c.directions],
                }
                for c in self.characters
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json_dict(cls, doc: dict) -> "MotionPlan":
        characters = tuple(
            CharacterTrack(
                name=entry["name"],
                phrase=entry.get("phrase", entry["name"]),
                directions=tuple(parse_direction(d) for d in entry["directions"]),
            )
            for entry in doc["characters"]
        )
        return cls(characters=characters, frame_count=int(doc["frame_count"]))

    @classmethod
    def from_json(cls, text: str) -> "MotionPlan":
        return cls.from_json_dict(json.loads(text))


@dataclass(frozen=True)
class DiffusionSchedule:
    """Noise schedule constants plus the warp/settle sandwich points.

    betas[i] is beta_{i+1} of the forward chain; alpha_bar is indexed 0..T with
    alpha_bar[0] = 1 (timestep 0 is clean data). t2 < t1 < T: features are warped
    at t1, DDPM-settled down to t2, then DDIM-denoised to 0.
    """

    betas: np.ndarray
    t1: int
    t2: int

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size < 1:
            raise ValueError("betas must be a non-empty 1-D array")
        if np.any(betas <= 0.0) or np.any(betas >= 1.0):
            raise ValueError("betas must lie in (0, 1)")
        if np.any(np.diff(betas) < 0.0):
            raise ValueError("betas must be monotone non-decreasing")
        if not (0 <= self.t2 < self.t1 < betas.size):
            raise ValueError(
                f"need 0 <= t2 < t1 < T, got t1={self.t1}, t2={self.t2}, T={betas.size}"
            )
        object.__setattr__(self, "betas", betas)
        alpha_bar = np.empty(betas.size + 1, dtype=np.float64)
        alpha_bar[0] = 1.0
        np.cumprod(1.0 - betas, out=alpha_bar[1:])
        object.__setattr__(self, "_alpha_bar", alpha_bar)

    @property
    def timesteps(self) -> int:
        return int(self.betas.size)

    def beta(self, t: int) -> float:
        """beta_t for t in 1..T."""
        return float(self.betas[t - 1])

    def alpha_bar(self, t: int) -> float:
        """Cumulative product of (1 - beta) up to timestep t; alpha_bar(0) = 1."""
        return float(self._alpha_bar[t])

    @property
    def terminal_alpha_bar(self) -> float:
        return self.alpha_bar(self.timesteps)

    @classmethod
    def linear(
        cls,
        timesteps: int = 50,
        beta_start: float = 1e-4,
        beta_end: float = 0.02,
        t1_frac: float = 0.4,
        t2_frac: float = 0.25,
    ) -> "DiffusionSchedule":
        betas = np.linspace(beta_start, beta_end, timesteps, dtype=np.float64)
        return cls(betas=betas, t1=int(t1_frac * timesteps), t2=int(t2_frac * timesteps))


@dataclass(frozen=True)
class PipelineConfig:
    """All tunables of a pipeline run; serialised verbatim into the run report."""

    frame_count: int = 8
    image_size: int = 512
    latent_factor: int = 8
    sigma: int = 4  # warp step, latent cells per frame
    gamma: float = 0.6  # IoU threshold gating anchor updates
    seed: int = 0
    backend: str = "toy"  # "toy" | "bridge"
    bridge_url: str | None = None
    seg_confidence: float = 0.3
    timesteps: int = 50
    beta_start: float = 1e-4
    beta_end: float = 0.02
    t1_frac: float = 0.4
    t2_frac: float = 0.25
    attention_weight: float = 0.15
    llm: str = "fallback"  # "fallback" | "replay" | "http"

    def __post_init__(self):
        if self.frame_count < 2:
            raise ValueError(f"frame_count must be >= 2, got {self.frame_count}")
        if self.sigma < 1:
            raise ValueError(f"sigma must be >= 1, got {self.sigma}")
        if not (0.0 < self.gamma <= 1.0):
            raise ValueError(f"gamma must be in (0, 1], got {self.gamma}")
        if self.image_size % self.latent_factor != 0:
            raise ValueError(
                f"image size {self.image_size} not divisible by latent factor {self.latent_factor}"
            )
        if not (0.0 < self.seg_confidence <= 1.0):
            raise ValueError(f"segmentation confidence must be in (0, 1], got {self.seg_confidence}")
        if self.backend not in ("toy", "bridge"):
            raise ValueError(f"backend must be 'toy' or 'bridge', got {self.backend!r}")

    @property
    def latent_size(self) -> int:
        return self.image_size // self.latent_factor

    def schedule(self) -> DiffusionSchedule:
        return DiffusionSchedule.linear(
            timesteps=self.timesteps,
            beta_start=self.beta_start,
            beta_end=self.beta_end,
            t1_frac=self.t1_frac,
            t2_frac=self.t2_frac,
        )

    def to_dict(self) -> dict:
        doc = {
            "frame_count": self.frame_count,
            "image_size": self.image_size,
            "latent_factor": self.latent_factor,
            "sigma": self.sigma,
            "gamma": self.gamma,
            "seed": self.seed,
            "backend": self.backend,
            "bridge_url": self.bridge_url,
            "seg_confidence": self.seg_confidence,
            "T": self.timesteps,
            "beta_start": self.beta_start,
            "beta_end": self.beta_end,
            "t1_frac": self.t1_frac,
            "t2_frac": self.t2_frac,
            "attention_weight": self.attention_weight,
            "llm": self.llm,
        }
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "PipelineConfig":
        return cls(
            frame_count=int(doc["frame_count"]),
            image_size=int(doc["image_size"]),
            latent_factor=int(doc["latent_factor"]),
            sigma=int(doc["sigma"]),
            gamma=float(doc["gamma"]),
            seed=int(doc["seed"]),
            backend=doc["backend"],
            bridge_url=doc.get("bridge_url"),
            seg_confidence=float(doc["seg_confidence"]),
            timesteps=int(doc["T"]),
            beta_start=float(doc["beta_start"]),
            beta_end=float(doc["beta_end"]),
            t1_frac=float(doc["t1_frac"]),
            t2_frac=float(doc["t2_frac"]),
            attention_weight=float(doc.get("attention_weight", 0.15)),
            llm=doc.get("llm", "fallback"),
        )


@dataclass(frozen=True)
class AnchorState:
    """Current anchor frame for cross-frame attention within one video slice.

    anchor_masks is the per-character mask snapshot of the anchor frame.
    prev_index/prev_masks track the most recently visited frame so an update
    can re-anchor on frame k-1 without re-reading history.
    """

    anchor_index: int
    anchor_masks: tuple[Mask, ...]
    prev_index: int
    prev_masks: tuple[Mask, ...]

    def __post_init__(self):
        object.__setattr__(self, "anchor_masks", tuple(self.anchor_masks))
        object.__setattr__(self, "prev_masks", tuple(self.prev_masks))
        if self.anchor_index < 0:
            raise ValueError("anchor index must be non-negative")
        if self.prev_index < self.anchor_index:
            raise ValueError("previous frame cannot precede the anchor")

    @classmethod
    def initial(cls, masks0, start_index: int = 0) -> "AnchorState":
        masks0 = _as_mask_tuple(masks0)
        return cls(
            anchor_index=start_index,
            anchor_masks=masks0,
            prev_index=start_index,
            prev_masks=masks0,
        )


def _as_mask_tuple(masks) -> tuple[Mask, ...]:
    if isinstance(masks, Mask):
        return (masks,)
    return tuple(masks)
