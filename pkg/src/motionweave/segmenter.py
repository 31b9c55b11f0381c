"""Character localisation and mask algebra.

The segmentation provider finds each character in the first frame once; all
later frames receive masks analytically via the warp chain, so everything else
here is pure mask arithmetic (IoU, bounding-box centers, resolution transfer).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np
from PIL import Image

from .core import FrameImage, Mask, Resolution
from .errors import EmptyMaskError, ShapeError, UsageError


@dataclass(frozen=True)
class SegmentationRequest:
    frame: FrameImage
    phrase: str
    confidence: float = 0.3

    def __post_init__(self):
        if not (0.0 < self.confidence <= 1.0):
            raise UsageError(f"confidence must be in (0, 1], got {self.confidence}")


class SegmentationProvider(Protocol):
    def segment(self, req: SegmentationRequest) -> Mask: ...


def segment(req: SegmentationRequest, backend: SegmentationProvider) -> Mask:
    """Locate the phrase in the frame; an empty mask means nothing scored above
    the confidence floor and the caller decides whether to drop the character."""
    if not req.phrase.strip():
        raise UsageError("segmentation phrase must be non-empty")
    mask = backend.segment(req)
    if mask.grid.shape != (req.frame.height, req.frame.width):
        raise ShapeError(
            f"provider mask shape {mask.grid.shape} does not match frame "
            f"{(req.frame.height, req.frame.width)}"
        )
    return mask


def _check_compatible(a: Mask, b: Mask):
    if a.grid.shape != b.grid.shape:
        raise ShapeError(f"mask shapes differ: {a.grid.shape} vs {b.grid.shape}")
    if a.resolution is not b.resolution:
        raise ShapeError(f"mask resolutions differ: {a.resolution} vs {b.resolution}")


def iou(a: Mask, b: Mask) -> float:
    """Intersection over union; two empty masks are defined as identical (1.0)."""
    _check_compatible(a, b)
    union = int(np.logical_or(a.grid, b.grid).sum())
    if union == 0:
        return 1.0
    inter = int(np.logical_and(a.grid, b.grid).sum())
    return inter / union


def mask_center(m: Mask) -> tuple[float, float]:
    """Midpoint (x, y) of the tight bounding box of true cells."""
    if m.is_empty:
        raise EmptyMaskError("cannot take the center of an empty mask")
    ys, xs = np.nonzero(m.grid)
    return (
        (int(xs.min()) + int(xs.max())) / 2.0,
        (int(ys.min()) + int(ys.max())) / 2.0,
    )


def to_latent_resolution(m: Mask, factor: int) -> Mask:
    """Block-reduce an image-level mask: a latent cell is true iff at least half
    of its factor x factor image block is true."""
    if factor < 1:
        raise UsageError(f"factor must be >= 1, got {factor}")
    h, w = m.grid.shape
    if h % factor != 0 or w % factor != 0:
        raise ShapeError(f"mask dims {(h, w)} not divisible by factor {factor}")
    blocks = m.grid.reshape(h // factor, factor, w // factor, factor)
    counts = blocks.sum(axis=(1, 3), dtype=np.int64)
    grid = counts * 2 >= factor * factor
    return Mask(grid, Resolution.LATENT)


def to_image_resolution(m: Mask, factor: int) -> Mask:
    """Nearest-neighbour upsample of a latent-level mask back to image level."""
    if factor < 1:
        raise UsageError(f"factor must be >= 1, got {factor}")
    grid = np.repeat(np.repeat(m.grid, factor, axis=0), factor, axis=1)
    return Mask(grid, Resolution.IMAGE)


def save_mask_png(m: Mask, path: str | Path):
    """Persist a mask as a 1-bit PNG."""
    Image.fromarray(m.grid).convert("1").save(path, format="PNG")


def load_mask_png(path: str | Path, resolution: Resolution = Resolution.IMAGE) -> Mask:
    grid = np.asarray(Image.open(path).convert("1"), dtype=bool)
    return Mask(grid, resolution)
