"""Disentangled per-character warping and compositing of latent features.

Each character's region (its current mask united with the reverse-shifted mask,
then shifted along the motion) is filled from the shifted previous frame; the
reverse-mask term drags surrounding background over the vacated trace, hiding
it like inpainting. Everything outside every character region is pinned to the
first frame's features, so the background never drifts.
"""

from __future__ import annotations

from dataclasses import replace
from typing import Sequence

import numpy as np

from .core import (
    CharacterTrack,
    Delta,
    Direction,
    LatentGrid,
    Mask,
    MotionPlan,
    Resolution,
    opposite,
)
from .errors import CharacterNotFoundError, OutOfRangeError, PlanValidationError, ShapeError

# Synthetic character carrying inverted motion when the camera follows a protagonist.
BACKGROUND_SCENE = "background_scene"


def _check_delta(delta: Delta, height: int, width: int):
    if abs(delta.dx) >= width or abs(delta.dy) >= height:
        raise OutOfRangeError(
            f"delta {(delta.dx, delta.dy)} out of range for grid {height}x{width}"
        )


def _shift_array(data: np.ndarray, delta: Delta, fill: str) -> np.ndarray:
    """Shift the trailing two axes so out[.., y, x] = in[.., y-dy, x-dx]."""
    h, w = data.shape[-2], data.shape[-1]
    ys = np.arange(h) - delta.dy
    xs = np.arange(w) - delta.dx
    out = data[..., np.clip(ys, 0, h - 1), :][..., np.clip(xs, 0, w - 1)]
    if fill == "zero":
        out = out.copy()
        out[..., (ys < 0) | (ys >= h), :] = 0
        out[..., :, (xs < 0) | (xs >= w)] = 0
    elif fill != "edge":
        raise ValueError(f"unknown fill mode {fill!r}")
    return out


def _shift_mask_grid(grid: np.ndarray, delta: Delta) -> np.ndarray:
    return _shift_array(grid, delta, fill="zero")


def shift(obj: LatentGrid | Mask, delta: Delta, fill: str = "edge") -> LatentGrid | Mask:
    """Translate a grid by delta cells. Vacated borders are edge-replicated for
    latents (or zeroed with fill='zero'); masks always receive false fill."""
    if isinstance(obj, Mask):
        _check_delta(delta, obj.height, obj.width)
        return Mask(_shift_mask_grid(obj.grid, delta), obj.resolution)
    _check_delta(delta, obj.height, obj.width)
    return LatentGrid(_shift_array(obj.data, delta, fill=fill))


def compose_next_frame(
    prev_latent: LatentGrid,
    prev_masks: Sequence[Mask],
    deltas: Sequence[Delta],
    base_latent: LatentGrid,
    base_masks: Sequence[Mask],
) -> tuple[LatentGrid, list[Mask]]:
    """Build frame k from frame k-1.

    For character i with previous mask m and step d, the output region
    shift(m | shift(m, -d), d) takes its values from shift(prev_latent, d);
    every cell claimed by no character keeps base_latent (the frame-0 feature).
    Overlaps resolve by list order: later characters paint over earlier ones.
    Output masks are shift(m, d); a mask shifted fully out of frame comes back
    empty, signalling that the character has exited and folds into the
    background from then on.
    """
    if prev_latent.shape != base_latent.shape:
        raise ShapeError(
            f"prev/base latent shapes differ: {prev_latent.shape} vs {base_latent.shape}"
        )
    if not (len(prev_masks) == len(deltas) == len(base_masks)):
        raise ShapeError(
            f"need one mask and delta per character, got {len(prev_masks)} masks, "
            f"{len(deltas)} deltas, {len(base_masks)} base masks"
        )
    h, w = prev_latent.height, prev_latent.width
    for m in list(prev_masks) + list(base_masks):
        if m.grid.shape != (h, w):
            raise ShapeError(f"mask shape {m.grid.shape} does not match latent {(h, w)}")
        if m.resolution is not Resolution.LATENT:
            raise ShapeError("compose_next_frame expects latent-resolution masks")

    out = base_latent.data.copy()
    new_masks: list[Mask] = []
    for m, d in zip(prev_masks, deltas):
        _check_delta(d, h, w)
        new_masks.append(Mask(_shift_mask_grid(m.grid, d), Resolution.LATENT))
        if m.is_empty:
            continue
        reverse = _shift_mask_grid(m.grid, -d)
        region = _shift_mask_grid(m.grid | reverse, d)
        if not region.any():
            continue
        content = _shift_array(prev_latent.data, d, fill="edge")
        out[:, region] = content[:, region]
    return LatentGrid(out), new_masks


def fuse_foreground_background(fg: LatentGrid, bg: LatentGrid, m_fg: Mask) -> LatentGrid:
    """Cell-wise select: foreground inside the mask, background outside."""
    if fg.shape != bg.shape:
        raise ShapeError(f"fg/bg shapes differ: {fg.shape} vs {bg.shape}")
    if m_fg.grid.shape != (fg.height, fg.width):
        raise ShapeError(f"mask shape {m_fg.grid.shape} does not match latent {fg.shape}")
    return LatentGrid(np.where(m_fg.grid[None, :, :], fg.data, bg.data))


def apply_camera_mode(plan: MotionPlan, protagonist: str) -> MotionPlan:
    """Camera-follow transform: the protagonist stays centered (motionless) and a
    synthetic scene character carries its motion inverted, frame by frame."""
    names = plan.names()
    if protagonist not in names:
        raise CharacterNotFoundError(f"protagonist {protagonist!r} not in plan: {names}")
    if BACKGROUND_SCENE in names:
        raise PlanValidationError(f"plan already contains a {BACKGROUND_SCENE!r} character")
    track = plan.character(protagonist)
    scene = CharacterTrack(
        name=BACKGROUND_SCENE,
        phrase=f"everything except the {protagonist}",
        directions=tuple(opposite(d) for d in track.directions),
    )
    characters = [scene]
    for c in plan.characters:
        if c.name == protagonist:
            characters.append(
                replace(c, directions=(Direction.MOTIONLESS,) * len(c.directions))
            )
        else:
            characters.append(c)
    return MotionPlan(tuple(characters), plan.frame_count)
