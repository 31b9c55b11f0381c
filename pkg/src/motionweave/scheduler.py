"""Motion-aware attention scheduling.

Frames attend to a per-slice Anchor Frame. The anchor moves to frame k-1
whenever the current frame's masks have drifted too far from the anchor's
(minimum per-character IoU below gamma); small motion keeps the anchor put so
early visual content is preserved.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .core import AnchorState, Mask, _as_mask_tuple
from .errors import CapacityError, ShapeError
from .segmenter import iou


@dataclass(frozen=True)
class PromptSlice:
    prompt: str
    start: int
    end: int  # exclusive


@dataclass(frozen=True)
class SliceSchedule:
    slices: tuple[PromptSlice, ...]

    @property
    def frame_count(self) -> int:
        return self.slices[-1].end

    def slice_of(self, frame: int) -> PromptSlice:
        for s in self.slices:
            if s.start <= frame < s.end:
                return s
        raise IndexError(f"frame {frame} outside schedule of {self.frame_count} frames")

    def prompt_for(self, frame: int) -> str:
        return self.slice_of(frame).prompt


def slice_schedule(prompts: Sequence[str], frame_count: int) -> SliceSchedule:
    """Partition [0, frame_count) into one contiguous slice per prompt, as equal
    as possible with earlier slices taking the remainder."""
    n = len(prompts)
    if n < 1:
        raise CapacityError("need at least one prompt")
    if n > frame_count:
        raise CapacityError(f"{n} prompts cannot partition {frame_count} frames")
    base, extra = divmod(frame_count, n)
    slices = []
    start = 0
    for i, prompt in enumerate(prompts):
        length = base + (1 if i < extra else 0)
        slices.append(PromptSlice(prompt=prompt, start=start, end=start + length))
        start += length
    return SliceSchedule(tuple(slices))


def _gate_iou(anchor_masks: tuple[Mask, ...], masks_k: tuple[Mask, ...]) -> float:
    """Minimum per-character IoU between anchor and current masks.

    Characters whose current mask is empty have exited the frame and are folded
    into the background, so they no longer gate the anchor. If nothing is left
    to compare the frames are vacuously similar (1.0).
    """
    values = []
    for anchor_m, cur_m in zip(anchor_masks, masks_k):
        if cur_m.is_empty and anchor_m.is_empty:
            continue
        if cur_m.is_empty:
            continue
        values.append(iou(anchor_m, cur_m))
    return min(values) if values else 1.0


def update_anchor(state: AnchorState, k: int, masks_k, gamma: float) -> AnchorState:
    """Advance the anchor state to frame k.

    If the (minimum per-character) IoU between the anchor's masks and frame k's
    masks drops below gamma, the current frame has deviated too far and the
    anchor becomes frame k-1 with k-1's mask snapshot; otherwise it is kept.
    Frames must be visited in order so the k-1 snapshot is available.
    """
    masks_k = _as_mask_tuple(masks_k)
    if k <= state.anchor_index:
        raise ShapeError(f"frame {k} does not follow anchor {state.anchor_index}")
    if k != state.prev_index + 1:
        raise ShapeError(
            f"frames must be visited in order: expected {state.prev_index + 1}, got {k}"
        )
    if len(masks_k) != len(state.anchor_masks):
        raise ShapeError(
            f"character count changed: {len(state.anchor_masks)} anchored, {len(masks_k)} now"
        )
    if _gate_iou(state.anchor_masks, masks_k) < gamma:
        return AnchorState(
            anchor_index=k - 1,
            anchor_masks=state.prev_masks,
            prev_index=k,
            prev_masks=masks_k,
        )
    return replace(state, prev_index=k, prev_masks=masks_k)


def anchor_schedule(
    mask_sequence: Sequence, gamma: float, slices: SliceSchedule | None = None
) -> list[dict]:
    """Fold update_anchor over a per-frame mask sequence and report the anchor in
    effect at every frame. Each slice restarts with its own first frame as anchor."""
    frame_count = len(mask_sequence)
    if slices is None:
        slices = slice_schedule([""], frame_count)
    schedule = []
    for s in slices.slices:
        state = AnchorState.initial(mask_sequence[s.start], start_index=s.start)
        schedule.append({"frame": s.start, "anchor": s.start})
        for k in range(s.start + 1, s.end):
            state = update_anchor(state, k, mask_sequence[k], gamma)
            schedule.append({"frame": k, "anchor": state.anchor_index})
    return schedule


def attention_weights(q: np.ndarray, k: np.ndarray, d: int) -> np.ndarray:
    """Row-wise softmax of q @ k.T / sqrt(d); each row sums to 1."""
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    if q.ndim != 2 or k.ndim != 2:
        raise ShapeError("Q and K must be 2-D (rows x features)")
    if q.shape[1] != d or k.shape[1] != d:
        raise ShapeError(
            f"feature dimension mismatch: d={d}, Q has {q.shape[1]}, K has {k.shape[1]}"
        )
    scores = q @ k.T / np.sqrt(float(d))
    scores -= scores.max(axis=1, keepdims=True)
    np.exp(scores, out=scores)
    scores /= scores.sum(axis=1, keepdims=True)
    return scores


def cross_frame_attention(q: np.ndarray, k: np.ndarray, v: np.ndarray, d: int) -> np.ndarray:
    """Attend the current frame's feature rows to the anchor frame's rows.

    Output rows are convex combinations of v's rows; with a single key row the
    output is exactly v broadcast over the queries.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 2:
        raise ShapeError("V must be 2-D (rows x features)")
    weights = attention_weights(q, k, d)
    if weights.shape[1] != v.shape[0]:
        raise ShapeError(f"K has {weights.shape[1]} rows but V has {v.shape[0]}")
    if v.shape[0] == 1:
        return np.repeat(v, weights.shape[0], axis=0)
    return weights @ v
