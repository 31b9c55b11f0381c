"""Motion-correctness scoring.

Object trajectories are the per-frame bounding-box centers of the character
masks; a transition counts as correct when the cosine between the planned step
and the observed center displacement is positive. Motionless ground truth has
no defined cosine, so those transitions are held to a displacement tolerance
and reported separately from the headline (moving-object) accuracy.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Mapping, Sequence

from .core import Direction, Mask, PipelineConfig, direction_to_delta
from .errors import CharacterNotFoundError, MetricUndefinedError, UsageError
from .segmenter import mask_center


@dataclass(frozen=True)
class Trajectory:
    """Per-frame object centers; None marks frames where the mask was empty."""

    character: str
    centers: tuple[tuple[float, float] | None, ...]

    def __len__(self) -> int:
        return len(self.centers)


@dataclass(frozen=True)
class CorrectnessResult:
    accuracy: float  # moving-transition accuracy, the headline number
    evaluated: int
    correct: int
    motionless_total: int
    motionless_ok: int
    skipped: int  # transitions with an absent center on either side

    @property
    def motionless_accuracy(self) -> float | None:
        if self.motionless_total == 0:
            return None
        return self.motionless_ok / self.motionless_total

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "evaluated": self.evaluated,
            "correct": self.correct,
            "motionless_total": self.motionless_total,
            "motionless_ok": self.motionless_ok,
            "motionless_accuracy": self.motionless_accuracy,
            "skipped": self.skipped,
        }


def track_trajectory(masks: Sequence[Mask], character: str) -> Trajectory:
    """Bounding-box center of the character's mask in every frame."""
    if len(masks) < 2:
        raise UsageError("need at least two frames to track")
    centers: list[tuple[float, float] | None] = []
    for m in masks:
        centers.append(None if m.is_empty else mask_center(m))
    if all(c is None for c in centers):
        raise CharacterNotFoundError(f"{character!r} is absent from every frame")
    return Trajectory(character=character, centers=tuple(centers))


def motion_correctness(
    traj: Trajectory, directions: Sequence[Direction], sigma: int
) -> CorrectnessResult:
    """Score direction agreement between a trajectory and its plan.

    For each transition with ground truth other than motionless and both
    centers present: correct iff dot(planned step, observed step) > 0 (zero or
    negative cosine is wrong, as is a degenerate zero-length observed step).
    Motionless ground truth passes when the observed displacement stays within
    sigma / 2.
    """
    if len(directions) != len(traj) - 1:
        raise UsageError(
            f"plan has {len(directions)} transitions for {len(traj)} frames"
        )
    evaluated = correct = 0
    motionless_total = motionless_ok = 0
    skipped = 0
    for i, gt in enumerate(directions):
        a, b = traj.centers[i], traj.centers[i + 1]
        if a is None or b is None:
            skipped += 1
            continue
        pred = (b[0] - a[0], b[1] - a[1])
        if gt is Direction.MOTIONLESS:
            motionless_total += 1
            if (pred[0] ** 2 + pred[1] ** 2) ** 0.5 <= sigma / 2.0:
                motionless_ok += 1
            continue
        evaluated += 1
        step = direction_to_delta(gt, sigma)
        if step.dx * pred[0] + step.dy * pred[1] > 0.0:
            correct += 1
    if evaluated == 0:
        raise MetricUndefinedError(
            f"no evaluable moving transitions for {traj.character!r}"
        )
    return CorrectnessResult(
        accuracy=correct / evaluated,
        evaluated=evaluated,
        correct=correct,
        motionless_total=motionless_total,
        motionless_ok=motionless_ok,
        skipped=skipped,
    )


def emit_report(
    trajectories: Sequence[Trajectory],
    accuracies: Mapping[str, CorrectnessResult | None],
    anchor_schedule: Sequence[Mapping[str, int]],
    config: "PipelineConfig | dict",
) -> dict:
    """Assemble the run report document (serialise with sort_keys for a stable
    key order)."""
    characters = []
    defined = []
    for traj in trajectories:
        result = accuracies.get(traj.character)
        entry: dict = {
            "name": traj.character,
            "centers": [list(c) if c is not None else None for c in traj.centers],
        }
        if result is None:
            entry["accuracy"] = None
        else:
            entry.update(result.to_dict())
            defined.append(result.accuracy)
        characters.append(entry)
    doc = {
        "characters": characters,
        "mean_accuracy": (sum(defined) / len(defined)) if defined else None,
        "anchor_schedule": [dict(e) for e in anchor_schedule],
        "config": config.to_dict() if isinstance(config, PipelineConfig) else dict(config),
    }
    return doc


def report_to_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True)
