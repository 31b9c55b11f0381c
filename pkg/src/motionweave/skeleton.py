"""Skeleton motion: integrate node plans into pose sequences and render
stick-figure frames that a pose-conditioned generator could consume."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from PIL import Image, ImageDraw

from .core import FrameImage, direction_to_delta
from .errors import UsageError
from .planner import SKELETON_NODES, SkeletonPlan

Pose = dict[str, tuple[float, float]]

# Bone edges between the 10 nodes; the head doubles as the neck junction.
BONES = (
    ("head", "left_shoulder"),
    ("head", "right_shoulder"),
    ("head", "pelvis"),
    ("left_shoulder", "left_hand"),
    ("right_shoulder", "right_hand"),
    ("pelvis", "left_knee"),
    ("pelvis", "right_knee"),
    ("left_knee", "left_foot"),
    ("right_knee", "right_foot"),
)

_DEFAULT_POSE_UNIT = {
    "head": (0.50, 0.14),
    "left_shoulder": (0.38, 0.30),
    "right_shoulder": (0.62, 0.30),
    "left_hand": (0.30, 0.50),
    "right_hand": (0.70, 0.50),
    "pelvis": (0.50, 0.56),
    "left_knee": (0.42, 0.74),
    "right_knee": (0.58, 0.74),
    "left_foot": (0.40, 0.92),
    "right_foot": (0.60, 0.92),
}


def default_pose(size: int) -> Pose:
    """A standing figure centered in a size x size frame."""
    return {n: (x * size, y * size) for n, (x, y) in _DEFAULT_POSE_UNIT.items()}


def integrate_skeleton(
    plan: SkeletonPlan,
    initial_pose: Mapping[str, tuple[float, float]],
    sigma: int,
    size: int,
) -> list[Pose]:
    """Accumulate per-transition node steps into one pose per frame, clamping
    coordinates to the frame bounds."""
    if set(initial_pose) != set(SKELETON_NODES):
        raise UsageError(f"initial pose must cover exactly the nodes {SKELETON_NODES}")
    poses: list[Pose] = [{n: tuple(map(float, initial_pose[n])) for n in SKELETON_NODES}]
    for k in range(plan.frame_count - 1):
        pose: Pose = {}
        for node in SKELETON_NODES:
            step = direction_to_delta(plan.nodes[node][k], sigma)
            x, y = poses[-1][node]
            pose[node] = (
                float(np.clip(x + step.dx, 0.0, size - 1)),
                float(np.clip(y + step.dy, 0.0, size - 1)),
            )
        poses.append(pose)
    return poses


def render_skeleton_frames(poses: Sequence[Mapping[str, tuple[float, float]]], size: int) -> list[FrameImage]:
    """Draw white bones and red node discs on black, one frame per pose.

    Drawn at 4x and downsampled for anti-aliasing; discs paint over bones so a
    disc count stays recoverable from the red channel.
    """
    if not poses:
        raise UsageError("need at least one pose to render")
    ss = 4
    radius = max(3, size // 56) * ss
    width = max(1, size // 128) * ss
    frames = []
    for pose in poses:
        canvas = Image.new("RGB", (size * ss, size * ss), (0, 0, 0))
        draw = ImageDraw.Draw(canvas)
        for a, b in BONES:
            ax, ay = pose[a]
            bx, by = pose[b]
            draw.line(
                [(ax * ss, ay * ss), (bx * ss, by * ss)], fill=(255, 255, 255), width=width
            )
        for node in SKELETON_NODES:
            x, y = pose[node]
            draw.ellipse(
                [(x * ss - radius, y * ss - radius), (x * ss + radius, y * ss + radius)],
                fill=(220, 40, 40),
            )
        frame = canvas.resize((size, size), Image.LANCZOS)
        frames.append(FrameImage(np.asarray(frame, dtype=np.uint8)))
    return frames


def poses_to_json(poses: Sequence[Pose]) -> str:
    return json.dumps(
        [{n: list(p[n]) for n in SKELETON_NODES} for p in poses], indent=2, sort_keys=True
    )


def poses_from_json(text: str) -> list[Pose]:
    return [
        {n: (float(p[n][0]), float(p[n][1])) for n in SKELETON_NODES}
        for p in json.loads(text)
    ]


def save_poses(poses: Sequence[Pose], path: str | Path):
    Path(path).write_text(poses_to_json(poses))
