"""motionweave: prompt-driven motion planning, mask-guided latent warping and
motion-aware attention for zero-shot text-to-video pipelines."""

from .core import (
    AnchorState,
    CharacterTrack,
    Delta,
    DiffusionSchedule,
    Direction,
    FrameImage,
    LatentGrid,
    Mask,
    MotionPlan,
    PipelineConfig,
    Resolution,
    direction_to_delta,
    opposite,
    parse_direction,
)
from .diffusion import (
    NoiseSource,
    ddim_denoise,
    ddpm_settle,
    forward_diffuse,
    forward_diffuse_stepwise,
    generate_first_frame,
    replicate_initial_latents,
)
from .evaluator import Trajectory, emit_report, motion_correctness, track_trajectory
from .pipeline import GenerationResult, run_edit, run_generation
from .planner import (
    HeadingHint,
    SkeletonPlan,
    build_prompt,
    fallback_plan,
    parse_motion_plan,
    parse_skeleton_plan,
    resolve_heading,
)
from .scheduler import SliceSchedule, cross_frame_attention, slice_schedule, update_anchor
from .segmenter import SegmentationRequest, iou, mask_center, segment, to_latent_resolution
from .skeleton import integrate_skeleton, render_skeleton_frames
from .warp_engine import (
    apply_camera_mode,
    compose_next_frame,
    fuse_foreground_background,
    shift,
)

__version__ = "0.1.0"
