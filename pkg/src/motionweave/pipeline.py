"""Full pipeline orchestration: plan, first frame, segmentation, replication,
warp chain, settle, final descent, decode and evaluation.

Intermediate artifacts (per-frame t1 latents, per-frame masks, the anchor
schedule) are persisted so edits and post-hoc evaluation can reuse a run.
Any stage failure aborts with the stage name and removes partial outputs.
"""

from __future__ import annotations

import contextlib
import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from . import diffusion, evaluator, planner, scheduler, segmenter, warp_engine
from .core import (
    Delta,
    FrameImage,
    LatentGrid,
    Mask,
    MotionPlan,
    PipelineConfig,
    Resolution,
    direction_to_delta,
)
from .errors import (
    MetricUndefinedError,
    MotionWeaveError,
    PipelineStageError,
    StateError,
    UsageError,
)
from .evaluator import CorrectnessResult, Trajectory
from .segmenter import SegmentationRequest
from .toy_backend import ToyBackend
from .warp_engine import BACKGROUND_SCENE

LATENTS_FILE = "latents_t1.npz"
REPORT_FILE = "report.json"
PLAN_FILE = "plan.json"


def _slug(name: str) -> str:
    return re.sub(r"[^a-z0-9]+", "_", name.lower()).strip("_")


def mask_filename(character: str, frame: int) -> str:
    return f"mask_{_slug(character)}_{frame:03d}.png"


def frame_filename(frame: int) -> str:
    return f"frame_{frame:03d}.png"


@dataclass
class GenerationResult:
    frames: list[FrameImage]
    masks: dict[str, list[Mask]]  # latent-resolution masks per character
    latents_t1: list[LatentGrid]
    plan: MotionPlan
    report: dict
    out_dir: Path | None = None


@contextlib.contextmanager
def _stage(name: str):
    try:
        yield
    except PipelineStageError:
        raise
    except Exception as exc:
        raise PipelineStageError(name, exc) from exc


class _ArtifactWriter:
    """Tracks written files so a failed run can remove its partial outputs."""

    def __init__(self, out_dir: Path | None):
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.created_dir = False
        self.paths: list[Path] = []
        if self.out_dir is not None and not self.out_dir.exists():
            self.out_dir.mkdir(parents=True)
            self.created_dir = True

    def path(self, name: str) -> Path:
        p = self.out_dir / name
        self.paths.append(p)
        return p

    def cleanup(self):
        for p in self.paths:
            with contextlib.suppress(OSError):
                p.unlink()
        if self.created_dir and self.out_dir is not None:
            with contextlib.suppress(OSError):
                self.out_dir.rmdir()


def make_backend(config: PipelineConfig):
    if config.backend == "toy":
        return ToyBackend(config)
    from .bridge_client import BridgeBackend

    if not config.bridge_url:
        raise UsageError("bridge backend selected but no bridge URL configured")
    return BridgeBackend(config.bridge_url, latent_shape=(3, config.latent_size, config.latent_size))


def segmentation_provider_for(backend):
    provider = getattr(backend, "segmentation_provider", None)
    if provider is not None:
        return provider()
    from .bridge_client import BridgeSegmentationProvider

    return BridgeSegmentationProvider(backend)


def heading_provider_for(backend):
    provider = getattr(backend, "heading_provider", None)
    if provider is not None:
        return provider()
    from .bridge_client import BridgeHeadingProvider

    return BridgeHeadingProvider(backend)


def _segment_plan_characters(
    plan: MotionPlan, first_frame: FrameImage, provider, config: PipelineConfig
) -> tuple[MotionPlan, dict[str, Mask], list[str]]:
    """Image-resolution mask per character; characters segmenting empty are
    dropped (folded into the background). The synthetic camera character takes
    the complement of everything else."""
    masks: dict[str, Mask] = {}
    warnings: list[str] = []
    kept = []
    for c in plan.characters:
        if c.name == BACKGROUND_SCENE:
            continue
        m = segmenter.segment(
            SegmentationRequest(frame=first_frame, phrase=c.phrase, confidence=config.seg_confidence),
            provider,
        )
        if m.is_empty:
            warnings.append(f"character {c.name!r} segmented empty and was dropped")
            continue
        masks[c.name] = m
        kept.append(c)
    if any(c.name == BACKGROUND_SCENE for c in plan.characters):
        union = np.zeros((first_frame.height, first_frame.width), dtype=bool)
        for m in masks.values():
            union |= m.grid
        scene_track = plan.character(BACKGROUND_SCENE)
        masks[BACKGROUND_SCENE] = Mask(~union, Resolution.IMAGE)
        kept = [scene_track] + kept
    return MotionPlan(tuple(kept), plan.frame_count), masks, warnings


def _warp_chain(
    plan: MotionPlan,
    base_latent: LatentGrid,
    masks0: list[Mask],
    config: PipelineConfig,
) -> tuple[list[LatentGrid], list[list[Mask]], list[str]]:
    """Chain compose_next_frame over every transition. Returns per-frame latents,
    per-frame per-character masks and exit notices."""
    latents = diffusion.replicate_initial_latents(base_latent, config.frame_count)
    masks_per_frame: list[list[Mask]] = [list(masks0)]
    warnings: list[str] = []
    exited: set[int] = set()
    for k in range(1, config.frame_count):
        deltas = []
        for i, c in enumerate(plan.characters):
            if i in exited:
                deltas.append(Delta(0, 0))
            else:
                deltas.append(direction_to_delta(c.directions[k - 1], config.sigma))
        latent, new_masks = warp_engine.compose_next_frame(
            latents[k - 1], masks_per_frame[k - 1], deltas, base_latent, masks0
        )
        for i, (m, c) in enumerate(zip(new_masks, plan.characters)):
            if m.is_empty and i not in exited and not masks_per_frame[k - 1][i].is_empty:
                warnings.append(
                    f"character {c.name!r} left the frame at frame {k} and folds into the background"
                )
                exited.add(i)
        latents[k] = latent
        masks_per_frame.append(new_masks)
    return latents, masks_per_frame, warnings


def _configure_attention(backend, anchor_of: dict[int, int], enabled: bool):
    bind = getattr(backend, "bind_anchors", None)
    if bind is not None:
        bind(anchor_of)
    if hasattr(backend, "attention_enabled"):
        backend.attention_enabled = enabled


def _toy_frame_targets(backend, plan, masks_per_frame, config) -> None:
    """Steer the settle toward the warped scene: re-run the warp chain on the
    compiled scene target so per-frame targets match the warped latents."""
    if not isinstance(backend, ToyBackend):
        return
    target = backend.scene_target()
    targets = [target]
    current = target
    for k in range(1, config.frame_count):
        deltas = [
            direction_to_delta(c.directions[k - 1], config.sigma) if not masks_per_frame[k - 1][i].is_empty else Delta(0, 0)
            for i, c in enumerate(plan.characters)
        ]
        current, _ = warp_engine.compose_next_frame(
            current, masks_per_frame[k - 1], deltas, target, masks_per_frame[0]
        )
        targets.append(current)
    backend.set_frame_targets(targets)


def _evaluate(
    plan: MotionPlan, masks_per_frame: list[list[Mask]], sigma: int
) -> tuple[list[Trajectory], dict[str, CorrectnessResult | None]]:
    trajectories = []
    accuracies: dict[str, CorrectnessResult | None] = {}
    for i, c in enumerate(plan.characters):
        char_masks = [frame_masks[i] for frame_masks in masks_per_frame]
        try:
            traj = evaluator.track_trajectory(char_masks, c.name)
        except MotionWeaveError:
            continue
        trajectories.append(traj)
        try:
            accuracies[c.name] = evaluator.motion_correctness(traj, c.directions, sigma)
        except MetricUndefinedError:
            accuracies[c.name] = None
    return trajectories, accuracies


def _write_artifacts(
    writer: _ArtifactWriter,
    images: Sequence[FrameImage],
    plan: MotionPlan,
    masks_per_frame: list[list[Mask]],
    latents_t1: Sequence[LatentGrid],
    report: dict,
    config: PipelineConfig,
    gif: bool,
):
    for k, img in enumerate(images):
        Image.fromarray(img.pixels).save(writer.path(frame_filename(k)), format="PNG")
    for i, c in enumerate(plan.characters):
        for k in range(len(masks_per_frame)):
            m = segmenter.to_image_resolution(masks_per_frame[k][i], config.latent_factor)
            segmenter.save_mask_png(m, writer.path(mask_filename(c.name, k)))
    arrays = {f"frame_{k:03d}": lat.data for k, lat in enumerate(latents_t1)}
    np.savez(writer.path(LATENTS_FILE), **arrays)
    writer.path(PLAN_FILE).write_text(plan.to_json())
    writer.path(REPORT_FILE).write_text(evaluator.report_to_json(report))
    if gif:
        pil_frames = [Image.fromarray(img.pixels) for img in images]
        pil_frames[0].save(
            writer.path("video.gif"),
            save_all=True,
            append_images=pil_frames[1:],
            duration=125,
            loop=0,
        )


def _first_frame_stage(config: PipelineConfig, prompt: str, sched):
    backend = make_backend(config)
    prepare = getattr(backend, "prepare_condition", None)
    if prepare is not None:
        prepare(prompt)
    z = diffusion.sample_initial_noise(config.seed, backend.latent_shape, sched)
    x0_first, x_t1 = diffusion.ddim_denoise(
        z, sched.timesteps, 0, backend, prompt, sched, frame=0, record_at=sched.t1
    )
    return backend, x_t1, backend.decode(x0_first)


def run_generation(
    config: PipelineConfig,
    prompt: str,
    plan: MotionPlan | None = None,
    slices: Sequence[str] | None = None,
    camera: str | None = None,
    out_dir: str | Path | None = None,
    llm_provider=None,
    heading=None,
    heading_character: str | None = None,
    lexicon=None,
    gif: bool = False,
) -> GenerationResult:
    """Run the whole pipeline for one prompt and seed.

    Order: plan, first frame, per-character segmentation, latent replication at
    t1, chained warps, DDPM settle t1->t2 and DDIM descent t2->0 with
    motion-aware attention active, decode, evaluate, persist. When a heading
    character is named, the first frame is generated before planning so the
    heading provider can look at it; if the provider fails the plan proceeds
    from the prompt alone.
    """
    if not prompt.strip():
        raise UsageError("prompt must be non-empty")
    sched = config.schedule()
    writer = _ArtifactWriter(Path(out_dir) if out_dir is not None else None)
    warnings: list[str] = []
    backend = x_t1 = first_image = None
    try:
        if heading_character is not None and plan is None:
            with _stage("first_frame"):
                backend, x_t1, first_image = _first_frame_stage(config, prompt, sched)
            with _stage("plan"):
                try:
                    heading = planner.resolve_heading(
                        first_image, heading_character, heading_provider_for(backend)
                    )
                except MotionWeaveError as exc:
                    warnings.append(
                        f"heading for {heading_character!r} unavailable ({exc}); "
                        "planning from the prompt alone"
                    )

        with _stage("plan"):
            if plan is None:
                if llm_provider is not None:
                    plan = planner.plan_from_prompt(
                        prompt, config.frame_count, provider=llm_provider, heading=heading
                    )
                else:
                    fallback = planner.fallback_plan(
                        prompt, config.frame_count, lexicon=lexicon
                    )
                    plan = fallback.plan
                    if fallback.warning:
                        warnings.append(fallback.warning)
            if plan.frame_count != config.frame_count:
                raise UsageError(
                    f"plan covers {plan.frame_count} frames but config wants {config.frame_count}"
                )
            if camera is not None:
                plan = warp_engine.apply_camera_mode(plan, camera)
            slice_sched = scheduler.slice_schedule(
                list(slices) if slices else [prompt], config.frame_count
            )

        if backend is None:
            with _stage("first_frame"):
                backend, x_t1, first_image = _first_frame_stage(config, prompt, sched)

        with _stage("segment"):
            provider = segmentation_provider_for(backend)
            plan, image_masks, seg_warnings = _segment_plan_characters(
                plan, first_image, provider, config
            )
            warnings.extend(seg_warnings)
            masks0 = [
                segmenter.to_latent_resolution(image_masks[c.name], config.latent_factor)
                for c in plan.characters
            ]

        with _stage("replicate_and_warp"):
            latents_t1, masks_per_frame, warp_warnings = _warp_chain(
                plan, x_t1, masks0, config
            )
            warnings.extend(warp_warnings)

        with _stage("anchors"):
            mask_sequence = [tuple(frame_masks) for frame_masks in masks_per_frame]
            if plan.characters:
                schedule_entries = scheduler.anchor_schedule(
                    mask_sequence, config.gamma, slice_sched
                )
            else:
                schedule_entries = [
                    {"frame": s.start + j, "anchor": s.start}
                    for s in slice_sched.slices
                    for j in range(s.end - s.start)
                ]
            anchor_of = {e["frame"]: e["anchor"] for e in schedule_entries}

        with _stage("settle"):
            _toy_frame_targets(backend, plan, masks_per_frame, config)
            _configure_attention(backend, anchor_of, enabled=True)
            conditions = [slice_sched.prompt_for(k) for k in range(config.frame_count)]
            settled = diffusion.ddpm_settle(
                latents_t1,
                sched.t1,
                sched.t2,
                backend,
                conditions,
                diffusion.NoiseSource(config.seed),
                sched,
            )

        with _stage("denoise"):
            finals = diffusion.ddim_denoise_video(
                settled, sched.t2, 0, backend, conditions, sched
            )

        with _stage("decode"):
            images = [backend.decode(x) for x in finals]

        with _stage("evaluate"):
            trajectories, accuracies = _evaluate(plan, masks_per_frame, config.sigma)
            report = evaluator.emit_report(
                trajectories, accuracies, schedule_entries, config
            )
            report["prompt"] = prompt
            report["slices"] = [
                {"prompt": s.prompt, "start": s.start, "end": s.end}
                for s in slice_sched.slices
            ]
            report["warnings"] = warnings
            report["plan"] = plan.to_json_dict()

        masks_by_char = {
            c.name: [frame_masks[i] for frame_masks in masks_per_frame]
            for i, c in enumerate(plan.characters)
        }
        if writer.out_dir is not None:
            with _stage("write"):
                _write_artifacts(
                    writer, images, plan, masks_per_frame, latents_t1, report, config, gif
                )
        return GenerationResult(
            frames=images,
            masks=masks_by_char,
            latents_t1=latents_t1,
            plan=plan,
            report=report,
            out_dir=writer.out_dir,
        )
    except PipelineStageError:
        writer.cleanup()
        raise


@dataclass
class BaseRunArtifacts:
    config: PipelineConfig
    plan: MotionPlan
    prompt: str
    latents_t1: list[LatentGrid]
    masks_per_frame: list[list[Mask]]  # latent resolution, plan character order
    report: dict


def load_run(base_dir: str | Path) -> BaseRunArtifacts:
    """Read back the artifacts a generation run persisted."""
    base = Path(base_dir)
    report_path = base / REPORT_FILE
    plan_path = base / PLAN_FILE
    latents_path = base / LATENTS_FILE
    for p in (report_path, plan_path, latents_path):
        if not p.exists():
            raise StateError(f"missing run artifact: {p}")
    report = json.loads(report_path.read_text())
    config = PipelineConfig.from_dict(report["config"])
    plan = MotionPlan.from_json(plan_path.read_text())
    with np.load(latents_path) as bundle:
        latents = [
            LatentGrid(bundle[f"frame_{k:03d}"]) for k in range(config.frame_count)
        ]
    masks_per_frame: list[list[Mask]] = []
    for k in range(config.frame_count):
        frame_masks = []
        for c in plan.characters:
            p = base / mask_filename(c.name, k)
            if not p.exists():
                raise StateError(f"missing run artifact: {p}")
            image_mask = segmenter.load_mask_png(p)
            frame_masks.append(
                segmenter.to_latent_resolution(image_mask, config.latent_factor)
            )
        masks_per_frame.append(frame_masks)
    return BaseRunArtifacts(
        config=config,
        plan=plan,
        prompt=report.get("prompt", ""),
        latents_t1=latents,
        masks_per_frame=masks_per_frame,
        report=report,
    )


def _union_mask(frame_masks: Sequence[Mask], size: int) -> Mask:
    union = np.zeros((size, size), dtype=bool)
    for m in frame_masks:
        union |= m.grid
    return Mask(union, Resolution.LATENT)


def run_edit(
    base_dir: str | Path,
    fg_prompt: str | None = None,
    bg_prompt: str | None = None,
    out_dir: str | Path | None = None,
    seed: int | None = None,
    fg_plan: MotionPlan | None = None,
    gif: bool = False,
) -> GenerationResult:
    """Regenerate one component of a persisted run under a new prompt and fuse it
    with the other component's t1 latents, then settle and decode."""
    if (fg_prompt is None) == (bg_prompt is None):
        raise UsageError("pass exactly one of fg_prompt or bg_prompt")
    base = load_run(base_dir)
    config = base.config if seed is None else PipelineConfig.from_dict(
        {**base.config.to_dict(), "seed": seed}
    )
    sched = config.schedule()
    writer = _ArtifactWriter(Path(out_dir) if out_dir is not None else None)
    warnings: list[str] = []
    edit_prompt = fg_prompt if fg_prompt is not None else bg_prompt
    try:
        with _stage("regenerate"):
            backend = make_backend(config)
            prepare = getattr(backend, "prepare_condition", None)
            if prepare is not None:
                prepare(edit_prompt)
            z = diffusion.sample_initial_noise(config.seed, backend.latent_shape, sched)
            x0_new, x_t1_new = diffusion.ddim_denoise(
                z, sched.timesteps, 0, backend, edit_prompt, sched, frame=0, record_at=sched.t1
            )
            new_first = backend.decode(x0_new)

        size = config.latent_size
        if bg_prompt is not None:
            with _stage("fuse"):
                plan = base.plan
                masks_per_frame = base.masks_per_frame
                fused = [
                    warp_engine.fuse_foreground_background(
                        base.latents_t1[k], x_t1_new, _union_mask(masks_per_frame[k], size)
                    )
                    for k in range(config.frame_count)
                ]
                if isinstance(backend, ToyBackend):
                    base_targets = _recompute_targets(backend, base, config)
                    bg_target = backend.scene_target()
                    backend.set_frame_targets(
                        [
                            warp_engine.fuse_foreground_background(
                                base_targets[k], bg_target, _union_mask(masks_per_frame[k], size)
                            )
                            for k in range(config.frame_count)
                        ]
                    )
        else:
            with _stage("fg_plan_and_warp"):
                if fg_plan is None:
                    fallback = planner.fallback_plan(fg_prompt, config.frame_count)
                    fg_plan = fallback.plan
                    if fallback.warning:
                        warnings.append(fallback.warning)
                provider = segmentation_provider_for(backend)
                fg_plan, fg_image_masks, seg_warnings = _segment_plan_characters(
                    fg_plan, new_first, provider, config
                )
                warnings.extend(seg_warnings)
                fg_masks0 = [
                    segmenter.to_latent_resolution(fg_image_masks[c.name], config.latent_factor)
                    for c in fg_plan.characters
                ]
                fg_latents, fg_masks_per_frame, warp_warnings = _warp_chain(
                    fg_plan, x_t1_new, fg_masks0, config
                )
                warnings.extend(warp_warnings)
            with _stage("fuse"):
                plan = fg_plan
                masks_per_frame = fg_masks_per_frame
                fused = [
                    warp_engine.fuse_foreground_background(
                        fg_latents[k], base.latents_t1[k], _union_mask(masks_per_frame[k], size)
                    )
                    for k in range(config.frame_count)
                ]
                if isinstance(backend, ToyBackend):
                    base_targets = _recompute_targets(backend, base, config)
                    _toy_frame_targets(backend, fg_plan, fg_masks_per_frame, config)
                    fg_targets = [
                        LatentGrid(backend._frame_targets[k]) for k in range(config.frame_count)
                    ]
                    backend.set_frame_targets(
                        [
                            warp_engine.fuse_foreground_background(
                                fg_targets[k], base_targets[k], _union_mask(masks_per_frame[k], size)
                            )
                            for k in range(config.frame_count)
                        ]
                    )

        with _stage("anchors"):
            if plan.characters:
                schedule_entries = scheduler.anchor_schedule(
                    [tuple(fm) for fm in masks_per_frame], config.gamma
                )
            else:
                schedule_entries = [
                    {"frame": k, "anchor": 0} for k in range(config.frame_count)
                ]
            anchor_of = {e["frame"]: e["anchor"] for e in schedule_entries}

        with _stage("settle"):
            _configure_attention(backend, anchor_of, enabled=True)
            settled = diffusion.ddpm_settle(
                fused,
                sched.t1,
                sched.t2,
                backend,
                edit_prompt,
                diffusion.NoiseSource(config.seed),
                sched,
            )
        with _stage("denoise"):
            finals = diffusion.ddim_denoise_video(
                settled, sched.t2, 0, backend, edit_prompt, sched
            )
        with _stage("decode"):
            images = [backend.decode(x) for x in finals]
        with _stage("evaluate"):
            trajectories, accuracies = _evaluate(plan, masks_per_frame, config.sigma)
            report = evaluator.emit_report(trajectories, accuracies, schedule_entries, config)
            report["prompt"] = base.prompt
            report["edit"] = {
                "kind": "foreground" if fg_prompt is not None else "background",
                "prompt": edit_prompt,
                "base_dir": str(base_dir),
            }
            report["warnings"] = warnings
            report["plan"] = plan.to_json_dict()

        masks_by_char = {
            c.name: [fm[i] for fm in masks_per_frame] for i, c in enumerate(plan.characters)
        }
        if writer.out_dir is not None:
            with _stage("write"):
                _write_artifacts(
                    writer, images, plan, masks_per_frame, fused, report, config, gif
                )
        return GenerationResult(
            frames=images,
            masks=masks_by_char,
            latents_t1=fused,
            plan=plan,
            report=report,
            out_dir=writer.out_dir,
        )
    except PipelineStageError:
        writer.cleanup()
        raise


def _recompute_targets(
    backend: ToyBackend, base: BaseRunArtifacts, config: PipelineConfig
) -> list[LatentGrid]:
    """Rebuild the base run's per-frame steering targets from its prompt, plan and
    persisted masks (the scene compiler is deterministic)."""
    target = backend.target_for(base.prompt)
    targets = [target]
    current = target
    for k in range(1, config.frame_count):
        deltas = [
            direction_to_delta(c.directions[k - 1], config.sigma)
            if not base.masks_per_frame[k - 1][i].is_empty
            else Delta(0, 0)
            for i, c in enumerate(base.plan.characters)
        ]
        current, _ = warp_engine.compose_next_frame(
            current, base.masks_per_frame[k - 1], deltas, target, base.masks_per_frame[0]
        )
        targets.append(current)
    return targets
