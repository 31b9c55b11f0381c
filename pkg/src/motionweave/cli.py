"""Command-line entry points.

Exit codes: 0 success, 1 usage error, 2 backend error, 3 pipeline-stage failure.
"""

from __future__ import annotations

import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import click

from . import evaluator, pipeline, planner, segmenter, skeleton
from .core import MotionPlan, PipelineConfig, Resolution, parse_direction
from .errors import BackendError, MotionWeaveError, PipelineStageError, UsageError
from .planner import HeadingHint, HttpChatProvider, ReplayProvider


def _config_from_flags(**kw) -> PipelineConfig:
    try:
        return PipelineConfig(**kw)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _llm_provider(llm: str, replay: str | None, llm_url: str | None):
    if llm == "fallback":
        return None
    if llm == "replay":
        if not replay:
            raise UsageError("--llm replay requires --replay FILE")
        return ReplayProvider(replay)
    if llm == "http":
        if not llm_url:
            raise UsageError("--llm http requires --llm-url URL")
        return HttpChatProvider(llm_url)
    raise UsageError(f"unknown llm mode {llm!r}")


def _load_plan(path: str | None) -> MotionPlan | None:
    if path is None:
        return None
    return MotionPlan.from_json(Path(path).read_text())


common_flags = [
    click.option("--frames", default=8, show_default=True, help="frames per video"),
    click.option("--size", default=512, show_default=True, help="square image size in pixels"),
    click.option("--gamma", default=0.6, show_default=True, help="IoU threshold for anchor updates"),
    click.option("--sigma", default=4, show_default=True, help="warp step in latent cells per frame"),
    click.option("--seed", default=0, show_default=True),
    click.option("--backend", default="toy", type=click.Choice(["toy", "bridge"]), show_default=True),
    click.option("--bridge-url", default=None, help="bridge service base URL"),
    click.option("--llm", default="fallback", type=click.Choice(["replay", "http", "fallback"]), show_default=True),
    click.option("--replay", default=None, help="LLM transcript file for --llm replay"),
    click.option("--llm-url", default=None, help="chat-completion endpoint for --llm http"),
]


def _with_flags(fn):
    for flag in reversed(common_flags):
        fn = flag(fn)
    return fn


@click.group()
def cli():
    """Zero-shot motion-controlled video pipeline."""


@cli.command("plan")
@click.option("--prompt", required=True)
@click.option("--heading", default=None, help="CHARACTER=DIRECTION first-frame heading hint")
@click.option("--lexicon", default=None, help="JSON verb->direction table for the fallback planner")
@click.option("--out", default=None, help="write the plan JSON here (stdout otherwise)")
@_with_flags
def plan_cmd(prompt, heading, lexicon, out, frames, **flags):
    """Compile a prompt into a motion plan."""
    provider = _llm_provider(flags["llm"], flags["replay"], flags["llm_url"])
    hint = None
    if heading:
        name, _, direction = heading.partition("=")
        if not direction:
            raise UsageError("--heading expects CHARACTER=DIRECTION")
        hint = HeadingHint(character=name, heading=parse_direction(direction))
    table = planner.load_lexicon(lexicon) if lexicon else None
    plan = planner.plan_from_prompt(
        prompt, frames, provider=provider, heading=hint, lexicon=table
    )
    text = plan.to_json()
    if out:
        Path(out).write_text(text)
        click.echo(f"wrote {out}")
    else:
        click.echo(text)


@cli.command("generate")
@click.option("--prompt", required=True)
@click.option("--plan", "plan_path", default=None, help="use a precompiled plan JSON")
@click.option("--camera", default=None, help="protagonist the camera follows")
@click.option("--slices", default=None, help="evolving-event prompts separated by '||'")
@click.option("--vqa-heading", default=None, help="resolve this character's heading from the first frame")
@click.option("--lexicon", default=None, help="JSON verb->direction table for the fallback planner")
@click.option("--out", "out_dir", required=True, help="output directory")
@click.option("--gif/--no-gif", default=False, show_default=True)
@click.option("--seeds", default=None, help="run a seed range a..b concurrently")
@_with_flags
def generate_cmd(
    prompt, plan_path, camera, slices, vqa_heading, lexicon, out_dir, gif, seeds, frames, size, **flags
):
    """Generate frames, masks and a run report for a prompt."""
    config = _config_from_flags(
        frame_count=frames,
        image_size=size,
        sigma=flags["sigma"],
        gamma=flags["gamma"],
        seed=flags["seed"],
        backend=flags["backend"],
        bridge_url=flags["bridge_url"],
        llm=flags["llm"],
    )
    provider = _llm_provider(flags["llm"], flags["replay"], flags["llm_url"])
    plan = _load_plan(plan_path)
    slice_prompts = [s.strip() for s in slices.split("||")] if slices else None
    table = planner.load_lexicon(lexicon) if lexicon else None

    def run_one(cfg: PipelineConfig, out: Path):
        result = pipeline.run_generation(
            cfg,
            prompt,
            plan=plan,
            slices=slice_prompts,
            camera=camera,
            out_dir=out,
            llm_provider=provider,
            heading_character=vqa_heading,
            lexicon=table,
            gif=gif,
        )
        acc = result.report.get("mean_accuracy")
        click.echo(
            f"seed {cfg.seed}: {len(result.frames)} frames -> {out}"
            + (f" (motion correctness {acc:.4f})" if acc is not None else "")
        )

    if seeds:
        first, _, last = seeds.partition("..")
        if not last:
            raise UsageError("--seeds expects a range like 0..4")
        seed_range = range(int(first), int(last) + 1)
        with ThreadPoolExecutor(max_workers=min(4, len(seed_range))) as pool:
            futures = [
                pool.submit(
                    run_one, replace(config, seed=s), Path(out_dir) / f"seed_{s:04d}"
                )
                for s in seed_range
            ]
            for f in futures:
                f.result()
    else:
        run_one(config, Path(out_dir))


@cli.command("edit")
@click.option("--base", "base_dir", required=True, help="directory of a previous generate run")
@click.option("--fg-prompt", default=None, help="regenerate the foreground under this prompt")
@click.option("--bg-prompt", default=None, help="regenerate the background under this prompt")
@click.option("--seed", default=None, type=int)
@click.option("--out", "out_dir", required=True)
@click.option("--gif/--no-gif", default=False, show_default=True)
def edit_cmd(base_dir, fg_prompt, bg_prompt, seed, out_dir, gif):
    """Semantically edit one component of a persisted run (Eq.-9-style fusion)."""
    if (fg_prompt is None) == (bg_prompt is None):
        raise UsageError("pass exactly one of --fg-prompt or --bg-prompt")
    result = pipeline.run_edit(
        base_dir, fg_prompt=fg_prompt, bg_prompt=bg_prompt, out_dir=out_dir, seed=seed, gif=gif
    )
    click.echo(f"edited run -> {result.out_dir}")


@cli.command("eval")
@click.option("--masks", "masks_dir", required=True, help="directory of mask_<char>_<frame>.png files")
@click.option("--plan", "plan_path", required=True, help="plan JSON the masks should follow")
@click.option("--sigma", default=32, show_default=True, help="expected step in mask pixels per frame")
@click.option("--out", default=None, help="write the report JSON here (stdout otherwise)")
def eval_cmd(masks_dir, plan_path, sigma, out):
    """Score motion correctness for an existing mask sequence."""
    plan = MotionPlan.from_json(Path(plan_path).read_text())
    masks_dir = Path(masks_dir)
    trajectories = []
    accuracies = {}
    for c in plan.characters:
        masks = []
        for k in range(plan.frame_count):
            path = masks_dir / pipeline.mask_filename(c.name, k)
            if not path.exists():
                raise UsageError(f"missing mask file {path}")
            masks.append(segmenter.load_mask_png(path, Resolution.IMAGE))
        traj = evaluator.track_trajectory(masks, c.name)
        trajectories.append(traj)
        try:
            accuracies[c.name] = evaluator.motion_correctness(traj, c.directions, sigma)
        except MotionWeaveError:
            accuracies[c.name] = None
    report = evaluator.emit_report(trajectories, accuracies, [], {"sigma": sigma})
    text = evaluator.report_to_json(report)
    if out:
        Path(out).write_text(text)
        click.echo(f"wrote {out}")
    else:
        click.echo(text)


@cli.command("skeleton")
@click.option("--prompt", default=None, help="infer the skeleton plan from this prompt via the LLM")
@click.option("--plan", "plan_path", default=None, help="skeleton plan text file (Frame k: node: direction lines)")
@click.option("--frames", default=8, show_default=True)
@click.option("--size", default=512, show_default=True)
@click.option("--sigma", default=16, show_default=True, help="node step in pixels per frame")
@click.option("--llm", default="replay", type=click.Choice(["replay", "http"]), show_default=True)
@click.option("--replay", default=None)
@click.option("--llm-url", default=None)
@click.option("--out", "out_dir", required=True)
def skeleton_cmd(prompt, plan_path, frames, size, sigma, llm, replay, llm_url, out_dir):
    """Render a stick-figure skeleton video from a node motion plan."""
    if (prompt is None) == (plan_path is None):
        raise UsageError("pass exactly one of --prompt or --plan")
    if plan_path is not None:
        text = Path(plan_path).read_text()
    else:
        provider = _llm_provider(llm, replay, llm_url)
        text = provider.complete(planner.build_prompt("skeleton", prompt, frame_count=frames))
    plan = planner.parse_skeleton_plan(text, frames)
    poses = skeleton.integrate_skeleton(plan, skeleton.default_pose(size), sigma, size)
    images = skeleton.render_skeleton_frames(poses, size)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    from PIL import Image

    for k, img in enumerate(images):
        Image.fromarray(img.pixels).save(out / f"skeleton_{k:03d}.png", format="PNG")
    skeleton.save_poses(poses, out / "poses.json")
    click.echo(f"wrote {len(images)} skeleton frames -> {out}")


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.UsageError as exc:
        click.echo(f"usage error: {exc.format_message()}", err=True)
        return 1
    except UsageError as exc:
        click.echo(f"usage error: {exc}", err=True)
        return 1
    except click.ClickException as exc:
        exc.show()
        return 1
    except click.exceptions.Abort:
        return 1
    except PipelineStageError as exc:
        if isinstance(exc.cause, BackendError):
            click.echo(f"backend error: {exc.cause}", err=True)
            return 2
        click.echo(f"pipeline error: {exc}", err=True)
        return 3
    except BackendError as exc:
        click.echo(f"backend error: {exc}", err=True)
        return 2
    except MotionWeaveError as exc:
        click.echo(f"pipeline error: {exc}", err=True)
        return 3


if __name__ == "__main__":
    sys.exit(main())
