"""Toy-scale diffusion machinery over a pluggable denoiser/codec backend.

Forward noising uses the closed-form marginal (with a stepwise variant kept for
cross-validation), DDIM gives the deterministic descents, and DDPM supplies the
stochastic settle between the warp point t1 and the final descent start t2.
Randomness comes from a counter-based generator keyed by (seed, frame,
timestep), so runs are reproducible regardless of evaluation order.
"""

from __future__ import annotations

import hashlib
from typing import Protocol, Sequence

import numpy as np

from .core import DiffusionSchedule, FrameImage, LatentGrid
from .errors import FrameRangeError, UsageError


class NoiseSource:
    """Deterministic Gaussian noise, one independent stream per (frame, timestep).

    Streams are derived with a counter-based Philox generator keyed by a hash of
    (seed, frame, timestep, tag): identical seeds give identical grids, distinct
    keys give independent ones, and any stream can be re-drawn at any time.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)

    def _key(self, frame: int, timestep: int, tag: str) -> np.ndarray:
        digest = hashlib.blake2b(
            f"{self.seed}|{frame}|{timestep}|{tag}".encode(), digest_size=16
        ).digest()
        return np.frombuffer(digest, dtype=np.uint64)

    def normal(
        self, shape: tuple[int, ...], frame: int, timestep: int, tag: str = "eps"
    ) -> np.ndarray:
        bits = np.random.Philox(key=self._key(frame, timestep, tag))
        return np.random.Generator(bits).standard_normal(shape, dtype=np.float32)


class DenoiserBackend(Protocol):
    """Noise predictor plus latent/pixel codec.

    Backends may optionally host one cross-frame attention layer; samplers feed
    it per-timestep frame snapshots through begin_timestep() when present.
    """

    def denoise(self, x_t: LatentGrid, t: int, condition: str, frame: int = 0) -> np.ndarray: ...

    def encode(self, image: FrameImage) -> LatentGrid: ...

    def decode(self, latent: LatentGrid) -> FrameImage: ...


def _check_t(t: int, sched: DiffusionSchedule):
    if not (0 <= t <= sched.timesteps):
        raise FrameRangeError(f"timestep {t} outside 0..{sched.timesteps}")


def forward_diffuse(
    x0: LatentGrid,
    t: int,
    sched: DiffusionSchedule,
    noise: "NoiseSource | np.ndarray",
    frame: int = 0,
) -> LatentGrid:
    """Closed-form forward marginal: sqrt(abar_t) x0 + sqrt(1 - abar_t) eps."""
    _check_t(t, sched)
    if t == 0:
        return x0.copy()
    if isinstance(noise, NoiseSource):
        eps = noise.normal(x0.shape, frame=frame, timestep=t)
    else:
        eps = np.asarray(noise, dtype=np.float32)
    abar = sched.alpha_bar(t)
    return LatentGrid(np.sqrt(abar) * x0.data + np.sqrt(1.0 - abar) * eps)


def forward_diffuse_stepwise(
    x0: LatentGrid,
    t: int,
    sched: DiffusionSchedule,
    noise: NoiseSource,
    frame: int = 0,
) -> LatentGrid:
    """Apply the single-step forward kernel t times; cross-validates the marginal."""
    _check_t(t, sched)
    x = x0.data
    for s in range(1, t + 1):
        beta = sched.beta(s)
        eps = noise.normal(x0.shape, frame=frame, timestep=s)
        x = np.sqrt(1.0 - beta) * x + np.sqrt(beta) * eps
    return LatentGrid(x)


def _ddim_step(
    x: np.ndarray,
    eps: np.ndarray,
    t: int,
    t_next: int,
    sched: DiffusionSchedule,
) -> np.ndarray:
    abar_t = sched.alpha_bar(t)
    abar_next = sched.alpha_bar(t_next)
    x0_hat = (x - np.sqrt(1.0 - abar_t) * eps) / np.sqrt(abar_t)
    return (np.sqrt(abar_next) * x0_hat + np.sqrt(1.0 - abar_next) * eps).astype(np.float32)


def ddim_denoise(
    x: LatentGrid,
    t_from: int,
    t_to: int,
    backend: DenoiserBackend,
    condition: str,
    sched: DiffusionSchedule,
    frame: int = 0,
    record_at: int | None = None,
) -> LatentGrid | tuple[LatentGrid, LatentGrid]:
    """Deterministic DDIM descent from t_from to t_to, one unit timestep at a time.

    With record_at set, also returns the intermediate state at that timestep
    (used to capture the warp point t1 while continuing to 0).
    """
    if t_from < t_to:
        raise FrameRangeError(f"t_from {t_from} must be >= t_to {t_to}")
    _check_t(t_from, sched)
    recorded = x if record_at == t_from else None
    data = x.data
    for t in range(t_from, t_to, -1):
        eps = np.asarray(backend.denoise(LatentGrid(data), t, condition, frame=frame))
        data = _ddim_step(data, eps, t, t - 1, sched)
        if record_at == t - 1:
            recorded = LatentGrid(data)
    out = LatentGrid(data)
    if record_at is None:
        return out
    if recorded is None:
        raise FrameRangeError(f"record_at {record_at} not on the path {t_from}..{t_to}")
    return out, recorded


def _begin_timestep(backend, frames: Sequence[LatentGrid], t: int):
    hook = getattr(backend, "begin_timestep", None)
    if hook is not None:
        hook({k: f for k, f in enumerate(frames)}, t)


def _conditions(condition: "str | Sequence[str]", n: int) -> list[str]:
    if isinstance(condition, str):
        return [condition] * n
    if len(condition) != n:
        raise UsageError(f"need one condition per frame: {len(condition)} for {n} frames")
    return list(condition)


def ddim_denoise_video(
    frames: Sequence[LatentGrid],
    t_from: int,
    t_to: int,
    backend: DenoiserBackend,
    condition: "str | Sequence[str]",
    sched: DiffusionSchedule,
) -> list[LatentGrid]:
    """DDIM descent of all frames together so cross-frame attention sees a
    consistent per-timestep snapshot."""
    conditions = _conditions(condition, len(frames))
    data = [f.data for f in frames]
    for t in range(t_from, t_to, -1):
        _begin_timestep(backend, [LatentGrid(d) for d in data], t)
        eps = [
            np.asarray(backend.denoise(LatentGrid(d), t, c, frame=k))
            for k, (d, c) in enumerate(zip(data, conditions))
        ]
        data = [_ddim_step(d, e, t, t - 1, sched) for d, e in zip(data, eps)]
    return [LatentGrid(d) for d in data]


def ddpm_settle(
    frames: Sequence[LatentGrid],
    t_from: int,
    t_to: int,
    backend: DenoiserBackend,
    condition: "str | Sequence[str]",
    noise: NoiseSource,
    sched: DiffusionSchedule,
) -> list[LatentGrid]:
    """Stochastic ancestral DDPM steps from t_from down to t_to for every frame.

    This is the bridge between the warped features at t1 and the final DDIM
    descent from t2: fresh posterior noise fuses the pasted regions with their
    surroundings. Reproducible given the noise source's seed.
    """
    if t_from < t_to:
        raise FrameRangeError(f"t_from {t_from} must be >= t_to {t_to}")
    _check_t(t_from, sched)
    conditions = _conditions(condition, len(frames))
    data = [f.data for f in frames]
    for t in range(t_from, t_to, -1):
        _begin_timestep(backend, [LatentGrid(d) for d in data], t)
        beta = sched.beta(t)
        abar_t = sched.alpha_bar(t)
        abar_prev = sched.alpha_bar(t - 1)
        sigma = np.sqrt(beta * (1.0 - abar_prev) / (1.0 - abar_t))
        new_data = []
        for k, (d, c) in enumerate(zip(data, conditions)):
            eps = np.asarray(backend.denoise(LatentGrid(d), t, c, frame=k))
            mean = (d - beta / np.sqrt(1.0 - abar_t) * eps) / np.sqrt(1.0 - beta)
            if t - 1 > 0:
                z = noise.normal(d.shape, frame=k, timestep=t, tag="ddpm")
                mean = mean + sigma * z
            new_data.append(mean.astype(np.float32))
        data = new_data
    return [LatentGrid(d) for d in data]


def replicate_initial_latents(x0_at_t1: LatentGrid, frame_count: int) -> list[LatentGrid]:
    """F independent copies of the first frame's latent at the warp point."""
    if frame_count < 2:
        raise UsageError(f"frame_count must be >= 2, got {frame_count}")
    return [x0_at_t1.copy() for _ in range(frame_count)]


def sample_initial_noise(
    seed: int, shape: tuple[int, int, int], sched: DiffusionSchedule, frame: int = 0
) -> LatentGrid:
    """z_T ~ N(0, 1) for the given seed, drawn from the portable noise source."""
    return LatentGrid(
        NoiseSource(seed).normal(shape, frame=frame, timestep=sched.timesteps, tag="init")
    )


def generate_first_frame(
    prompt: str,
    seed: int,
    backend: DenoiserBackend,
    sched: DiffusionSchedule,
) -> tuple[FrameImage, LatentGrid]:
    """Sample z_T from the seed, run the full DDIM descent and decode.

    Backends that need per-prompt setup (the toy scene compiler) expose
    prepare_condition(); it runs before sampling so unknown prompts fail fast.
    """
    prepare = getattr(backend, "prepare_condition", None)
    if prepare is not None:
        prepare(prompt)
    z = sample_initial_noise(seed, backend.latent_shape, sched)
    x0 = ddim_denoise(z, sched.timesteps, 0, backend, prompt, sched, frame=0)
    return backend.decode(x0), x0
