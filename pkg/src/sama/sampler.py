"""Flow-ODE sampling: integrate dx/dt = v(x, t) from noise at t=0 to data at t=1."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autograd as ag
from . import grammar
from .dit import DiT, assemble_sequence, readout_velocity
from .pretext import PretextTask, task_prompt
from .synthetic import VideoClip
from .tokenization import LatentTokens, PatchSpec, patchify, unpatchify


class IntegrationError(RuntimeError):
    pass


@dataclass
class SamplerConfig:
    steps: int = 32
    guidance: float = 0.0  # reserved; guidance is not implemented
    seed: int = 0
    use_ema: bool = True
    semantic_mode: str = "co_integrate"  # or "omit"
    method: str = "euler"  # or "midpoint"

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.semantic_mode not in ("co_integrate", "omit"):
            raise ValueError(f"unknown semantic mode {self.semantic_mode!r}")
        if self.method not in ("euler", "midpoint"):
            raise ValueError(f"unknown integration method {self.method!r}")


Field = Callable[[np.ndarray, float], np.ndarray]


def euler_integrate(field: Field, x_start, steps: int, method: str = "euler") -> np.ndarray:
    """Fixed-step integration over the uniform grid t = 0, 1/steps, ..., 1."""
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    x = np.array(x_start, dtype=np.float32, copy=True)
    dt = 1.0 / steps
    for k in range(steps):
        t = k * dt
        if method == "midpoint":
            x_mid = x + np.float32(dt / 2) * field(x, t)
            v = field(x_mid, t + dt / 2)
        else:
            v = field(x, t)
        x = (x + np.float32(dt) * v).astype(np.float32)
        if not np.all(np.isfinite(x)):
            raise IntegrationError(f"non-finite state at step {k}")
    return x


def velocity_field(model: DiT, z_s: LatentTokens, n_semantic: int, instruction_ids) -> Field:
    """The model's velocity over the joint ``[semantic ; target]`` state with a
    clean source segment re-assembled at every evaluation."""

    def field(x: np.ndarray, t: float) -> np.ndarray:
        seq = assemble_sequence(z_s, x[:n_semantic] if n_semantic else None, x[n_semantic:])
        with ag.no_grad():
            out, _ = model.forward(seq.tokens, seq.type_ids, seq.positions, min(max(t, 0.0), 1.0),
                                   instruction_ids)
            v_sem, v_tgt = readout_velocity(out, seq.layout)
        return np.concatenate([v_sem.data, v_tgt.data]) if n_semantic else v_tgt.data

    return field


def sample_latents(model: DiT, source: VideoClip, text: str, cfg: SamplerConfig, patch: PatchSpec,
                   n_semantic: int) -> tuple[np.ndarray, LatentTokens]:
    ids = grammar.encode(text)
    z_s = patchify(source, patch)
    k = n_semantic if cfg.semantic_mode == "co_integrate" else 0
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 7]))
    x0 = rng.standard_normal((k + z_s.length, z_s.tokens.shape[1])).astype(np.float32)
    x1 = euler_integrate(velocity_field(model, z_s, k, ids), x0, cfg.steps, cfg.method)
    return x1, z_s


def edit_video(model: DiT, source: VideoClip, instruction: str, cfg: SamplerConfig,
               patch: PatchSpec | None = None, n_semantic: int = 0) -> VideoClip:
    """Edited clip for ``instruction``; the semantic segment is integrated then dropped."""
    patch = patch or PatchSpec()
    x1, z_s = sample_latents(model, source, instruction, cfg, patch, n_semantic)
    k = x1.shape[0] - z_s.length
    out = unpatchify(LatentTokens(x1[k:], z_s.grid, z_s.frames), patch)
    return VideoClip(np.clip(out.frames, 0.0, 1.0), source.fps)


def restore_pretext(model: DiT, perturbed: VideoClip, task: PretextTask, caption: str,
                    cfg: SamplerConfig, patch: PatchSpec | None = None, n_semantic: int = 0) -> VideoClip:
    return edit_video(model, perturbed, task_prompt(task, caption), cfg, patch, n_semantic)
