"""Motion-centric source perturbations, task prompts, and the task sampler.

Only the source stream is perturbed; the target of every pretext sample is
the unmodified clip.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import vtensor
from .autograd import ContractError
from .grammar import TASK_TOKENS
from .synthetic import VideoClip

MASK_FILL = 0.5


class PretextTask(str, enum.Enum):
    NONE = "none"
    CUBE_INPAINT = "cube_inpaint"
    SPEED_PERTURB = "speed_perturb"
    TUBE_SHUFFLE = "tube_shuffle"


# no-pretext : cube inpainting : speed perturbation : tube shuffle = 1 : 2 : 3 : 4
TASK_WEIGHTS = {
    PretextTask.NONE: 1,
    PretextTask.CUBE_INPAINT: 2,
    PretextTask.SPEED_PERTURB: 3,
    PretextTask.TUBE_SHUFFLE: 4,
}


def task_probabilities() -> dict[PretextTask, float]:
    total = sum(TASK_WEIGHTS.values())
    return {k: v / total for k, v in TASK_WEIGHTS.items()}


@dataclass
class PretextSample:
    perturbed_source: VideoClip
    target: VideoClip
    prompt: str
    task: PretextTask
    meta: dict = field(default_factory=dict)


def masked_frame_count(T: int, ratio: float) -> int:
    # round half up, clamped to [1, T - 1]
    n = math.floor(ratio * T + 0.5)
    return min(max(n, 1), T - 1)


def cube_inpaint(clip: VideoClip, ratio: float = 0.3, rng: np.random.Generator | None = None):
    """Gray out a contiguous block of frames over the full spatial extent."""
    if not 0 < ratio < 1:
        raise ContractError(f"mask ratio must lie in (0, 1), got {ratio}")
    T = clip.T
    if T < 2:
        raise ContractError(f"cube inpainting needs T >= 2, got {T}")
    rng = rng or np.random.default_rng()
    length = masked_frame_count(T, ratio)
    start = int(rng.integers(0, T - length + 1))
    out = clip.frames.copy()
    out[start:start + length] = MASK_FILL
    return VideoClip(out, clip.fps), {"start": start, "length": length}


def speed_perturb(raw: VideoClip, factor: int = 2):
    """Return (fast source, normal-speed target, meta) from a raw clip of length 2T.

    The source keeps every ``factor``-th raw frame; the target is the first T
    raw frames played at normal speed.
    """
    if factor != 2:
        raise ContractError(f"only 2x acceleration is supported, got {factor}")
    n = raw.T
    if n % 2 or n < 2 * factor:
        raise ContractError(f"raw clip length must be even and >= {2 * factor}, got {n}")
    T = n // factor
    source = VideoClip(raw.frames[::factor][:T].copy(), raw.fps)
    target = VideoClip(raw.frames[:T].copy(), raw.fps)
    return source, target, {"factor": factor}


def _tube_slices(T: int, H: int, W: int):
    ht, hh, hw = T // 2, H // 2, W // 2
    out = []
    for a in range(2):
        for b in range(2):
            for c in range(2):
                out.append((slice(a * ht, (a + 1) * ht), slice(b * hh, (b + 1) * hh),
                            slice(c * hw, (c + 1) * hw)))
    return out


def apply_tube_permutation(clip: VideoClip, perm) -> VideoClip:
    """Output tube ``i`` holds input tube ``perm[i]``."""
    T, H, W, _ = clip.shape
    if T % 2 or H % 2 or W % 2:
        raise ContractError(f"tube shuffle needs even T, H, W; got {(T, H, W)}")
    perm = [int(p) for p in perm]
    if sorted(perm) != list(range(8)):
        raise ContractError(f"not a permutation of 0..7: {perm}")
    sl = _tube_slices(T, H, W)
    out = np.empty_like(clip.frames)
    for i, j in enumerate(perm):
        out[sl[i]] = clip.frames[sl[j]]
    return VideoClip(out, clip.fps)


def invert_permutation(perm) -> list[int]:
    inv = [0] * len(perm)
    for i, j in enumerate(perm):
        inv[int(j)] = i
    return inv


def tube_shuffle(clip: VideoClip, rng: np.random.Generator | None = None):
    rng = rng or np.random.default_rng()
    T, H, W, _ = clip.shape
    if T % 2 or H % 2 or W % 2:
        raise ContractError(f"tube shuffle needs even T, H, W; got {(T, H, W)}")
    perm = [int(p) for p in rng.permutation(8)]
    return apply_tube_permutation(clip, perm), perm


def task_prompt(task: PretextTask, caption: str) -> str:
    task = PretextTask(task)
    if task is PretextTask.NONE:
        return caption
    token = TASK_TOKENS[task.value]
    return f"{token} {caption}" if caption else token


def sample_task(rng: np.random.Generator) -> PretextTask:
    probs = task_probabilities()
    tasks = list(probs)
    return tasks[int(rng.choice(len(tasks), p=list(probs.values())))]


def make_pretext_sample(raw: VideoClip, caption: str, task: PretextTask,
                        rng: np.random.Generator, ratio: float = 0.3) -> PretextSample:
    """Build a pretext sample from a raw clip of length 2T (T frames are used
    except by speed perturbation, which consumes all of them)."""
    task = PretextTask(task)
    T = raw.T // 2
    clip = VideoClip(raw.frames[:T].copy(), raw.fps)
    if task is PretextTask.NONE:
        src, meta = VideoClip(clip.frames.copy(), clip.fps), {}
        tgt = clip
    elif task is PretextTask.CUBE_INPAINT:
        src, meta = cube_inpaint(clip, ratio, rng)
        tgt = clip
    elif task is PretextTask.SPEED_PERTURB:
        src, tgt, meta = speed_perturb(raw)
    else:
        src, perm = tube_shuffle(clip, rng)
        meta = {"permutation": perm}
        tgt = clip
    return PretextSample(src, tgt, task_prompt(task, caption), task, meta)


def save_pretext_sample(sample: PretextSample, directory, stem: str) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    vtensor.save(d / f"{stem}_source.vt", sample.perturbed_source.frames)
    vtensor.save(d / f"{stem}_target.vt", sample.target.frames)
    side = {"task": sample.task.value, "prompt": sample.prompt, "meta": sample.meta}
    (d / f"{stem}.json").write_text(json.dumps(side, sort_keys=True))


def load_pretext_sample(directory, stem: str) -> PretextSample:
    d = Path(directory)
    side = json.loads((d / f"{stem}.json").read_text())
    return PretextSample(
        VideoClip(vtensor.load(d / f"{stem}_source.vt")),
        VideoClip(vtensor.load(d / f"{stem}_target.vt")),
        side["prompt"],
        PretextTask(side["task"]),
        side["meta"],
    )
