"""Score-threshold data filtering with a pluggable judge.

The default judge is programmatic: it scores a candidate target against the
synthetic ground truth of its edit pair on a 1-10 scale, once per "turn" on a
turn-specific random subsample of voxels, and averages the turns.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

from .metrics import edit_region_error, motion_consistency, preservation_error
from .synthetic import EditPair, VideoClip

AXES = ("instruction_following", "visual_quality", "content_preservation", "motion_consistency")


class ValidationError(ValueError):
    pass


@dataclass(frozen=True)
class FilterThresholds:
    image: dict = field(default_factory=lambda: {
        "instruction_following": 9.0, "visual_quality": 9.0, "content_preservation": 9.0})
    video: dict = field(default_factory=lambda: {
        "instruction_following": 8.0, "visual_quality": 9.0, "content_preservation": 8.0,
        "motion_consistency": 8.0})
    turns: int = 3

    def __post_init__(self):
        for table in (self.image, self.video):
            for k, v in table.items():
                if not 1 <= v <= 10:
                    raise ValidationError(f"threshold {k}={v} outside [1, 10]")


@dataclass
class JudgeScores:
    instruction_following: float
    visual_quality: float
    content_preservation: float
    motion_consistency: float | None = None

    def as_dict(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in AXES if getattr(self, k) is not None}


def filter_sample(scores: JudgeScores, kind: str, thresholds: FilterThresholds | None = None) -> bool:
    """Keep iff every threshold that applies to ``kind`` ('image' or 'video') is met."""
    thresholds = thresholds or FilterThresholds()
    if kind in ("image", "image_edit"):
        table = thresholds.image
    elif kind in ("video", "video_edit"):
        table = thresholds.video
        if scores.motion_consistency is None:
            raise ValidationError("video records need a motion_consistency score")
    else:
        raise ValidationError(f"unknown record kind {kind!r}")
    return all(getattr(scores, k) >= v for k, v in table.items())


class Judge(Protocol):
    def __call__(self, candidate: VideoClip, pair: EditPair, turns: int) -> JudgeScores: ...


def _to_score(quality: float) -> float:
    return 1.0 + 9.0 * float(np.clip(quality, 0.0, 1.0))


def programmatic_judge(candidate: VideoClip, pair: EditPair, turns: int = 3, seed: int = 0,
                       keep_fraction: float = 0.9) -> JudgeScores:
    """Scores from synthetic ground truth, averaged over deterministic turns.

    instruction following: 1 - mean error inside the edit region vs the true target
    content preservation:  1 - mean change outside the edit region vs the source
    visual quality:        1 - 2 * mean distance to the flat {0, .5, 1} channel palette
    motion consistency:    Pearson r of frame differences vs the true target (video only)
    """
    cand = candidate.frames.astype(np.float64)
    is_video = cand.shape[0] > 1
    rows = []
    for turn in range(turns):
        rng = np.random.default_rng(np.random.SeedSequence([seed, turn]))
        keep = rng.random(cand.shape[:3]) < keep_fraction
        region = pair.edit_region & keep
        outside = ~pair.edit_region & keep
        sub = keep[..., None].repeat(cand.shape[-1], axis=-1)
        IF = _to_score(1.0 - edit_region_error(cand, pair.target.frames, region))
        # preservation over the kept voxels outside the region
        CP = _to_score(1.0 - preservation_error(cand, pair.source.frames, ~outside))
        palette_dist = np.abs(cand - np.round(cand * 2) / 2)[sub]
        VQ = _to_score(1.0 - 2.0 * float(palette_dist.mean()) if palette_dist.size else 1.0)
        MC = _to_score(motion_consistency(cand, pair.target.frames)) if is_video else None
        rows.append((IF, VQ, CP, MC))
    mean = lambda i: float(np.mean([r[i] for r in rows]))  # noqa: E731
    return JudgeScores(mean(0), mean(1), mean(2), mean(3) if is_video else None)


def judge_and_filter(pair: EditPair, candidate: VideoClip | None = None,
                     judge: Callable[..., JudgeScores] = programmatic_judge,
                     thresholds: FilterThresholds | None = None) -> tuple[JudgeScores, bool]:
    thresholds = thresholds or FilterThresholds()
    cand = candidate if candidate is not None else pair.target
    scores = judge(cand, pair, turns=thresholds.turns)
    kind = "video" if pair.source.T > 1 else "image"
    return scores, filter_sample(scores, kind, thresholds)
