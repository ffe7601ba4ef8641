"""Procedural moving-shape videos, edit pairs, and JSON-lines manifests."""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .autograd import ContractError

COLORS: dict[str, tuple[float, float, float]] = {
    "red": (1.0, 0.0, 0.0),
    "green": (0.0, 1.0, 0.0),
    "blue": (0.0, 0.0, 1.0),
    "yellow": (1.0, 1.0, 0.0),
    "cyan": (0.0, 1.0, 1.0),
    "magenta": (1.0, 0.0, 1.0),
    "white": (1.0, 1.0, 1.0),
    "orange": (1.0, 0.5, 0.0),
}
SHAPE_KINDS = ("square", "circle", "triangle")
EDIT_KINDS = ("recolor", "remove", "add", "style")
RECORD_KINDS = ("image_edit", "video_edit", "t2v")


def color_name(rgb) -> str:
    for name, val in COLORS.items():
        if np.allclose(val, rgb):
            return name
    raise ContractError(f"color {tuple(rgb)} is not in the named palette")


@dataclass
class Shape:
    kind: str
    center: tuple[float, float]  # (x, y) in pixels; x is the column
    velocity: tuple[float, float]
    size: float
    color: tuple[float, float, float]

    def __post_init__(self):
        if self.kind not in SHAPE_KINDS:
            raise ContractError(f"unknown shape kind {self.kind!r}")
        if self.size < 2:
            raise ContractError(f"shape size must be >= 2 px, got {self.size}")


@dataclass
class SceneSpec:
    height: int = 32
    width: int = 32
    background: tuple[float, float, float] = (0.0, 0.0, 0.0)
    shapes: list[Shape] = field(default_factory=list)


@dataclass
class VideoClip:
    frames: np.ndarray  # (T, H, W, C) float32 in [0, 1]
    fps: float = 8.0

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 4 or self.frames.shape[0] < 1:
            raise ContractError(f"clip frames must be T x H x W x C with T >= 1, got {self.frames.shape}")

    @property
    def shape(self):
        return self.frames.shape

    @property
    def T(self) -> int:
        return self.frames.shape[0]


@dataclass
class EditPair:
    source: VideoClip
    target: VideoClip
    instruction: str
    edit_kind: str
    edit_region: np.ndarray  # (T, H, W) bool


def footprint(shape: Shape, cx: float, cy: float, height: int, width: int) -> np.ndarray:
    """Binary mask of ``shape`` centered at ``(cx, cy)``; pixel centers at +0.5."""
    ys = np.arange(height, dtype=np.float64)[:, None] + 0.5
    xs = np.arange(width, dtype=np.float64)[None, :] + 0.5
    half = shape.size / 2.0
    dx, dy = xs - cx, ys - cy
    if shape.kind == "square":
        return (np.abs(dx) <= half) & (np.abs(dy) <= half)
    if shape.kind == "circle":
        return dx * dx + dy * dy <= half * half
    # upward isosceles triangle inscribed in the bounding square
    frac = (dy + half) / (2 * half)
    return (frac >= 0) & (frac <= 1) & (np.abs(dx) <= half * frac)


def _frame_masks(shape: Shape, k: int, height: int, width: int) -> np.ndarray:
    cx = shape.center[0] + k * shape.velocity[0]
    cy = shape.center[1] + k * shape.velocity[1]
    return footprint(shape, cx, cy, height, width)


def render_scene(spec: SceneSpec, T: int) -> VideoClip:
    """Frame ``k`` draws each shape at ``center + k * velocity`` in list order."""
    if T < 1:
        raise ContractError(f"frame count must be >= 1, got {T}")
    frames = np.empty((T, spec.height, spec.width, 3), dtype=np.float32)
    frames[:] = np.asarray(spec.background, dtype=np.float32)
    for k in range(T):
        for s in spec.shapes:
            frames[k][_frame_masks(s, k, spec.height, spec.width)] = s.color
    return VideoClip(frames)


def shape_region(spec: SceneSpec, index: int, T: int) -> np.ndarray:
    s = spec.shapes[index]
    return np.stack([_frame_masks(s, k, spec.height, spec.width) for k in range(T)])


# ------------------------------------------------------------------ scenes


def random_shape(rng: np.random.Generator, height: int, width: int,
                 exclude_colors: tuple[str, ...] = ()) -> Shape:
    names = [c for c in COLORS if c not in exclude_colors]
    size = float(rng.integers(6, max(7, min(height, width) // 3) + 1))
    vx, vy = (float(v) for v in rng.integers(-1, 2, size=2))
    return Shape(
        kind=str(rng.choice(SHAPE_KINDS)),
        center=(float(rng.uniform(size / 2, width - size / 2)),
                float(rng.uniform(size / 2, height - size / 2))),
        velocity=(vx, vy),
        size=size,
        color=COLORS[str(rng.choice(names))],
    )


def random_scene(rng: np.random.Generator, height: int = 32, width: int = 32,
                 max_shapes: int = 2) -> SceneSpec:
    n = int(rng.integers(1, max_shapes + 1))
    shapes: list[Shape] = []
    for _ in range(n):
        used = tuple(color_name(s.color) for s in shapes)
        shapes.append(random_shape(rng, height, width, exclude_colors=used))
    return SceneSpec(height=height, width=width, shapes=shapes)


def direction_word(velocity) -> str | None:
    vx, vy = velocity
    if vx == 0 and vy == 0:
        return None
    if abs(vx) >= abs(vy):
        return "right" if vx > 0 else "left"
    return "down" if vy > 0 else "up"


def caption(spec: SceneSpec) -> str:
    if not spec.shapes:
        return "an empty scene"
    parts = []
    for s in spec.shapes:
        d = direction_word(s.velocity)
        motion = f"moves {d}" if d else "stays still"
        parts.append(f"a {color_name(s.color)} {s.kind} {motion}")
    return " and ".join(parts)


# ------------------------------------------------------------------ edits


def make_edit_pair(spec: SceneSpec, edit_kind: str, rng: np.random.Generator,
                   T: int = 8) -> EditPair:
    """Render ``spec`` and an edited copy; outside ``edit_region`` the two agree exactly."""
    if edit_kind not in EDIT_KINDS:
        raise ContractError(f"unknown edit kind {edit_kind!r}")
    if edit_kind in ("recolor", "remove") and not spec.shapes:
        raise ContractError(f"{edit_kind} requires a scene with at least one shape")
    medium = "image" if T == 1 else "video"
    source = render_scene(spec, T)
    edited = copy.deepcopy(spec)
    H, W = spec.height, spec.width
    if edit_kind == "style":
        target = VideoClip(1.0 - source.frames)
        region = np.ones((T, H, W), dtype=bool)
        return EditPair(source, target, f"invert the colors of the {medium}", edit_kind, region)
    if edit_kind == "add":
        used = tuple(color_name(s.color) for s in spec.shapes)
        new = random_shape(rng, H, W, exclude_colors=used)
        edited.shapes.append(new)
        region = shape_region(edited, len(edited.shapes) - 1, T)
        text = f"add a {color_name(new.color)} {new.kind}"
    else:
        i = int(rng.integers(len(spec.shapes)))
        old = spec.shapes[i]
        region = shape_region(spec, i, T)
        if edit_kind == "recolor":
            taken = {color_name(s.color) for s in spec.shapes}
            choices = [c for c in COLORS if c not in taken]
            new_color = str(rng.choice(choices))
            edited.shapes[i].color = COLORS[new_color]
            text = f"change the {color_name(old.color)} {old.kind} to {new_color}"
        else:
            del edited.shapes[i]
            text = f"remove the {color_name(old.color)} {old.kind}"
    target = render_scene(edited, T)
    return EditPair(source, target, text, edit_kind, region)


def make_image_edit_pair(spec: SceneSpec, edit_kind: str, rng: np.random.Generator) -> EditPair:
    return make_edit_pair(spec, edit_kind, rng, T=1)


def sample_edit_kind(rng: np.random.Generator, weights: dict[str, float] | None = None) -> str:
    weights = weights or {k: 1.0 for k in EDIT_KINDS}
    kinds = list(weights)
    p = np.asarray([weights[k] for k in kinds], dtype=np.float64)
    return kinds[int(rng.choice(len(kinds), p=p / p.sum()))]


def sample_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream per sample so parallel and serial generation agree."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


# ------------------------------------------------------------------ manifest


class ManifestError(ValueError):
    pass


@dataclass
class ManifestRecord:
    id: str
    kind: str
    files: dict[str, str]
    instruction: str
    split: str = "train"
    scores: dict[str, float] | None = None
    keep: bool | None = None
    edit_kind: str | None = None

    def to_json(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}


def validate_records(records: list[ManifestRecord]) -> None:
    seen: set[str] = set()
    for r in records:
        if r.id in seen:
            raise ManifestError(f"duplicate sample id {r.id!r}")
        if r.kind not in RECORD_KINDS:
            raise ManifestError(f"record {r.id!r}: unknown kind {r.kind!r}")
        seen.add(r.id)


def write_manifest(path, records: list[ManifestRecord]) -> None:
    validate_records(records)
    with open(path, "w") as f:
        for r in records:
            f.write(json.dumps(r.to_json(), sort_keys=True) + "\n")


def load_manifest(path, check_files: bool = True) -> list[ManifestRecord]:
    """Parse a JSON-lines manifest; file paths are relative to its directory."""
    path = Path(path)
    records = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                records.append(ManifestRecord(**obj))
            except (json.JSONDecodeError, TypeError) as e:
                raise ManifestError(f"{path}:{lineno}: malformed record ({e})") from None
    validate_records(records)
    if check_files:
        for r in records:
            for p in r.files.values():
                full = path.parent / p
                if not full.exists():
                    raise ManifestError(f"record {r.id!r}: missing file {full}")
    return records
