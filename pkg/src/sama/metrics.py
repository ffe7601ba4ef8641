"""Programmatic editing metrics and the evaluation report.

Axis mapping used in report headers:

* instruction following -> ``edit_region_error`` (lower is better)
* content preservation  -> ``preservation_error`` (lower is better)
* motion consistency    -> ``motion_consistency`` (Pearson r of frame differences)
* pretext restoration   -> ``restoration_error`` (lower is better)
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .autograd import ShapeError

AXIS_MAPPING = {
    "instruction_following": "edit_region_error",
    "content_preservation": "preservation_error",
    "motion_consistency": "motion_consistency",
    "pretext_restoration": "restoration_error",
}


def _frames(x) -> np.ndarray:
    return np.asarray(getattr(x, "frames", x), dtype=np.float64)


def _check(a: np.ndarray, b: np.ndarray, name: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{name}: shapes {a.shape} and {b.shape} differ")


def _voxel_mask(region, shape) -> np.ndarray:
    r = np.asarray(region, dtype=bool)
    if r.shape == shape:
        return r
    if r.shape == shape[:-1]:
        return np.broadcast_to(r[..., None], shape)
    raise ShapeError(f"region {r.shape} does not match clip {shape}")


def edit_region_error(output, target, region) -> float:
    """Mean |output - target| over voxels inside ``region`` (0 for an empty region)."""
    a, b = _frames(output), _frames(target)
    _check(a, b, "edit_region_error")
    m = _voxel_mask(region, a.shape)
    n = int(m.sum())
    return float(np.abs(a - b)[m].sum() / n) if n else 0.0


def preservation_error(output, source, region) -> float:
    """Mean |output - source| over voxels outside ``region`` (0 when nothing is outside)."""
    a, b = _frames(output), _frames(source)
    _check(a, b, "preservation_error")
    m = ~_voxel_mask(region, a.shape)
    n = int(m.sum())
    return float(np.abs(a - b)[m].sum() / n) if n else 0.0


def motion_consistency(output, source) -> float:
    a, b = _frames(output), _frames(source)
    _check(a, b, "motion_consistency")
    if a.shape[0] < 2:
        raise ShapeError("motion_consistency needs at least two frames")
    da = np.diff(a, axis=0).ravel()
    db = np.diff(b, axis=0).ravel()
    sa, sb = da.std(), db.std()
    if sa == 0 or sb == 0:
        both_static = not da.any() and not db.any()
        return 1.0 if both_static else 0.0
    r = np.mean((da - da.mean()) * (db - db.mean())) / (sa * sb)
    return float(np.clip(r, -1.0, 1.0))


def restoration_error(restored, original) -> float:
    a, b = _frames(restored), _frames(original)
    _check(a, b, "restoration_error")
    return float(np.abs(a - b).mean())


@dataclass
class SampleMetrics:
    sample_id: str
    edit_region_error: float | None = None
    preservation_error: float | None = None
    motion_consistency: float | None = None
    restoration_error: float | None = None


@dataclass
class EvalReport:
    samples: list[SampleMetrics] = field(default_factory=list)
    header: dict = field(default_factory=lambda: {"axis_mapping": AXIS_MAPPING})

    def means(self) -> dict[str, float]:
        out = {}
        for key in ("edit_region_error", "preservation_error", "motion_consistency", "restoration_error"):
            vals = [getattr(s, key) for s in self.samples if getattr(s, key) is not None]
            if vals:
                out[key] = float(np.mean(vals))
        return out

    def to_json(self) -> dict:
        return {"header": self.header, "means": self.means(),
                "samples": [asdict(s) for s in self.samples]}

    def write(self, json_path, csv_path) -> None:
        with open(json_path, "w") as f:
            json.dump(self.to_json(), f, indent=2, sort_keys=True)
        cols = list(asdict(SampleMetrics("")).keys())
        with open(csv_path, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=cols)
            w.writeheader()
            for s in self.samples:
                w.writerow({k: ("" if v is None else v) for k, v in asdict(s).items()})
