"""Dependency-free artifacts: SVG loss curves and ASCII PPM frame dumps."""

from __future__ import annotations

import csv
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2")


def smooth(values, window: int = 20) -> np.ndarray:
    """Trailing window mean; the first entries average over what is available."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("cannot smooth an empty series")
    c = np.cumsum(np.insert(v, 0, 0.0))
    idx = np.arange(1, v.size + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


def loss_svg(series: dict[str, tuple[np.ndarray, np.ndarray]], title: str = "training loss",
             width: int = 640, height: int = 400, window: int = 20) -> str:
    if not series:
        raise ValueError("no series to plot")
    pad = 50
    ys_all = [smooth(y, window) for _, y in series.values()]
    xs_all = [np.asarray(x, dtype=np.float64) for x, _ in series.values()]
    xmin = min(x.min() for x in xs_all)
    xmax = max(x.max() for x in xs_all)
    ymin = min(y.min() for y in ys_all)
    ymax = max(y.max() for y in ys_all)
    xspan = (xmax - xmin) or 1.0
    yspan = (ymax - ymin) or 1.0

    def px(x, y):
        return (pad + (x - xmin) / xspan * (width - 2 * pad),
                height - pad - (y - ymin) / yspan * (height - 2 * pad))

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
        f'<text x="{pad}" y="{height - pad + 15}" font-size="10">{xmin:g}</text>',
        f'<text x="{width - pad}" y="{height - pad + 15}" font-size="10" text-anchor="end">{xmax:g}</text>',
        f'<text x="{pad - 5}" y="{height - pad}" font-size="10" text-anchor="end">{ymin:.3g}</text>',
        f'<text x="{pad - 5}" y="{pad + 5}" font-size="10" text-anchor="end">{ymax:.3g}</text>',
    ]
    for i, ((name, _), x, y) in enumerate(zip(series.items(), xs_all, ys_all)):
        color = PALETTE[i % len(PALETTE)]
        pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in (px(u, v) for u, v in zip(x, y)))
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        ly = pad + 15 * i
        parts.append(f'<line x1="{width - pad - 120}" y1="{ly}" x2="{width - pad - 100}" y2="{ly}" '
                     f'stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{width - pad - 95}" y="{ly + 4}" font-size="11">{escape(name)}</text>')
    parts.append("</svg>")
    return "\n".join(parts)


def summary_rows(series: dict[str, tuple[np.ndarray, np.ndarray]], window: int = 20) -> list[dict]:
    rows = []
    for name, (x, y) in series.items():
        y = np.asarray(y, dtype=np.float64)
        rows.append({"run": name, "steps": int(len(y)), "first": float(y[0]), "final": float(y[-1]),
                     "min": float(y.min()), "final_smoothed": float(smooth(y, window)[-1])})
    return rows


def write_summary(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


def write_ppm(path, frame: np.ndarray) -> None:
    """One H x W x 3 frame in [0, 1] as plain (P3) PPM, 8-bit."""
    img = np.clip(np.rint(np.asarray(frame, dtype=np.float64) * 255), 0, 255).astype(int)
    h, w, _ = img.shape
    lines = ["P3", f"{w} {h}", "255"]
    lines += [" ".join(str(v) for v in row.reshape(-1)) for row in img]
    Path(path).write_text("\n".join(lines) + "\n")


def read_ppm(path) -> np.ndarray:
    """Parse a P3 file (comments allowed) into an H x W x 3 uint8-range int array."""
    toks = []
    for line in Path(path).read_text().splitlines():
        toks += line.split("#", 1)[0].split()
    if not toks or toks[0] != "P3":
        raise ValueError(f"{path}: not a P3 PPM file")
    w, h, maxval = int(toks[1]), int(toks[2]), int(toks[3])
    vals = np.array([int(v) for v in toks[4:]])
    if vals.size != w * h * 3 or vals.min(initial=0) < 0 or vals.max(initial=0) > maxval:
        raise ValueError(f"{path}: pixel data does not match header {w}x{h} max {maxval}")
    return vals.reshape(h, w, 3)


def dump_frames(directory, clip_frames: np.ndarray, stem: str = "frame") -> list[Path]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = []
    for k, frame in enumerate(clip_frames):
        p = d / f"{stem}_{k:03d}.ppm"
        write_ppm(p, frame)
        paths.append(p)
    return paths
