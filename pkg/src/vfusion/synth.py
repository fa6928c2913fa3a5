"""Synthetic two-class clips for desk-scale training checks.

"violence": two blobs start on opposite sides, close in on each other and then
jitter around the collision point.  "non-violence": a single blob that either
sits still or drifts by a fraction of a pixel per frame.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .video import ManifestRecord, write_manifest, write_ppm

FRAME_SIZE = 40
N_FRAMES = 24
# content stays inside this border so a 32px crop of a 40px frame keeps it
MARGIN = 0.15


def _disc(frame: np.ndarray, cy: float, cx: float, radius: float, color) -> None:
    h, w = frame.shape[:2]
    yy, xx = np.mgrid[0:h, 0:w]
    frame[(yy - cy) ** 2 + (xx - cx) ** 2 <= radius ** 2] = color


def _background(rng, size):
    level = int(rng.integers(10, 60))
    return np.full((size, size, 3), level, dtype=np.uint8)


def _color(rng):
    return rng.integers(150, 256, size=3).astype(np.uint8)


def violence_clip(rng, size: int = FRAME_SIZE, n_frames: int = N_FRAMES) -> np.ndarray:
    bg = _background(rng, size)
    lo, hi = MARGIN * size, (1 - MARGIN) * size - 1
    r = float(rng.uniform(3.5, 5.0))
    cy = float(rng.uniform(0.4, 0.6) * size)
    meet = float(rng.uniform(0.45, 0.55) * size)
    c1, c2 = _color(rng), _color(rng)
    approach = n_frames // 2
    frames = []
    for t in range(n_frames):
        if t < approach:
            a = t / max(approach - 1, 1)
            x1 = (1 - a) * (lo + r) + a * (meet - r)
            x2 = (1 - a) * (hi - r) + a * (meet + r)
            y1 = y2 = cy
        else:
            j = rng.integers(-2, 3, size=4)
            x1, y1 = meet - r + j[0], cy + j[1]
            x2, y2 = meet + r + j[2], cy + j[3]
        f = bg.copy()
        _disc(f, y1, x1, r, c1)
        _disc(f, y2, x2, r, c2)
        frames.append(f)
    return np.stack(frames)


def calm_clip(rng, size: int = FRAME_SIZE, n_frames: int = N_FRAMES) -> np.ndarray:
    bg = _background(rng, size)
    r = float(rng.uniform(4.0, 6.0))
    cy, cx = rng.uniform(0.4, 0.6, size=2) * size
    drift = rng.uniform(-0.2, 0.2, size=2) if rng.random() < 0.5 else np.zeros(2)
    color = _color(rng)
    frames = []
    for t in range(n_frames):
        f = bg.copy()
        _disc(f, round(cy + drift[0] * t), round(cx + drift[1] * t), r, color)
        frames.append(f)
    return np.stack(frames)


def generate(out_dir, n_clips: int, seed: int, size: int = FRAME_SIZE, n_frames: int = N_FRAMES) -> list:
    """Write ``n_clips`` PPM clip directories plus ``manifest.tsv``; returns the records."""
    if n_clips < 2 or n_clips % 2:
        raise ValueError(f"n_clips must be a positive even number, got {n_clips}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    for k in range(n_clips):
        rng = np.random.default_rng(np.random.SeedSequence([seed, k]))
        label = k % 2  # alternate violence / non-violence
        frames = violence_clip(rng, size, n_frames) if label == 0 else calm_clip(rng, size, n_frames)
        clip_dir = out / f"clip_{k:04d}"
        clip_dir.mkdir(exist_ok=True)
        for old in clip_dir.glob("*.ppm"):
            old.unlink()
        for t, f in enumerate(frames):
            write_ppm(clip_dir / f"frame_{t:04d}.ppm", f)
        records.append(ManifestRecord(clip_dir, label, "auto"))
    write_manifest(out / "manifest.tsv", records)
    return records
