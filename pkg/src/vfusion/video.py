"""Clip ingestion and preprocessing.

Raw frames are ``H x W x 3`` uint8 arrays read from binary PPM files.  The
path from a clip directory to a model-ready ``S x 3 x crop x crop`` float32
array is: keyframe selection -> fixed-length sampling -> crop -> per-frame
normalization -> (training only) one flip/rotation draw shared by the whole clip.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

log = logging.getLogger(__name__)

LABELS = ("violence", "non-violence")
SPLITS = ("train", "val", "test", "auto")
SIDECAR = "keyframes.json"
MAX_ROTATION = 20.0


@dataclass
class VideoClip:
    frames: list  # of H x W x 3 uint8
    label: int    # index into LABELS
    source_id: str

    def __post_init__(self):
        if not self.frames:
            raise ValueError(f"{self.source_id}: clip has no frames")
        if len({f.shape for f in self.frames}) != 1:
            raise ValueError(f"{self.source_id}: frames differ in size")


@dataclass
class ManifestRecord:
    path: Path
    label: int
    split: str = "auto"
    line: int = 0

    @property
    def label_name(self) -> str:
        return LABELS[self.label]


# -- frame files ----------------------------------------------------------

def read_ppm(path) -> np.ndarray:
    with Image.open(path) as im:
        if im.format != "PPM":
            raise ValueError(f"{path}: not a PPM file")
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def write_ppm(path, frame: np.ndarray) -> None:
    Image.fromarray(np.ascontiguousarray(frame, dtype=np.uint8), "RGB").save(path, format="PPM")


def upscale_to(frame: np.ndarray, min_side: int) -> np.ndarray:
    """Bilinear upscale so both sides are at least ``min_side`` (aspect preserved)."""
    h, w = frame.shape[:2]
    if h >= min_side and w >= min_side:
        return frame
    k = min_side / min(h, w)
    size = (max(min_side, math.ceil(w * k)), max(min_side, math.ceil(h * k)))
    return np.asarray(Image.fromarray(frame, "RGB").resize(size, Image.BILINEAR), dtype=np.uint8)


def frame_files(clip_dir) -> list[Path]:
    return sorted(p for p in Path(clip_dir).iterdir() if p.suffix.lower() == ".ppm")


def load_clip(clip_dir, label: int, min_side: int = 224) -> VideoClip:
    clip_dir = Path(clip_dir)
    if not clip_dir.is_dir():
        raise FileNotFoundError(f"clip directory {clip_dir} does not exist")
    files = frame_files(clip_dir)
    if not files:
        raise ValueError(f"{clip_dir}: no .ppm frames")
    frames = [upscale_to(read_ppm(p), min_side) for p in files]
    return VideoClip(frames, label, str(clip_dir))


# -- keyframes & sampling -------------------------------------------------

def diff_count(a: np.ndarray, b: np.ndarray) -> int:
    """Number of nonzero bytes in the saturating absolute difference of two frames."""
    return int(np.count_nonzero(a != b))


def default_threshold(frame: np.ndarray) -> int:
    return int(frame.size // 100)


def keyframe_indices(frames, threshold: int | None = None) -> list[int]:
    if not frames:
        raise ValueError("select_keyframes: no frames")
    t = default_threshold(frames[0]) if threshold is None else threshold
    keep = [0]
    for k in range(1, len(frames)):
        if diff_count(frames[k], frames[k - 1]) > t:
            keep.append(k)
    return keep


def select_keyframes(frames, threshold: int | None = None) -> list:
    """Frame 0, plus every frame differing from its predecessor in more than ``threshold`` bytes."""
    return [frames[k] for k in keyframe_indices(frames, threshold)]


def sample_indices(n: int, length: int) -> list[int]:
    if n < 1 or length < 1:
        raise ValueError(f"cannot sample {length} frames from {n}")
    if n < length:
        return list(range(n)) + [n - 1] * (length - n)
    if length == 1:
        return [0]
    return [(i * (n - 1)) // (length - 1) for i in range(length)]


def sample_sequence(keyframes: list, length: int, rng=None) -> list:
    """Exactly ``length`` frames: evenly spaced when there are enough, else last frame repeated.

    ``rng`` is accepted for interface symmetry; the rule is deterministic.
    """
    return [keyframes[i] for i in sample_indices(len(keyframes), length)]


# -- crop / normalize / augment ---------------------------------------------

def crop_origin(height: int, width: int, size: int, rng=None, train: bool = False) -> tuple[int, int]:
    """``(x, y)`` top-left corner: uniform at train time, centered otherwise."""
    if height < size or width < size:
        raise ValueError(f"frame {width}x{height} smaller than crop {size}")
    if train:
        if rng is None:
            raise ValueError("train-mode crop needs an rng")
        return int(rng.integers(0, width - size + 1)), int(rng.integers(0, height - size + 1))
    return (width - size) // 2, (height - size) // 2


def random_crop(frame: np.ndarray, size: int = 224, rng=None, train: bool = True) -> np.ndarray:
    x, y = crop_origin(frame.shape[0], frame.shape[1], size, rng, train)
    return frame[y:y + size, x:x + size]


def normalize_frame(frame: np.ndarray) -> np.ndarray:
    """uint8 ``H x W x 3`` -> float32 ``3 x H x W`` standardized per channel (constant channels -> 0)."""
    x = frame.astype(np.float64).transpose(2, 0, 1) / 255.0
    mean = x.mean(axis=(1, 2), keepdims=True)
    std = x.std(axis=(1, 2), keepdims=True)
    # round-off leaves a tiny nonzero std on constant channels, so test the range instead
    varies = np.ptp(x, axis=(1, 2), keepdims=True) > 0
    out = np.divide(x - mean, std, out=np.zeros_like(x), where=varies & (std > 0))
    return out.astype(np.float32)


@dataclass(frozen=True)
class Augmentation:
    flip: bool = False
    angle: float = 0.0  # degrees, counter-clockwise as displayed

    @classmethod
    def draw(cls, rng) -> "Augmentation":
        flip = bool(rng.random() < 0.5)
        return cls(flip, float(rng.uniform(-MAX_ROTATION, MAX_ROTATION)))


def hflip(frame: np.ndarray) -> np.ndarray:
    return frame[..., ::-1].copy()


def rotate(frame: np.ndarray, angle: float) -> np.ndarray:
    """Rotate a ``C x H x W`` map about its center; bilinear, zero outside."""
    if angle == 0:
        return frame.copy()
    return ndimage.rotate(frame, angle, axes=(1, 2), reshape=False, order=1,
                          mode="constant", cval=0.0).astype(frame.dtype)


def apply_augmentation(frame: np.ndarray, aug: Augmentation) -> np.ndarray:
    out = hflip(frame) if aug.flip else frame
    return rotate(out, aug.angle)


def augment(frame: np.ndarray, rng, train: bool = True) -> np.ndarray:
    """Random flip (p=0.5) then rotation in [-20, 20] degrees; identity when not training."""
    if not train:
        return frame
    return apply_augmentation(frame, Augmentation.draw(rng))


# -- full clip path -------------------------------------------------------

@dataclass
class PipelineConfig:
    sequence_length: int = 20
    crop_size: int = 224
    threshold: int | None = None  # None -> 1% of the frame's byte count


@dataclass
class PreparedClip:
    """Keyframe-selected, fixed-length uint8 frames ready for per-epoch crop/augment."""
    frames: np.ndarray  # S x H x W x 3
    label: int
    source_id: str
    kept: list = field(default_factory=list)  # raw frame indices used, in order
    threshold: int | None = None


def prepare(clip: VideoClip, cfg: PipelineConfig) -> PreparedClip:
    keep = keyframe_indices(clip.frames, cfg.threshold)
    picks = [keep[i] for i in sample_indices(len(keep), cfg.sequence_length)]
    t = default_threshold(clip.frames[0]) if cfg.threshold is None else cfg.threshold
    return PreparedClip(np.stack([clip.frames[i] for i in picks]), clip.label, clip.source_id, picks, t)


def load_prepared(record: ManifestRecord, cfg: PipelineConfig) -> PreparedClip:
    """Load a clip directory; a directory written by ``preprocess`` is used as-is."""
    sidecar = Path(record.path) / SIDECAR
    if sidecar.exists():
        meta = json.loads(sidecar.read_text())
        clip = load_clip(record.path, record.label, cfg.crop_size)
        if len(clip.frames) != cfg.sequence_length:
            raise ValueError(f"{record.path}: cached sequence has {len(clip.frames)} frames, "
                             f"config wants {cfg.sequence_length}")
        return PreparedClip(np.stack(clip.frames), record.label, str(record.path),
                            meta.get("kept", []), meta.get("threshold"))
    return prepare(load_clip(record.path, record.label, cfg.crop_size), cfg)


def to_model_input(clip: PreparedClip, crop_size: int, rng=None, train: bool = False) -> np.ndarray:
    """``S x 3 x crop x crop`` float32; one crop origin and one augmentation draw per clip."""
    s, h, w, _ = clip.frames.shape
    x, y = crop_origin(h, w, crop_size, rng, train)
    aug = Augmentation.draw(rng) if train else None
    out = np.empty((s, 3, crop_size, crop_size), dtype=np.float32)
    for i in range(s):
        f = normalize_frame(clip.frames[i, y:y + crop_size, x:x + crop_size])
        out[i] = apply_augmentation(f, aug) if train else f
    return out


# -- manifests & splits ---------------------------------------------------

def parse_label(text: str) -> int:
    try:
        return LABELS.index(text.strip().lower())
    except ValueError:
        raise ValueError(f"unknown label {text!r} (expected one of {', '.join(LABELS)})") from None


def load_manifest(path) -> list[ManifestRecord]:
    """Tab-separated ``clip_dir<TAB>label[<TAB>split]`` lines; relative dirs resolve against the manifest."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as e:
        raise ValueError(f"cannot read manifest {path}: {e}") from None
    records, seen = [], set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.rstrip("\r\n").split("\t")
        if len(parts) not in (2, 3) or not parts[0]:
            raise ValueError(f"{path}:{lineno}: expected 'clip_dir<TAB>label[<TAB>split]', got {line!r}")
        try:
            label = parse_label(parts[1])
        except ValueError as e:
            raise ValueError(f"{path}:{lineno}: {e}") from None
        split = parts[2].strip().lower() if len(parts) == 3 and parts[2].strip() else "auto"
        if split not in SPLITS:
            raise ValueError(f"{path}:{lineno}: unknown split {parts[2]!r}")
        clip = Path(parts[0])
        if not clip.is_absolute():
            clip = path.parent / clip
        if clip in seen:
            raise ValueError(f"{path}:{lineno}: duplicate clip path {parts[0]!r}")
        seen.add(clip)
        records.append(ManifestRecord(clip, label, split, lineno))
    return records


def write_manifest(path, records) -> None:
    base = Path(path).parent
    lines = []
    for r in records:
        p = Path(r.path)
        try:
            p = p.relative_to(base)
        except ValueError:
            pass
        lines.append(f"{p.as_posix()}\t{LABELS[r.label]}\t{r.split}\n")
    Path(path).write_text("".join(lines), encoding="utf-8")


def split_dataset(records, ratios=(0.6, 0.2, 0.2), seed: int = 0):
    """Seeded, label-stratified train/val/test partition.

    Records pinned to a split keep it.  For the rest, each class gets
    ``floor(ratio * n)`` validation and test clips; the remainder trains.
    """
    if len(ratios) != 3 or min(ratios) < 0 or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must be three nonnegative numbers summing to 1, got {ratios}")
    out = {"train": [], "val": [], "test": []}
    auto = {label: [] for label in range(len(LABELS))}
    for r in records:
        if r.split == "auto":
            auto[r.label].append(r)
        else:
            out[r.split].append(r)
    for label, group in auto.items():
        rng = np.random.default_rng(np.random.SeedSequence([seed, label]))
        order = rng.permutation(len(group))
        n_val = int(math.floor(ratios[1] * len(group) + 1e-9))
        n_test = int(math.floor(ratios[2] * len(group) + 1e-9))
        picked = [group[i] for i in order]
        out["val"].extend(picked[:n_val])
        out["test"].extend(picked[n_val:n_val + n_test])
        out["train"].extend(picked[n_val + n_test:])
    return out["train"], out["val"], out["test"]
