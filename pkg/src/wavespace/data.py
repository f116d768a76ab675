"""Skeleton datasets: loading, desk-scale synthesis, rotation augmentation.

Samples are binary skeleton images. The loader ingests ground-truth label
images (any nonzero pixel is skeleton); the synthesizer draws small random
corpora of open polylines and arcs so the pipeline runs without external
downloads. Everything is deterministic given the source listing and seed.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image
from skimage.draw import bezier_curve, line

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".bmp")


class IngestionError(RuntimeError):
    """Raised when a dataset directory or file cannot be read."""


@dataclass(frozen=True)
class SkeletonSample:
    """One binary skeleton image plus provenance metadata."""

    pixels: np.ndarray
    source_id: str
    original_size: tuple[int, int]
    rotation: int = 0

    @property
    def foreground_count(self) -> int:
        return int(self.pixels.sum())


@dataclass(frozen=True)
class DatasetSplit:
    """Ordered, immutable collection of samples for one split."""

    samples: tuple[SkeletonSample, ...]
    split: str
    seed: int

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)


def resize_nearest(pixels: np.ndarray, target_size: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbour resize with top-left anchored index mapping.

    Output pixel (i, j) samples input pixel (floor(i*H/h), floor(j*W/w)),
    so (0, 0) always maps to (0, 0) and binary inputs stay binary.
    """
    src_h, src_w = pixels.shape
    dst_h, dst_w = int(target_size[0]), int(target_size[1])
    if dst_h < 1 or dst_w < 1:
        raise ValueError(f"target size must be positive, got {target_size}")
    rows = (np.arange(dst_h) * src_h) // dst_h
    cols = (np.arange(dst_w) * src_w) // dst_w
    return pixels[np.ix_(rows, cols)]


def load_skeleton_dataset(
    root_path, split: str, target_size: tuple[int, int]
) -> DatasetSplit:
    """Load a flat directory of grayscale label images as binary skeletons.

    Images live in ``root_path/<split>/`` (or directly in ``root_path``).
    Any pixel > 0 is foreground; images are resized with nearest-neighbour
    sampling so labels stay binary. Images left with no foreground after
    the resize are skipped with a warning.
    """
    root = Path(root_path)
    directory = root / split if (root / split).is_dir() else root
    if not directory.is_dir():
        raise IngestionError(f"dataset directory not found: {directory}")
    files = sorted(
        p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES
    )
    samples = []
    for path in files:
        try:
            with Image.open(path) as img:
                raw = np.asarray(img.convert("L"))
        except OSError as exc:
            raise IngestionError(f"unreadable image file: {path}") from exc
        binary = (raw > 0).astype(np.uint8)
        original_size = binary.shape
        resized = resize_nearest(binary, target_size)
        if resized.sum() == 0:
            log.warning("skipping %s: no foreground after resize", path.name)
            continue
        samples.append(
            SkeletonSample(
                pixels=resized,
                source_id=f"{split}/{path.name}",
                original_size=original_size,
                rotation=0,
            )
        )
    return DatasetSplit(samples=tuple(samples), split=split, seed=0)


def _fold_into(coord: float, extent: int) -> float:
    """Reflect a coordinate back into [0, extent-1] (mirror tiling)."""
    if extent == 1:
        return 0.0
    period = 2.0 * (extent - 1)
    return abs((coord % period + period) % period - (extent - 1))


def _draw_polyline(canvas: np.ndarray, rng, target_len: float) -> None:
    h, w = canvas.shape
    n_seg = int(rng.integers(1, 4))
    r = float(rng.uniform(0, h - 1))
    c = float(rng.uniform(0, w - 1))
    heading = float(rng.uniform(0, 2 * math.pi))
    step = target_len / n_seg
    for _ in range(n_seg):
        heading += float(rng.uniform(-1.0, 1.0))
        r2 = _fold_into(r + step * math.sin(heading), h)
        c2 = _fold_into(c + step * math.cos(heading), w)
        rr, cc = line(int(round(r)), int(round(c)), int(round(r2)), int(round(c2)))
        canvas[rr, cc] = 1
        r, c = r2, c2


def _draw_arc(canvas: np.ndarray, rng, target_len: float) -> None:
    h, w = canvas.shape
    r0 = float(rng.uniform(0, h - 1))
    c0 = float(rng.uniform(0, w - 1))
    heading = float(rng.uniform(0, 2 * math.pi))
    r2 = _fold_into(r0 + target_len * math.sin(heading), h)
    c2 = _fold_into(c0 + target_len * math.cos(heading), w)
    # Control point offset perpendicular to the chord bends the curve.
    bend = float(rng.uniform(0.2, 0.5)) * target_len * rng.choice((-1.0, 1.0))
    mr, mc = (r0 + r2) / 2, (c0 + c2) / 2
    r1 = _fold_into(mr + bend * math.cos(heading), h)
    c1 = _fold_into(mc - bend * math.sin(heading), w)
    rr, cc = bezier_curve(
        int(round(r0)), int(round(c0)),
        int(round(r1)), int(round(c1)),
        int(round(r2)), int(round(c2)),
        weight=1.0, shape=canvas.shape,
    )
    canvas[rr, cc] = 1


def synthesize_skeletons(
    count: int, size: tuple[int, int], seed: int, split: str = "train"
) -> DatasetSplit:
    """Generate a deterministic corpus of random skeleton-like strokes.

    Each image holds 1-4 open polylines or arcs of 1-pixel width with
    path lengths between 20% and 80% of the image diagonal. Coordinates
    leaving the canvas are mirrored back inside, which preserves stroke
    length while keeping everything drawable.
    """
    if count < 1:
        raise ValueError(f"count must be positive, got {count}")
    h, w = int(size[0]), int(size[1])
    if h < 2 or w < 2:
        raise ValueError(f"size must be at least 2x2, got {size}")
    rng = np.random.default_rng(seed)
    diagonal = math.hypot(h, w)
    samples = []
    for i in range(count):
        canvas = np.zeros((h, w), dtype=np.uint8)
        for _ in range(int(rng.integers(1, 5))):
            target_len = float(rng.uniform(0.2, 0.8)) * diagonal
            if rng.random() < 0.5:
                _draw_polyline(canvas, rng, target_len)
            else:
                _draw_arc(canvas, rng, target_len)
        samples.append(
            SkeletonSample(
                pixels=canvas,
                source_id=f"{split}/synthetic-{seed}-{i:04d}",
                original_size=(h, w),
                rotation=0,
            )
        )
    return DatasetSplit(samples=tuple(samples), split=split, seed=seed)


def augment_rotations(split: DatasetSplit) -> DatasetSplit:
    """Expand a split with all four axis-aligned rotations of each sample.

    For non-square samples the 90/270 degree copies have swapped
    dimensions; the rotation field records the applied angle either way.
    """
    if len(split) == 0:
        raise ValueError("cannot augment an empty split")
    augmented = []
    for sample in split:
        for quarter_turns, degrees in enumerate((0, 90, 180, 270)):
            pixels = np.ascontiguousarray(np.rot90(sample.pixels, quarter_turns))
            augmented.append(
                replace(sample, pixels=pixels, rotation=degrees)
            )
    return DatasetSplit(samples=tuple(augmented), split=split.split, seed=split.seed)


def write_manifest(split: DatasetSplit, path) -> None:
    """Cache the split ordering as a line-delimited list of source ids."""
    Path(path).write_text(
        "".join(f"{s.source_id}\n" for s in split.samples), encoding="utf-8"
    )


def read_manifest(path) -> list[str]:
    return Path(path).read_text(encoding="utf-8").splitlines()
