"""Ratemaps: per-channel mean activity maps and their 1D profiles.

A ratemap is the arithmetic mean of one channel's feature maps over a
whole split at a fixed layer; averaging washes out per-image object
content and leaves the spatial code. Single-probe responses skip the
averaging so slit diffraction/interference patterns stay visible.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import torch

from .data import DatasetSplit
from .masks import SlitProbe
from .metrics import Profile1D, waviness

AXES = ("horizontal", "vertical")
REDUCTIONS = ("mean", "center_line")


@dataclass(frozen=True)
class Ratemap:
    """Mean activity of one (layer, channel) over ``n_images`` inputs."""

    values: np.ndarray
    layer: str
    channel: int
    n_images: int
    normalization: str = "raw"


def _layer_activation(model, x: torch.Tensor, layer: str) -> torch.Tensor:
    names = model.activation_names()
    if layer not in names:
        raise ValueError(f"unknown layer {layer!r}; available: {names}")
    _, _, taps = model.forward_with_activations(x)
    return taps[layer]


def _canonical_order(split: DatasetSplit) -> list:
    return sorted(split, key=lambda s: (s.source_id, s.rotation))


@torch.no_grad()
def extract_ratemaps(
    model, split: DatasetSplit, layer: str, batch_size: int = 16
) -> list[Ratemap]:
    """One mean activity map per channel of ``layer`` over the split.

    Samples are processed in a canonical order (sorted by source id and
    rotation) with fixed batching, so the result is exactly independent
    of the order the split arrived in; sums accumulate in float64.
    """
    if len(split) == 0:
        raise ValueError("cannot extract ratemaps from an empty split")
    model.eval()
    samples = _canonical_order(split)
    acc = None
    for start in range(0, len(samples), batch_size):
        chunk = samples[start : start + batch_size]
        x = torch.from_numpy(
            np.stack([s.pixels.astype(np.float32) for s in chunk])
        ).unsqueeze(1)
        feats = _layer_activation(model, x, layer).double().numpy()
        summed = feats.sum(axis=0)
        acc = summed if acc is None else acc + summed
    mean = acc / len(samples)
    return [
        Ratemap(values=mean[c], layer=layer, channel=c, n_images=len(samples))
        for c in range(mean.shape[0])
    ]


@torch.no_grad()
def probe_response(model, probe: SlitProbe, layer: str) -> list[Ratemap]:
    """Per-channel activation maps for a single probe input (no averaging)."""
    model.eval()
    x = torch.from_numpy(probe.pixels.astype(np.float32))[None, None]
    feats = _layer_activation(model, x, layer).double().numpy()[0]
    return [
        Ratemap(values=feats[c], layer=layer, channel=c, n_images=1)
        for c in range(feats.shape[0])
    ]


def minmax_normalize(rmap: Ratemap) -> Ratemap:
    values = rmap.values
    span = values.max() - values.min()
    if span == 0:
        normalized = np.zeros_like(values)
    else:
        normalized = (values - values.min()) / span
    return replace(rmap, values=normalized, normalization="minmax")


def profile_from_ratemap(
    rmap: Ratemap, axis: str = "horizontal", reduction: str = "mean"
) -> Profile1D:
    """Collapse a 2D map to a 1D profile along one axis.

    ``horizontal`` profiles run over columns (length = width) and
    ``vertical`` over rows; ``mean`` averages across the other axis while
    ``center_line`` takes the middle row/column.
    """
    if axis not in AXES:
        raise ValueError(f"axis must be one of {AXES}")
    if reduction not in REDUCTIONS:
        raise ValueError(f"reduction must be one of {REDUCTIONS}")
    values = np.asarray(rmap.values, dtype=float)
    h, w = values.shape
    if axis == "horizontal":
        profile = values.mean(axis=0) if reduction == "mean" else values[h // 2, :]
    else:
        profile = values.mean(axis=1) if reduction == "mean" else values[:, w // 2]
    origin = f"layer={rmap.layer} channel={rmap.channel} {axis}/{reduction}"
    return Profile1D(values=profile, origin=origin)


def aggregate_waviness(
    ratemaps: list[Ratemap],
    threshold: float = 0.1,
    axes: tuple[str, ...] = AXES,
    reduction: str = "mean",
) -> tuple[float, list]:
    """Mean waviness over per-channel profiles along the given axes.

    Returns the aggregate plus the individual (ratemap, axis, report)
    triples, which reports feed plots and tables.
    """
    results = []
    scores = []
    for rmap in ratemaps:
        for axis in axes:
            profile = profile_from_ratemap(rmap, axis=axis, reduction=reduction)
            report = waviness(profile, threshold=threshold)
            results.append((rmap, axis, report))
            scores.append(report.waviness)
    return float(np.mean(scores)), results


def save_ratemap(rmap: Ratemap, path) -> None:
    """Persist the values as a .npy array (self-describing binary layout)."""
    np.save(path, rmap.values)


def load_ratemap_values(path) -> np.ndarray:
    return np.load(path)
