"""Periodicity and position-accuracy metrics for activity profiles.

``waviness`` scores how much of a 1D profile is covered by alternating,
significant crests and troughs: 0 for flat or monotone profiles, close to
1 for a clean sine or square wave. ``acc_space`` is the class-imbalance
weighted pixel accuracy used to judge position predictions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Profile1D:
    """An ordered 1D sample sequence plus a note on where it came from."""

    values: np.ndarray
    origin: str = ""

    @property
    def length(self) -> int:
        return int(np.asarray(self.values).size)


@dataclass(frozen=True)
class WavinessReport:
    """Outcome of one waviness evaluation.

    ``extrema`` are (index, value) pairs; plateau extrema carry their
    midpoint index, so indices may be half-integral. ``effective_intervals``
    are (start_index, end_index, wavelength) triples that passed both the
    amplitude and the alternation test.
    """

    waviness: float
    threshold: float
    extrema: list = field(default_factory=list)
    effective_intervals: list = field(default_factory=list)
    global_diff: float = 0.0

    def to_dict(self) -> dict:
        return {
            "waviness": self.waviness,
            "threshold": self.threshold,
            "extrema": [[float(i), float(v)] for i, v in self.extrema],
            "effective_intervals": [
                [float(a), float(b), float(l)] for a, b, l in self.effective_intervals
            ],
            "global_diff": self.global_diff,
        }


def _runs(values: np.ndarray):
    """Compress consecutive equal samples into (start, end, value) runs."""
    edges = np.flatnonzero(np.diff(values) != 0)
    starts = np.concatenate(([0], edges + 1))
    ends = np.concatenate((edges, [values.size - 1]))
    return starts, ends, values[starts]


def _extrema(values: np.ndarray):
    """Extremum positions and values of a profile.

    Interior plateaus collapse to their midpoint index. The first and last
    samples always count as extrema: they bound the outermost monotone
    runs, and a plateau touching the boundary is represented by the
    boundary index itself.
    """
    starts, ends, vals = _runs(values)
    pos = [0.0]
    val = [float(values[0])]
    for i in range(1, len(starts) - 1):
        left, right, v = vals[i - 1], vals[i + 1], vals[i]
        if (v > left and v > right) or (v < left and v < right):
            pos.append((starts[i] + ends[i]) / 2.0)
            val.append(float(v))
    pos.append(float(values.size - 1))
    val.append(float(values[-1]))
    return np.asarray(pos), np.asarray(val)


def waviness(profile, threshold: float = 0.1) -> WavinessReport:
    """Score the fraction of a profile covered by alternating wave swings.

    The profile is reduced to its extrema. Each interval between adjacent
    extrema is a candidate swing; it counts as *effective* when its
    amplitude relative to the global range exceeds ``threshold`` and an
    adjacent interval swings the opposite way with the same significance.
    The score is the summed index span of effective intervals divided by
    the profile length, clamped to [0, 1].

    A constant profile scores 0 by definition; a strictly monotone profile
    has a single swing with nothing to alternate against and also scores 0.

    Parameters
    ----------
    profile : Profile1D or 1D array, at least 3 finite samples.
    threshold : relative amplitude cut for a significant swing.
    """
    values = np.asarray(getattr(profile, "values", profile), dtype=float).ravel()
    n = values.size
    if n < 3:
        raise ValueError(f"waviness needs at least 3 samples, got {n}")
    if not np.all(np.isfinite(values)):
        raise ValueError("waviness requires finite profile values")
    global_diff = float(values.max() - values.min())
    if global_diff == 0.0:
        return WavinessReport(0.0, threshold, [], [], 0.0)

    pos, val = _extrema(values)
    diffs = np.diff(val)
    spans = np.diff(pos)
    with np.errstate(over="ignore", invalid="ignore"):
        significant = np.abs(diffs) / global_diff > threshold
    signs = np.sign(diffs)
    k = diffs.size
    effective = np.zeros(k, dtype=bool)
    for i in range(k):
        if not significant[i] or signs[i] == 0:
            continue
        prev_ok = i > 0 and significant[i - 1] and signs[i - 1] * signs[i] < 0
        next_ok = i + 1 < k and significant[i + 1] and signs[i + 1] * signs[i] < 0
        effective[i] = prev_ok or next_ok

    score = min(1.0, float(spans[effective].sum()) / n)
    return WavinessReport(
        waviness=score,
        threshold=threshold,
        extrema=list(zip(pos.tolist(), val.tolist())),
        effective_intervals=[
            (float(pos[i]), float(pos[i + 1]), float(spans[i]))
            for i in range(k)
            if effective[i]
        ],
        global_diff=global_diff,
    )


def acc_space(pred_h, pred_v, label, swap_weights: bool = False) -> float:
    """Imbalance-weighted pixel accuracy of position predictions.

    Per direction, ``acc_o`` is the accuracy restricted to object pixels
    (label > 0) and ``acc_b`` the accuracy restricted to background. The
    combined score weights ``acc_o`` by the background fraction B/X and
    ``acc_b`` by the object fraction O/X, then averages over the two
    directions. ``swap_weights=True`` pairs each accuracy with its own
    pixel fraction instead.

    A direction with no object pixels defines acc_o := 1 (and likewise
    acc_b := 1 without background), so the score stays in [0, 1].
    """
    per_direction = []
    for pred, lab in ((pred_h, label.horizontal), (pred_v, label.vertical)):
        pred = np.asarray(pred)
        lab = np.asarray(lab)
        if pred.shape != lab.shape:
            raise ValueError(f"shape mismatch: pred {pred.shape} vs label {lab.shape}")
        total = lab.size
        obj = lab > 0
        n_obj = int(obj.sum())
        n_bg = total - n_obj
        acc_o = float((pred[obj] == lab[obj]).mean()) if n_obj else 1.0
        acc_b = float((pred[~obj] == 0).mean()) if n_bg else 1.0
        if swap_weights:
            per_direction.append((n_obj / total) * acc_o + (n_bg / total) * acc_b)
        else:
            per_direction.append((n_bg / total) * acc_o + (n_obj / total) * acc_b)
    return float(np.mean(per_direction))
