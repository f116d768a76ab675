"""Grating perturbations and the black-box frequency attack.

The attack sweeps a grid of (wavelength, orientation, phase) gratings,
adds each to every dataset image at a fixed amplitude, and scores the
victim through a ModelAdapter (higher score = better task performance).
The grating that minimizes the score is the strongest attack; the one
that maximizes it is the weakest.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

WAVEFORMS = ("square", "sine")


@dataclass(frozen=True)
class WavePerturbation:
    """Additive grating: wavelength/orientation/phase/amplitude/waveform."""

    wavelength: float
    orientation_deg: float
    phase: float = 0.0
    amplitude: float = 8.0
    waveform: str = "square"


@dataclass(frozen=True)
class SearchGrid:
    wavelengths: tuple = (2, 3, 4, 6, 8, 12, 16, 24, 32, 48, 64)
    orientations: tuple = tuple(range(0, 180, 15))
    phase_fracs: tuple = (0.0, 0.25, 0.5, 0.75)

    def points(self):
        """Lexicographic (wavelength, orientation, phase) iteration."""
        for lam in sorted(self.wavelengths):
            for theta in sorted(self.orientations):
                for frac in sorted(self.phase_fracs):
                    yield float(lam), float(theta), float(frac) * float(lam)

    def __len__(self):
        return len(self.wavelengths) * len(self.orientations) * len(self.phase_fracs)


@dataclass(frozen=True)
class ModelAdapter:
    """Black-box boundary around a victim model.

    ``predict`` maps a list of images to task outputs; ``metric`` maps
    (outputs, references) to a scalar where higher means better. Neither
    may mutate its inputs.
    """

    predict: Callable
    metric: Callable
    name: str = "adapter"


@dataclass
class AttackResult:
    grid: list = field(default_factory=list)  # (wavelength, orientation, phase, score)
    strongest: tuple = ()
    weakest: tuple = ()
    baseline_score: float = 0.0
    metric_name: str = "score"
    epsilon: float = 8.0
    waveform: str = "square"

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["wavelength", "orientation_deg", "phase", "score"])
            writer.writerows(self.grid)

    def summary(self) -> dict:
        return {
            "metric": self.metric_name,
            "epsilon": self.epsilon,
            "waveform": self.waveform,
            "baseline_score": self.baseline_score,
            "strongest": {
                "wavelength": self.strongest[0],
                "orientation_deg": self.strongest[1],
                "phase": self.strongest[2],
                "score": self.strongest[3],
            },
            "weakest": {
                "wavelength": self.weakest[0],
                "orientation_deg": self.weakest[1],
                "phase": self.weakest[2],
                "score": self.weakest[3],
            },
            "grid_points": len(self.grid),
        }

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.summary(), indent=2), encoding="utf-8")


def make_wave(size: tuple[int, int], p: WavePerturbation) -> np.ndarray:
    """Evaluate a grating field at pixel centres.

    The field is constant along lines perpendicular to the orientation and
    periodic with the wavelength along it. Square waves take the sign of
    the underlying sine, so values are exactly +/-amplitude; pixel centres
    sit at half-integer coordinates to dodge the sign boundaries for the
    common even wavelengths.
    """
    if p.waveform not in WAVEFORMS:
        raise ValueError(f"waveform must be one of {WAVEFORMS}")
    if p.wavelength < 2:
        raise ValueError(
            f"wavelength {p.wavelength} below the 2-pixel sampling limit"
        )
    if p.amplitude < 0:
        raise ValueError(f"amplitude must be non-negative, got {p.amplitude}")
    h, w = int(size[0]), int(size[1])
    theta = math.radians(p.orientation_deg)
    yy, xx = np.mgrid[0:h, 0:w]
    t = (xx + 0.5) * math.cos(theta) + (yy + 0.5) * math.sin(theta) + p.phase
    angle = 2.0 * math.pi * t / p.wavelength
    if p.waveform == "sine":
        return p.amplitude * np.sin(angle)
    return p.amplitude * np.where(np.sin(angle) >= 0, 1.0, -1.0)


def apply_perturbation(image: np.ndarray, fld: np.ndarray, value_range=None):
    """Add a perturbation field to an image and clip to the valid range.

    ``value_range`` defaults to the dtype range for integer images and
    (0, 1) for floats. The returned image keeps the input dtype, and its
    L-infinity distance from the input never exceeds the field amplitude
    (integer images truncate the field toward zero before adding).
    """
    image = np.asarray(image)
    fld = np.asarray(fld)
    if image.shape != fld.shape:
        raise ValueError(f"shape mismatch: image {image.shape} vs field {fld.shape}")
    if np.issubdtype(image.dtype, np.integer):
        if value_range is None:
            info = np.iinfo(image.dtype)
            value_range = (info.min, info.max)
        out = image.astype(np.float64) + np.trunc(fld)
    else:
        if value_range is None:
            value_range = (0.0, 1.0)
        out = image.astype(np.float64) + fld
    out = np.clip(out, value_range[0], value_range[1])
    return out.astype(image.dtype)


def frequency_attack(
    adapter: ModelAdapter,
    dataset,
    search: SearchGrid | None = None,
    epsilon: float = 8.0,
    waveform: str = "square",
    value_range=None,
) -> AttackResult:
    """Exhaustive black-box sweep for the strongest and weakest grating.

    ``dataset`` is a nonempty sequence of (image, reference) pairs. Every
    grid point perturbs all images, runs ``adapter.predict``, and scores
    with ``adapter.metric``. Ties break toward the smallest wavelength,
    then orientation, then phase (the iteration order).
    """
    dataset = list(dataset)
    if not dataset:
        raise ValueError("frequency_attack needs a nonempty dataset")
    search = search or SearchGrid()
    if len(search) == 0:
        raise ValueError("frequency_attack needs a nonempty search grid")
    images = [np.asarray(img) for img, _ in dataset]
    references = [ref for _, ref in dataset]

    baseline = float(adapter.metric(adapter.predict(images), references))
    grid_scores = []
    strongest = None
    weakest = None
    for lam, theta, phase in search.points():
        p = WavePerturbation(
            wavelength=lam, orientation_deg=theta, phase=phase,
            amplitude=epsilon, waveform=waveform,
        )
        try:
            fields = {}
            perturbed = []
            for img in images:
                shape = img.shape
                if shape not in fields:
                    fields[shape] = make_wave(shape, p)
                perturbed.append(apply_perturbation(img, fields[shape], value_range))
            score = float(adapter.metric(adapter.predict(perturbed), references))
        except Exception as exc:
            raise RuntimeError(
                f"adapter {adapter.name!r} failed at grid point "
                f"(wavelength={lam}, orientation={theta}, phase={phase}): {exc}"
            ) from exc
        point = (lam, theta, phase, score)
        grid_scores.append(point)
        if strongest is None or score < strongest[3]:
            strongest = point
        if weakest is None or score > weakest[3]:
            weakest = point

    return AttackResult(
        grid=grid_scores,
        strongest=strongest,
        weakest=weakest,
        baseline_score=baseline,
        metric_name=adapter.name,
        epsilon=epsilon,
        waveform=waveform,
    )


def matched_filter_adapter(
    wavelength: float,
    orientation_deg: float,
    waveform: str = "square",
    phase_fracs: tuple = (0.0, 0.25, 0.5, 0.75),
) -> ModelAdapter:
    """Synthetic victim that resonates with one specific grating.

    The score is 1 / (1 + mean matched-filter response), where the
    response of an image is its largest normalized correlation with the
    reference grating over a set of template phases. Unperturbed (flat)
    images score 1; the matched grating drives the score down in
    proportion to its amplitude.
    """

    def predict(images):
        return [np.asarray(img, dtype=np.float64) for img in images]

    def metric(outputs, references):
        responses = []
        for img in outputs:
            templates = [
                make_wave(
                    img.shape,
                    WavePerturbation(
                        wavelength=wavelength,
                        orientation_deg=orientation_deg,
                        phase=frac * wavelength,
                        amplitude=1.0,
                        waveform=waveform,
                    ),
                )
                for frac in phase_fracs
            ]
            centered = img - img.mean()
            best = max(
                float((centered * t).sum()) / math.sqrt(float((t * t).sum()))
                for t in templates
            )
            responses.append(max(best, 0.0))
        return 1.0 / (1.0 + float(np.mean(responses)))

    return ModelAdapter(predict=predict, metric=metric, name="matched_filter")


def position_net_adapter(model, mask_h, mask_v, value_range=(0.0, 255.0)) -> ModelAdapter:
    """Adapter that feeds 0-255 grayscale images into a PositionNet.

    Images are rescaled to the network's native 0-1 range before the
    forward pass, so an amplitude-8 grating lands as 8/255 on the model
    input. References are ProxyLabel instances; the score is the mean
    position accuracy over the batch.
    """
    import torch

    from .metrics import acc_space

    lo, hi = value_range
    span = hi - lo

    def predict(images):
        batch = np.stack([(np.asarray(img, dtype=np.float64) - lo) / span for img in images])
        x = torch.from_numpy(batch).float().unsqueeze(1)
        model.eval()
        with torch.no_grad():
            pred_h, pred_v = model.predict(x)
        return [(pred_h[i], pred_v[i]) for i in range(len(images))]

    def metric(outputs, references):
        scores = [
            acc_space(pred_h, pred_v, label)
            for (pred_h, pred_v), label in zip(outputs, references)
        ]
        return float(np.mean(scores))

    return ModelAdapter(predict=predict, metric=metric, name="acc_space")


def attack_dataset_from_split(split, mask_h, mask_v, value_range=(0.0, 255.0)):
    """(image, reference) pairs for attacking a position net on a split."""
    from .masks import make_proxy_label

    lo, hi = value_range
    pairs = []
    for sample in split:
        image = sample.pixels.astype(np.float64) * (hi - lo) + lo
        pairs.append((image, make_proxy_label(sample, mask_h, mask_v)))
    return pairs
