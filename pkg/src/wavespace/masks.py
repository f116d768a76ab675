"""Space masks, proxy labels, and slit probes.

A space mask splits the image plane into ``N`` bands along one axis and
assigns every band an integer position class, leaving class 0 free for
background. Multiplying a binary skeleton image elementwise with a pair of
orthogonal masks produces per-pixel position targets: the network that
learns them has to encode *where* pixels are, since the input carries no
appearance information.

Two encodings are supported:

* ``xy`` - classes ascend 1..N along the axis.
* ``xy_symmetric`` - classes mirror about the midline, 1 at the centre
  ascending to N/2 at both edges.

Slit probes are the matching analysis inputs: one (single) or two (double)
thin segments whose activation responses are inspected for diffraction and
interference-like patterns.
"""

from __future__ import annotations

import colorsys
from dataclasses import dataclass

import numpy as np
from PIL import Image

SCHEMES = ("xy", "xy_symmetric")
DIRECTIONS = ("horizontal", "vertical")


class MaskConfigError(ValueError):
    """Raised for geometrically impossible mask or probe requests."""


@dataclass(frozen=True)
class SpaceMask:
    """Integer band-label grid along one axis.

    ``labels`` is (h, w) with values in [1, max_class], constant along the
    axis orthogonal to ``direction``.
    """

    labels: np.ndarray
    direction: str
    scheme: str
    regions: int
    max_class: int

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape


@dataclass(frozen=True)
class ProxyLabel:
    """Pair of per-pixel position-class maps derived from one skeleton.

    Skeleton foreground pixels carry the mask class of their band; all
    other pixels are ``background_class``.
    """

    horizontal: np.ndarray
    vertical: np.ndarray
    background_class: int = 0


@dataclass(frozen=True)
class SlitProbe:
    """Synthetic input with one or two thin segments."""

    pixels: np.ndarray
    kind: str
    slit_length: int
    slit_axis: str
    separation: int
    center: tuple[int, int]


def band_boundaries(extent: int, n: int) -> list[int]:
    """Edges of an even partition of ``extent`` into ``n`` bands.

    Region r spans [boundaries[r], boundaries[r+1]); widths differ by at
    most one pixel.
    """
    return [extent * r // n for r in range(n + 1)]


def _band_labels(extent: int, n: int, scheme: str) -> np.ndarray:
    if scheme == "xy":
        bounds = band_boundaries(extent, n)
        labels = np.empty(extent, dtype=np.int64)
        for r in range(n):
            labels[bounds[r] : bounds[r + 1]] = r + 1
        return labels
    # xy_symmetric: partition the folded half axis, label 1 at the centre.
    half = (extent + 1) // 2
    m = n // 2
    bounds = band_boundaries(half, m)
    folded = np.empty(half, dtype=np.int64)
    for r in range(m):
        folded[bounds[r] : bounds[r + 1]] = m - r
    j = np.arange(extent)
    return folded[np.minimum(j, extent - 1 - j)]


def build_space_mask(
    size: tuple[int, int],
    n_regions: int,
    scheme: str = "xy",
    direction: str = "horizontal",
) -> SpaceMask:
    """Build the integer position-class grid for one axis.

    Parameters
    ----------
    size : (h, w) of the mask grid.
    n_regions : number of bands N along the axis (N >= 2; even for
        ``xy_symmetric``).
    scheme : "xy" (ascending 1..N) or "xy_symmetric" (1 at centre,
        N/2 at both edges).
    direction : "horizontal" means classes vary with the column index,
        "vertical" with the row index.
    """
    if scheme not in SCHEMES:
        raise MaskConfigError(f"unknown scheme {scheme!r}; choose from {SCHEMES}")
    if direction not in DIRECTIONS:
        raise MaskConfigError(
            f"unknown direction {direction!r}; choose from {DIRECTIONS}"
        )
    h, w = int(size[0]), int(size[1])
    if h < 1 or w < 1:
        raise MaskConfigError(f"mask size must be positive, got {(h, w)}")
    extent = w if direction == "horizontal" else h
    if n_regions < 2:
        raise MaskConfigError(f"need at least 2 regions, got {n_regions}")
    if n_regions > extent:
        raise MaskConfigError(
            f"{n_regions} regions do not fit into extent {extent} along {direction}"
        )
    if scheme == "xy_symmetric" and n_regions % 2 != 0:
        raise MaskConfigError("xy_symmetric requires an even region count")

    line = _band_labels(extent, n_regions, scheme)
    if direction == "horizontal":
        labels = np.broadcast_to(line, (h, w)).copy()
    else:
        labels = np.broadcast_to(line[:, None], (h, w)).copy()
    max_class = n_regions if scheme == "xy" else n_regions // 2
    return SpaceMask(
        labels=labels,
        direction=direction,
        scheme=scheme,
        regions=n_regions,
        max_class=max_class,
    )


def make_proxy_label(sample, mask_h: SpaceMask, mask_v: SpaceMask) -> ProxyLabel:
    """Elementwise product of a binary skeleton with two orthogonal masks.

    ``sample`` may be a SkeletonSample or a bare 2D 0/1 array.
    """
    pixels = np.asarray(getattr(sample, "pixels", sample))
    if mask_h.direction != "horizontal" or mask_v.direction != "vertical":
        raise MaskConfigError(
            "make_proxy_label expects (horizontal, vertical) masks, got "
            f"({mask_h.direction}, {mask_v.direction})"
        )
    if pixels.shape != mask_h.shape or pixels.shape != mask_v.shape:
        raise MaskConfigError(
            f"shape mismatch: skeleton {pixels.shape}, masks "
            f"{mask_h.shape}/{mask_v.shape}"
        )
    fg = (pixels > 0).astype(np.int64)
    return ProxyLabel(horizontal=fg * mask_h.labels, vertical=fg * mask_v.labels)


def make_slit_probe(
    size: tuple[int, int],
    kind: str,
    slit_length: int,
    separation: int = 0,
    slit_axis: str = "vertical",
) -> SlitProbe:
    """Binary probe image with one or two centred 1-pixel-wide slits.

    A vertical slit is a segment of ``slit_length`` rows in a single
    column. ``double`` places two parallel slits ``separation`` pixels
    apart, straddling the centre.
    """
    if kind not in ("single", "double"):
        raise MaskConfigError(f"kind must be 'single' or 'double', got {kind!r}")
    if slit_axis not in DIRECTIONS:
        raise MaskConfigError(f"slit_axis must be one of {DIRECTIONS}")
    h, w = int(size[0]), int(size[1])
    pixels = np.zeros((h, w), dtype=np.uint8)
    # Work in (along, across) coordinates, then transpose for horizontal.
    along, across = (h, w) if slit_axis == "vertical" else (w, h)
    if slit_length < 1 or slit_length > along:
        raise MaskConfigError(
            f"slit_length {slit_length} does not fit extent {along}"
        )
    start = (along - slit_length) // 2
    centre = across // 2
    if kind == "single":
        cols = [centre]
        separation = 0
    else:
        if separation < 2:
            raise MaskConfigError("double slit needs separation >= 2")
        left = centre - separation // 2
        cols = [left, left + separation]
        if cols[0] < 0 or cols[1] >= across:
            raise MaskConfigError(
                f"separation {separation} pushes slits outside width {across}"
            )
    for c in cols:
        if slit_axis == "vertical":
            pixels[start : start + slit_length, c] = 1
        else:
            pixels[c, start : start + slit_length] = 1
    return SlitProbe(
        pixels=pixels,
        kind=kind,
        slit_length=slit_length,
        slit_axis=slit_axis,
        separation=separation,
        center=(h // 2, w // 2),
    )


def save_indexed_png(labels: np.ndarray, path) -> None:
    """Write an integer class map as an indexed-colour PNG.

    The class value is the palette index; class 0 is black and classes
    1..255 get well-separated hues.
    """
    arr = np.asarray(labels)
    if arr.min() < 0 or arr.max() > 255:
        raise ValueError("indexed PNG export supports class values 0..255")
    img = Image.fromarray(arr.astype(np.uint8), mode="P")
    palette = [0, 0, 0]
    for i in range(1, 256):
        r, g, b = colorsys.hsv_to_rgb(((i - 1) * 0.61803) % 1.0, 0.85, 0.95)
        palette += [int(255 * r), int(255 * g), int(255 * b)]
    img.putpalette(palette)
    img.save(path)
