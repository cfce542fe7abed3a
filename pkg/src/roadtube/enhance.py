"""Low-light enhancement: gamma correction and histogram equalization.

Every image is enhanced; there is no day/night gate.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np
from PIL import Image

DEFAULT_GAMMA = 2.0
HIST_BINS = 256
# ITU-R BT.601 luma weights
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True, eq=False)
class Raster:
    """H x W x C image with values in [0, 1] (C is 1 or 3)."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise ValueError(f"raster must be HxWx1 or HxWx3, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("raster must be non-empty")
        if not np.all((arr >= 0.0) & (arr <= 1.0)):
            raise ValueError("raster values must lie in [0, 1]")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def __eq__(self, other):
        if not isinstance(other, Raster):
            return NotImplemented
        return self.data.shape == other.data.shape and bool(np.array_equal(self.data, other.data))


@dataclass(frozen=True)
class GammaParams:
    gamma: float = DEFAULT_GAMMA

    def __post_init__(self):
        if not (self.gamma > 0):
            raise ValueError(f"gamma must be positive, got {self.gamma}")


def gamma_correct(image: Raster, params: GammaParams) -> Raster:
    """Map each value ``v`` to ``v ** (1 / gamma)``; gamma > 1 brightens."""
    return Raster(np.power(image.data, 1.0 / params.gamma))


def _equalize_plane(plane: np.ndarray) -> np.ndarray:
    levels = np.rint(plane * (HIST_BINS - 1)).astype(np.int64)
    hist = np.bincount(levels.ravel(), minlength=HIST_BINS)
    cdf = np.cumsum(hist) / levels.size
    return cdf[levels]


def hist_equalize(image: Raster) -> Raster:
    """Map each 256-level value to its cumulative frequency.

    RGB input is equalized on luma; each channel is then scaled by the luma
    ratio and clipped to [0, 1].
    """
    data = image.data
    if image.channels == 1:
        return Raster(_equalize_plane(data[:, :, 0])[:, :, None])
    luma = np.clip(data @ LUMA_WEIGHTS, 0.0, 1.0)
    new_luma = _equalize_plane(luma)
    ratio = np.divide(new_luma, luma, out=np.zeros_like(luma), where=luma > 0)
    out = data * ratio[:, :, None]
    # black pixels have no chroma to preserve; they become gray
    dark = luma <= 0
    out[dark] = new_luma[dark][:, None]
    return Raster(np.clip(out, 0.0, 1.0))


def enhance_batch(images: Sequence[Raster], params: GammaParams, jobs: int = 1) -> List[Raster]:
    """Gamma-correct every image, preserving order."""

    def one(item):
        i, img = item
        try:
            return gamma_correct(img, params)
        except Exception as e:
            raise ValueError(f"image {i}: {e}") from e

    items = list(enumerate(images))
    if jobs <= 1 or len(items) < 2:
        return [one(it) for it in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(one, items))


def read_png(path) -> Raster:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return Raster(arr)


def to_uint8(image: Raster) -> np.ndarray:
    arr = np.rint(image.data * 255.0).astype(np.uint8)
    if arr.shape[2] == 1:
        arr = np.repeat(arr, 3, axis=2)
    return arr


def write_png(image: Raster, path) -> None:
    Image.fromarray(to_uint8(image)).save(path, format="PNG")
