"""Binary dilation, erosion and boundary bands.

Masks are boolean ``(H, W)`` arrays.  Pixels outside the image are always
background: dilation never pulls foreground in from outside, and
foreground touching the image edge erodes there.

Square elements use separable 1-D max/min passes; disks use an exact
Euclidean distance transform and compare squared distances so that the
footprint is precisely ``{(dy, dx) : dy**2 + dx**2 <= r**2}``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .raster import as_mask

__all__ = [
    "Disk",
    "Square",
    "boundary_band",
    "dilate",
    "erode",
    "footprint",
]


@dataclass(frozen=True)
class Square:
    """Chebyshev ball: a ``(2r+1) x (2r+1)`` block."""

    radius: int

    def __post_init__(self):
        if int(self.radius) != self.radius or self.radius < 1:
            raise ValueError(f"radius must be an integer >= 1, got {self.radius}")


@dataclass(frozen=True)
class Disk:
    """Euclidean ball of the given radius."""

    radius: int

    def __post_init__(self):
        if int(self.radius) != self.radius or self.radius < 1:
            raise ValueError(f"radius must be an integer >= 1, got {self.radius}")


def footprint(se) -> np.ndarray:
    """Boolean footprint array of a structuring element, centred."""
    r = se.radius
    if isinstance(se, Square):
        return np.ones((2 * r + 1, 2 * r + 1), dtype=bool)
    yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
    return yy * yy + xx * xx <= r * r


def _squared_distance_to(target: np.ndarray) -> np.ndarray:
    """Integer squared Euclidean distance from each pixel to the nearest True pixel."""
    if not target.any():
        return np.full(target.shape, np.iinfo(np.int64).max, dtype=np.int64)
    _, idx = ndimage.distance_transform_edt(~target, return_indices=True)
    rows, cols = np.indices(target.shape)
    dy = idx[0] - rows
    dx = idx[1] - cols
    return dy.astype(np.int64) ** 2 + dx.astype(np.int64) ** 2


def dilate(mask, se) -> np.ndarray:
    """Binary dilation; pixel p is set iff the footprint at p hits the mask."""
    mask = as_mask(mask)
    r = se.radius
    if isinstance(se, Square):
        size = 2 * r + 1
        out = ndimage.maximum_filter1d(mask, size, axis=0, mode="constant", cval=0)
        return ndimage.maximum_filter1d(out, size, axis=1, mode="constant", cval=0)
    if isinstance(se, Disk):
        return _squared_distance_to(mask) <= r * r
    raise TypeError(f"unsupported structuring element {se!r}")


def erode(mask, se) -> np.ndarray:
    """Binary erosion; pixel p survives iff the whole footprint at p is in the mask."""
    mask = as_mask(mask)
    r = se.radius
    if isinstance(se, Square):
        size = 2 * r + 1
        out = ndimage.minimum_filter1d(mask, size, axis=0, mode="constant", cval=0)
        return ndimage.minimum_filter1d(out, size, axis=1, mode="constant", cval=0)
    if isinstance(se, Disk):
        # One ring of padding is enough: the nearest exterior pixel of any
        # in-image pixel lies straight across the border.
        padded = np.pad(~mask, 1, constant_values=True)
        dist2 = _squared_distance_to(padded)[1:-1, 1:-1]
        return dist2 > r * r
    raise TypeError(f"unsupported structuring element {se!r}")


def boundary_band(mask, d: int) -> np.ndarray:
    """Foreground pixels within Euclidean distance ``d`` of background.

    The image exterior counts as background.
    """
    if int(d) != d or d < 1:
        raise ValueError(f"band width must be an integer >= 1, got {d}")
    mask = as_mask(mask)
    return mask & ~erode(mask, Disk(int(d)))
