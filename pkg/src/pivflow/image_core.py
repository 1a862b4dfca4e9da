"""Grayscale frames, image pyramids, spatial gradients, and subpixel sampling.

All intensities are normalized scalars in [0, 1]; arrays are row-major
(height, width) float64. Frames and pyramids are immutable after
construction and safe to share across parallel workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError

# Binomial 3x3 smoothing kernel used for 2:1 downsampling: 1/4 at the
# center, 1/8 at edge neighbors, 1/16 at diagonals. Weights sum to exactly
# 1 so constant images are fixed points of the reduction.
DOWNSAMPLE_KERNEL = np.array(
    [[1.0, 2.0, 1.0],
     [2.0, 4.0, 2.0],
     [1.0, 2.0, 1.0]]
) / 16.0


@dataclass(frozen=True, eq=False)
class ImageFrame:
    """One grayscale frame: a (height, width) grid of intensities in [0, 1]."""

    values: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.values, dtype=np.float64))
        if v.ndim != 2:
            raise DimensionError(f"frame must be 2-D, got shape {v.shape}")
        h, w = v.shape
        if h < 2 or w < 2:
            raise DimensionError(f"frame must be at least 2x2, got {w}x{h}")
        if not np.isfinite(v).all():
            raise ValueError("frame intensities must all be finite")
        if v.min() < 0.0 or v.max() > 1.0:
            raise ValueError("frame intensities must lie in [0, 1]")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True, eq=False)
class GradientField:
    """Per-pixel spatial derivatives of a frame, same (height, width) grid."""

    ix: np.ndarray
    iy: np.ndarray

    def __post_init__(self):
        ix = np.ascontiguousarray(np.asarray(self.ix, dtype=np.float64))
        iy = np.ascontiguousarray(np.asarray(self.iy, dtype=np.float64))
        if ix.ndim != 2 or ix.shape != iy.shape:
            raise DimensionError(
                f"gradient components must share a 2-D shape, got {ix.shape} and {iy.shape}"
            )
        if not (np.isfinite(ix).all() and np.isfinite(iy).all()):
            raise ValueError("gradient values must all be finite")
        ix.setflags(write=False)
        iy.setflags(write=False)
        object.__setattr__(self, "ix", ix)
        object.__setattr__(self, "iy", iy)

    @property
    def shape(self) -> tuple[int, int]:
        return self.ix.shape


@dataclass(frozen=True, eq=False)
class Pyramid:
    """Stack of successively 2:1 downsampled frames; level 0 is full size."""

    levels: tuple[ImageFrame, ...]

    def __post_init__(self):
        if len(self.levels) < 1:
            raise DimensionError("pyramid needs at least one level")
        object.__setattr__(self, "levels", tuple(self.levels))
        for i in range(1, len(self.levels)):
            prev, cur = self.levels[i - 1], self.levels[i]
            if cur.width != -(-prev.width // 2) or cur.height != -(-prev.height // 2):
                raise DimensionError(
                    f"level {i} is {cur.width}x{cur.height}, expected half of "
                    f"{prev.width}x{prev.height} (ceiling)"
                )

    @property
    def depth(self) -> int:
        return len(self.levels)


def downsample(frame: ImageFrame) -> ImageFrame:
    """Reduce a frame 2:1 with the normalized 3x3 binomial kernel.

    Output pixel (x, y) is the kernel-weighted sum of the source 3x3
    neighborhood around (2x, 2y); neighbors falling outside the frame are
    replaced by the nearest border pixel. Output size is the ceiling of
    half the input size.
    """
    h, w = frame.shape
    if w < 4 or h < 4:
        raise DimensionError(f"downsample needs at least 4x4, got {w}x{h}")
    out_h = -(-h // 2)
    out_w = -(-w // 2)
    padded = np.pad(frame.values, 1, mode="edge")
    ys = 2 * np.arange(out_h)
    xs = 2 * np.arange(out_w)
    acc = np.zeros((out_h, out_w))
    for dy in range(3):
        for dx in range(3):
            acc += DOWNSAMPLE_KERNEL[dy, dx] * padded[np.ix_(ys + dy, xs + dx)]
    # Convex combination of in-range values; clip the odd 1-ulp overshoot.
    np.clip(acc, 0.0, 1.0, out=acc)
    return ImageFrame(acc)


def build_pyramid(frame: ImageFrame, requested_depth: int) -> Pyramid:
    """Stack repeated downsamples of ``frame``, depth-clamped so every level
    stays at least 2x2. The realized depth is ``Pyramid.depth``."""
    if requested_depth < 1:
        raise DimensionError(f"requested_depth must be >= 1, got {requested_depth}")
    levels = [frame]
    while len(levels) < requested_depth:
        top = levels[-1]
        if top.width < 4 or top.height < 4:
            break
        levels.append(downsample(top))
    return Pyramid(tuple(levels))


def gradient(frame: ImageFrame) -> GradientField:
    """Spatial derivatives: central differences in the interior, one-sided
    differences on the boundary rows/columns."""
    iy, ix = np.gradient(frame.values)
    return GradientField(ix=ix, iy=iy)


def bilinear_many(values: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Vectorized bilinear lookup with clamp-to-border coordinates.

    ``values`` is a (h, w) grid; ``xs``/``ys`` are same-shaped coordinate
    arrays. Coordinates outside [0, w-1] x [0, h-1] are clamped before
    interpolation, which makes out-of-range taps edge-replicated.
    """
    h, w = values.shape
    x = np.clip(xs, 0.0, w - 1.0)
    y = np.clip(ys, 0.0, h - 1.0)
    x0 = np.minimum(x.astype(np.int64), w - 2)
    y0 = np.minimum(y.astype(np.int64), h - 2)
    fx = x - x0
    fy = y - y0
    v00 = values[y0, x0]
    v01 = values[y0, x0 + 1]
    v10 = values[y0 + 1, x0]
    v11 = values[y0 + 1, x0 + 1]
    return (
        (1.0 - fx) * (1.0 - fy) * v00
        + fx * (1.0 - fy) * v01
        + (1.0 - fx) * fy * v10
        + fx * fy * v11
    )


def sample_bilinear(frame: ImageFrame, x: float, y: float) -> float:
    """Bilinear intensity at a subpixel coordinate, clamped to the border."""
    if not (math.isfinite(x) and math.isfinite(y)):
        raise ValueError(f"sample coordinates must be finite, got ({x}, {y})")
    return float(bilinear_many(frame.values, np.float64(x), np.float64(y)))
