"""Supervision targets derived from point annotations.

Three targets come out of one set of points:

* density map — each point contributes a unit-mass Gaussian stamp; the sum
  of the map is the object count (minus whatever mass falls off the image).
* crowd mask — indicator(density > 0), separating object pixels from
  background.
* density-level mask — the density range of the image (or crop) split into
  ``levels`` equal bins, giving per-pixel ordinal classes 1..levels+1; the
  per-image minimum maps to class 1 and the maximum to levels+1.

Everything here is a pure function of its inputs plus an explicit RNG, so
data workers can run these in parallel with per-worker seeds.
"""

from __future__ import annotations

import math
from typing import Mapping

import numpy as np

# Stamp support half-width, in sigmas. Mass outside the window (~1.3e-4 of a
# unit stamp) is dropped, not folded back in: stamps are normalized by the
# analytic constant only, so border losses stay measurable.
TRUNCATE_SIGMAS = 4.0


def gaussian_stamp_window(center: float, sigma: float, size: int) -> tuple[int, int]:
    """Inclusive-exclusive index range covered by a stamp along one axis."""
    lo = max(0, int(math.ceil(center - TRUNCATE_SIGMAS * sigma)))
    hi = min(size, int(math.floor(center + TRUNCATE_SIGMAS * sigma)) + 1)
    return lo, hi


def generate_density_map(
    points: np.ndarray, shape: tuple[int, int], sigma: float
) -> np.ndarray:
    """Stamp a normalized Gaussian at each (row, col) point.

    Sub-pixel centres are honored: the kernel is evaluated at integer pixel
    coordinates relative to the exact centre. Returns float32 (H, W) >= 0.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    h, w = int(shape[0]), int(shape[1])
    if h <= 0 or w <= 0:
        raise ValueError(f"shape must be positive, got {shape}")
    density = np.zeros((h, w), dtype=np.float64)
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    norm = 1.0 / (2.0 * math.pi * sigma * sigma)
    inv_two_var = 1.0 / (2.0 * sigma * sigma)
    for row, col in points:
        r0, r1 = gaussian_stamp_window(row, sigma, h)
        c0, c1 = gaussian_stamp_window(col, sigma, w)
        if r0 >= r1 or c0 >= c1:
            continue
        rr = np.arange(r0, r1, dtype=np.float64) - row
        cc = np.arange(c0, c1, dtype=np.float64) - col
        stamp = np.exp(-(rr[:, None] ** 2 + cc[None, :] ** 2) * inv_two_var)
        density[r0:r1, c0:c1] += stamp * norm
    return density.astype(np.float32)


def generate_crowd_mask(density: np.ndarray) -> np.ndarray:
    """Binary mask, 1 exactly where the density is positive."""
    return (np.asarray(density) > 0).astype(np.uint8)


def generate_density_level_mask(
    density: np.ndarray,
    levels: int = 4,
    bounds: tuple[float, float] | None = None,
) -> np.ndarray:
    """Discretize density into ordinal classes 1..levels+1.

    Per pixel: class = min(floor((d - lo) / (hi - lo) * levels + 1), levels + 1)
    with (lo, hi) the density min/max — of this map by default, or of a larger
    reference map via ``bounds`` (used for per-image normalization of crops).
    A constant map (hi == lo) is all class 1, the least-dense label.
    """
    if levels < 1:
        raise ValueError(f"levels must be >= 1, got {levels}")
    density = np.asarray(density, dtype=np.float64)
    if bounds is None:
        lo, hi = float(density.min()), float(density.max())
    else:
        lo, hi = float(bounds[0]), float(bounds[1])
    if hi <= lo:
        return np.ones(density.shape, dtype=np.uint8)
    norm = np.clip((density - lo) / (hi - lo), 0.0, 1.0)
    classes = np.floor(norm * levels + 1.0)
    return np.minimum(classes, levels + 1).astype(np.uint8)


def random_crop_and_flip(
    image: np.ndarray,
    targets: Mapping[str, np.ndarray],
    crop: tuple[int, int],
    flip_p: float,
    rng: np.random.Generator,
) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Take one random crop and maybe one horizontal flip, identically on all arrays.

    Arrays may be (H, W) or (C, H, W); they must share spatial shape. The crop
    must fit inside the image. Deterministic given the generator state.
    """
    ch, cw = int(crop[0]), int(crop[1])
    h, w = image.shape[-2:]
    if ch > h or cw > w:
        raise ValueError(f"crop {crop} larger than image {h}x{w}")
    for name, arr in targets.items():
        if arr.shape[-2:] != (h, w):
            raise ValueError(f"target {name!r} shape {arr.shape} does not match image {h}x{w}")
    top = int(rng.integers(0, h - ch + 1))
    left = int(rng.integers(0, w - cw + 1))
    flip = bool(rng.random() < flip_p)

    def transform(arr: np.ndarray) -> np.ndarray:
        out = arr[..., top : top + ch, left : left + cw]
        if flip:
            out = out[..., ::-1]
        return np.ascontiguousarray(out)

    return transform(image), {name: transform(arr) for name, arr in targets.items()}


def sum_pool(grid: np.ndarray, factor: int) -> np.ndarray:
    """Downsample (H, W) by summing factor x factor blocks; preserves the total."""
    if factor == 1:
        return np.asarray(grid)
    h, w = grid.shape[-2:]
    if h % factor or w % factor:
        raise ValueError(f"shape {h}x{w} not divisible by pooling factor {factor}")
    return grid.reshape(h // factor, factor, w // factor, factor).sum(axis=(1, 3))


def downsample_targets(
    density: np.ndarray,
    factor: int,
    levels: int = 4,
    bounds: tuple[float, float] | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Bring supervision down to the model's output stride.

    Density is sum-pooled (count preserved exactly), and the crowd/level masks
    are regenerated from the pooled density so their defining invariants keep
    holding at the new resolution.
    """
    pooled = sum_pool(np.asarray(density, dtype=np.float64), factor).astype(np.float32)
    crowd = generate_crowd_mask(pooled)
    level = generate_density_level_mask(pooled, levels=levels, bounds=bounds)
    return pooled, crowd, level
