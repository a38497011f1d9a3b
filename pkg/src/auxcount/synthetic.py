"""Synthetic counting scenes for desk-scale training and verification.

Each scene is a textured background with warm-tinted radial blobs at the
annotated points, plus cool-tinted unannotated distractor marks (streaks and
diffuse spots) that a counting model must learn to ignore. Rendering is fully
driven by one numpy generator, so a given seed reproduces byte-identical
images.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .data import DatasetManifest, load_manifest, save_manifest

WARM_TINT = np.array([1.0, 0.78, 0.55])
COOL_TINT = np.array([0.55, 0.75, 1.0])
POINT_MARGIN = 12  # keeps Gaussian ground-truth mass inside the frame


def _stamp(
    image: np.ndarray,
    row: float,
    col: float,
    radius: float,
    color: np.ndarray,
    aspect: float = 1.0,
    angle: float = 0.0,
) -> None:
    """Add an (optionally elongated) Gaussian bump in place."""
    h, w = image.shape[1:]
    reach = int(np.ceil(3.0 * radius * max(1.0, aspect)))
    r0, r1 = max(0, int(row) - reach), min(h, int(row) + reach + 1)
    c0, c1 = max(0, int(col) - reach), min(w, int(col) + reach + 1)
    if r0 >= r1 or c0 >= c1:
        return
    rr = np.arange(r0, r1, dtype=np.float64)[:, None] - row
    cc = np.arange(c0, c1, dtype=np.float64)[None, :] - col
    ca, sa = np.cos(angle), np.sin(angle)
    u = ca * rr + sa * cc
    v = -sa * rr + ca * cc
    bump = np.exp(-(u**2 / (aspect**2) + v**2) / (2.0 * radius**2))
    image[:, r0:r1, c0:c1] += color[:, None, None] * bump[None]


def render_scene(
    rng: np.random.Generator, size: int, count: int, distractors: bool = True
) -> tuple[np.ndarray, np.ndarray]:
    """One scene: float32 (3, size, size) image in [0, 1] and (count, 2) points."""
    h = w = size
    yy, xx = np.mgrid[0:h, 0:w] / float(size)
    field = np.zeros((h, w))
    for _ in range(5):
        fy, fx = rng.uniform(0.5, 3.0, size=2)
        py, px = rng.uniform(0.0, 2.0 * np.pi, size=2)
        field += rng.uniform(0.3, 1.0) * np.sin(2 * np.pi * fy * yy + py) * np.sin(
            2 * np.pi * fx * xx + px
        )
    span = field.max() - field.min()
    field = (field - field.min()) / (span if span > 0 else 1.0)
    image = rng.uniform(0.10, 0.30, size=3)[:, None, None] + 0.15 * field[None]

    # clustered point process: most objects gather around a few hot spots
    n_clusters = int(rng.integers(1, 4))
    centers = rng.uniform(POINT_MARGIN, size - POINT_MARGIN, size=(n_clusters, 2))
    points = []
    for _ in range(count):
        if rng.random() < 0.7:
            p = centers[rng.integers(0, n_clusters)] + rng.normal(0.0, size / 10.0, size=2)
        else:
            p = rng.uniform(POINT_MARGIN, size - POINT_MARGIN, size=2)
        points.append(np.clip(p, POINT_MARGIN, size - POINT_MARGIN - 1e-3))
    points = np.array(points).reshape(-1, 2)

    for row, col in points:
        radius = rng.uniform(2.0, 3.5)
        amp = rng.uniform(0.45, 0.80)
        _stamp(image, row, col, radius, amp * WARM_TINT * rng.uniform(0.9, 1.1, size=3))

    if distractors:
        for _ in range(int(rng.poisson(max(1.0, count / 3.0)))):
            row, col = rng.uniform(4, size - 5, size=2)
            radius = rng.uniform(2.0, 5.0)
            amp = rng.uniform(0.30, 0.60)
            _stamp(
                image,
                row,
                col,
                radius,
                amp * COOL_TINT * rng.uniform(0.9, 1.1, size=3),
                aspect=rng.uniform(1.0, 3.0),
                angle=rng.uniform(0.0, np.pi),
            )

    image += rng.normal(0.0, 0.02, size=image.shape)
    return np.clip(image, 0.0, 1.0).astype(np.float32), points


def make_synthetic(
    n: int,
    count_range: tuple[int, int] = (10, 50),
    seed: int = 0,
    out_dir: str | Path = "synthetic",
    size: int = 128,
    distractors: bool = True,
) -> DatasetManifest:
    """Render n scenes under out_dir/images and write out_dir/manifest.jsonl."""
    if n < 1:
        raise ValueError("need n >= 1 scenes")
    lo, hi = int(count_range[0]), int(count_range[1])
    if not (0 <= lo <= hi):
        raise ValueError(f"bad count range {count_range}")
    out_dir = Path(out_dir)
    image_dir = out_dir / "images"
    image_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    records = []
    for i in range(n):
        count = int(rng.integers(lo, hi + 1))
        image, points = render_scene(rng, size, count, distractors)
        name = f"scene_{i:04d}"
        array = np.round(image.transpose(1, 2, 0) * 255.0).astype(np.uint8)
        Image.fromarray(array).save(image_dir / f"{name}.png")
        records.append((name, points))

    manifest_path = out_dir / "manifest.jsonl"
    with open(manifest_path, "w") as fh:
        for name, points in records:
            fh.write(
                json.dumps(
                    {
                        "id": name,
                        "image": f"images/{name}.png",
                        "size": [size, size],
                        "points": points.tolist(),
                    }
                )
                + "\n"
            )
    return load_manifest(manifest_path)


def write_split_manifests(
    manifest: DatasetManifest,
    out_dir: str | Path,
    splits: dict[str, int],
    seed: int = 0,
) -> dict[str, Path]:
    """Partition a manifest into named splits (e.g. {"train": 48, "val": 16})."""
    total = sum(splits.values())
    if total > len(manifest):
        raise ValueError(f"splits need {total} entries, manifest has {len(manifest)}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(manifest))
    out_dir = Path(out_dir)
    written: dict[str, Path] = {}
    start = 0
    for name, size in splits.items():
        part = DatasetManifest(
            entries=[manifest.entries[i] for i in order[start : start + size]], split=name
        )
        written[name] = save_manifest(part, out_dir / f"manifest_{name}.jsonl")
        start += size
    return written
