"""Dataset manifests, point annotations, and prediction persistence.

A manifest is a JSON-Lines file, one image per line::

    {"id": "scene_0000", "image": "images/scene_0000.png",
     "size": [128, 128], "points": [[31.5, 64.25], [90.0, 12.0]]}

``image`` is resolved relative to the manifest's directory. ``points`` are
(row, col) pixel coordinates with sub-pixel precision; they must lie inside
[0, H) x [0, W). ``size`` is optional — when absent the image header is read.

Reads are pure and safe to share across data workers; callers writing into a
single output directory are expected to serialize writes themselves.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
from PIL import Image


class ManifestError(ValueError):
    """A manifest file or one of its records failed validation."""


@dataclass(frozen=True)
class PointAnnotation:
    """Object centre coordinates for one image, (row, col) in pixels."""

    image_id: str
    points: np.ndarray  # (N, 2) float64, possibly empty

    @property
    def count(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class ManifestEntry:
    image_path: Path
    annotation: PointAnnotation
    size: tuple[int, int]  # (H, W)

    @property
    def image_id(self) -> str:
        return self.annotation.image_id


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry] = field(default_factory=list)
    split: str = "train"

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


def _as_points(raw, image_id: str, where: str) -> np.ndarray:
    points = np.asarray(raw, dtype=np.float64)
    if points.size == 0:
        return np.zeros((0, 2), dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 2:
        raise ManifestError(f"{where}: points for {image_id!r} must be a list of [row, col] pairs")
    if not np.isfinite(points).all():
        raise ManifestError(f"{where}: non-finite point coordinate for {image_id!r}")
    return points


def validate_points(points: np.ndarray, size: tuple[int, int], image_id: str, where: str = "") -> None:
    """Reject any point outside [0, H) x [0, W).

    Points exactly on the right/bottom edge are rejected rather than clamped;
    silent clamping would hide annotation bugs.
    """
    if len(points) == 0:
        return
    h, w = size
    bad_row = (points[:, 0] < 0) | (points[:, 0] >= h)
    bad_col = (points[:, 1] < 0) | (points[:, 1] >= w)
    bad = bad_row | bad_col
    if bad.any():
        i = int(np.argmax(bad))
        raise ManifestError(
            f"{where}: point ({points[i, 0]}, {points[i, 1]}) of {image_id!r} "
            f"outside image bounds {h}x{w}"
        )


def image_size(path: Path) -> tuple[int, int]:
    with Image.open(path) as im:
        w, h = im.size
    return h, w


def load_manifest(path: str | Path, split: str = "train") -> DatasetManifest:
    """Parse and validate a JSON-Lines manifest.

    Raises ManifestError with the offending line number for malformed records,
    unresolvable image paths, duplicate ids, or out-of-bounds points. An empty
    file is a valid, empty manifest.
    """
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest file not found: {path}")
    root = path.parent
    entries: list[ManifestEntry] = []
    seen: set[str] = set()
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            where = f"{path}:{lineno}"
            try:
                record = json.loads(line)
            except json.JSONDecodeError as err:
                raise ManifestError(f"{where}: malformed record ({err.msg})") from err
            if not isinstance(record, dict) or "image" not in record:
                raise ManifestError(f"{where}: record must be an object with an 'image' field")
            image_path = (root / record["image"]).resolve()
            if not image_path.is_file():
                raise ManifestError(f"{where}: image not found: {image_path}")
            image_id = str(record.get("id", Path(record["image"]).stem))
            if image_id in seen:
                raise ManifestError(f"{where}: duplicate image id {image_id!r}")
            seen.add(image_id)
            if "size" in record:
                size = (int(record["size"][0]), int(record["size"][1]))
            else:
                size = image_size(image_path)
            points = _as_points(record.get("points", []), image_id, where)
            validate_points(points, size, image_id, where)
            entries.append(
                ManifestEntry(
                    image_path=image_path,
                    annotation=PointAnnotation(image_id=image_id, points=points),
                    size=size,
                )
            )
    return DatasetManifest(entries=entries, split=split)


def save_manifest(manifest: DatasetManifest, path: str | Path) -> Path:
    """Write a manifest back out; load_manifest(save_manifest(m)) == m on entries."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    root = path.parent.resolve()
    with open(path, "w") as fh:
        for entry in manifest.entries:
            try:
                image = str(entry.image_path.resolve().relative_to(root))
            except ValueError:
                image = str(entry.image_path)
            record = {
                "id": entry.image_id,
                "image": image,
                "size": [entry.size[0], entry.size[1]],
                "points": entry.annotation.points.tolist(),
            }
            fh.write(json.dumps(record) + "\n")
    return path


def load_image(path: str | Path) -> np.ndarray:
    """Load an image as float32 (3, H, W) in [0, 1]."""
    with Image.open(path) as im:
        rgb = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return np.ascontiguousarray(rgb.transpose(2, 0, 1))


def _to_uint8(grid: np.ndarray) -> np.ndarray:
    grid = np.asarray(grid, dtype=np.float64)
    lo, hi = float(grid.min()), float(grid.max())
    if hi <= lo:
        return np.zeros(grid.shape, dtype=np.uint8)
    return np.round((grid - lo) / (hi - lo) * 255.0).astype(np.uint8)


def save_prediction(
    image_id: str,
    density_map: np.ndarray,
    masks: Mapping[str, np.ndarray] | None,
    out_dir: str | Path,
) -> dict[str, Path]:
    """Persist one image's predictions.

    The density map is stored losslessly as float32 ``.npy`` plus an 8-bit
    PNG visualization; masks get PNG visualizations (binary masks as 0/255,
    class masks spread over the gray range). Returns name -> written path.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    density = np.asarray(density_map, dtype=np.float32)
    written: dict[str, Path] = {}

    npy_path = out_dir / f"{image_id}_density.npy"
    np.save(npy_path, density)
    written["density"] = npy_path

    png_path = out_dir / f"{image_id}_density.png"
    Image.fromarray(_to_uint8(density)).save(png_path)
    written["density_png"] = png_path

    for name, mask in (masks or {}).items():
        mask_path = out_dir / f"{image_id}_{name}.png"
        Image.fromarray(_to_uint8(mask)).save(mask_path)
        written[name] = mask_path
    return written


def load_density(path: str | Path) -> np.ndarray:
    return np.load(path)
