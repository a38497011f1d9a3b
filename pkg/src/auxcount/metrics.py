"""Counting and segmentation metrics: MAE, RMSE, grid-tiled MAE, mask IoU.

Counts are real-valued density-map sums, never rounded. The grid-tiled error
partitions each map into 2^level x 2^level near-equal tiles and sums absolute
per-tile count differences, so spatially misplaced mass is penalized even
when the global count is right; at level 0 it coincides with MAE exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


def mae_rmse(pairs: Iterable[tuple[float, float]]) -> tuple[float, float]:
    """Mean absolute and root mean squared error over (predicted, actual) counts."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("mae_rmse needs at least one count pair")
    diffs = np.array([float(p) - float(a) for p, a in pairs], dtype=np.float64)
    mae = float(np.mean(np.abs(diffs)))
    rmse = float(math.sqrt(np.mean(diffs**2)))
    return mae, rmse


def tile_bounds(size: int, parts: int) -> list[int]:
    """Tile boundaries floor(k * size / parts): full cover, no overlap."""
    return [(k * size) // parts for k in range(parts + 1)]


def game(
    pred_maps: Sequence[np.ndarray], gt_maps: Sequence[np.ndarray], level: int
) -> float:
    """Grid-tiled absolute counting error, averaged over images."""
    if level < 0:
        raise ValueError("level must be >= 0")
    if len(pred_maps) != len(gt_maps):
        raise ValueError("pred_maps and gt_maps differ in length")
    if not pred_maps:
        raise ValueError("game needs at least one map pair")
    parts = 2**level
    errors = []
    for pred, gt in zip(pred_maps, gt_maps):
        if pred.shape != gt.shape:
            raise ValueError(f"map shape mismatch: {pred.shape} vs {gt.shape}")
        h, w = pred.shape
        if h < parts or w < parts:
            raise ValueError(f"map {h}x{w} too small for 2^{level} tiles per side")
        rows = tile_bounds(h, parts)
        cols = tile_bounds(w, parts)
        err = 0.0
        for i in range(parts):
            for j in range(parts):
                tile_p = pred[rows[i] : rows[i + 1], cols[j] : cols[j + 1]]
                tile_g = gt[rows[i] : rows[i + 1], cols[j] : cols[j + 1]]
                err += abs(float(tile_p.sum()) - float(tile_g.sum()))
        errors.append(err)
    return float(np.mean(errors))


def _as_classes(mask: np.ndarray) -> np.ndarray:
    """Normalize a mask to integer class labels.

    Float (H, W) or (1, H, W) maps are thresholded at 0.5 into {0, 1};
    float (C, H, W) maps (C > 1) are argmaxed into 1..C, matching 1-based
    level classes. Integer arrays pass through.
    """
    mask = np.asarray(mask)
    if np.issubdtype(mask.dtype, np.floating):
        if mask.ndim == 3 and mask.shape[0] > 1:
            return (np.argmax(mask, axis=0) + 1).astype(np.int64)
        return (mask.reshape(mask.shape[-2:]) >= 0.5).astype(np.int64)
    if mask.ndim == 3:
        mask = mask.reshape(mask.shape[-2:])
    return mask.astype(np.int64)


def mask_iou(
    pred_mask: np.ndarray, gt_mask: np.ndarray, classes: Iterable[int] | None = None
) -> float:
    """Mean over classes of intersection-over-union.

    Classes whose union is empty in both masks are excluded from the mean;
    if every requested class has an empty union this raises.
    """
    pred = _as_classes(pred_mask)
    gt = _as_classes(gt_mask)
    if pred.shape != gt.shape:
        raise ValueError(f"mask shape mismatch: {pred.shape} vs {gt.shape}")
    if classes is None:
        classes = np.union1d(np.unique(pred), np.unique(gt))
    ious = []
    for c in classes:
        p = pred == c
        g = gt == c
        union = np.logical_or(p, g).sum()
        if union == 0:
            continue
        ious.append(float(np.logical_and(p, g).sum()) / float(union))
    if not ious:
        raise ValueError("all class unions are empty")
    return float(np.mean(ious))


@dataclass
class MetricsReport:
    mae: float
    rmse: float
    game: dict[int, float] = field(default_factory=dict)
    iou_cs: float | None = None
    iou_ds: float | None = None
    n_images: int = 0

    def to_json(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = {
            "n_images": self.n_images,
            "mae": self.mae,
            "rmse": self.rmse,
            "game": {str(k): v for k, v in sorted(self.game.items())},
            "iou_cs": self.iou_cs,
            "iou_ds": self.iou_ds,
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")
        return path

    @classmethod
    def from_json(cls, path: str | Path) -> "MetricsReport":
        with open(path) as fh:
            payload = json.load(fh)
        return cls(
            mae=payload["mae"],
            rmse=payload["rmse"],
            game={int(k): v for k, v in payload.get("game", {}).items()},
            iou_cs=payload.get("iou_cs"),
            iou_ds=payload.get("iou_ds"),
            n_images=payload.get("n_images", 0),
        )

    def table(self) -> str:
        lines = [
            f"images        {self.n_images}",
            f"MAE           {self.mae:.4f}",
            f"RMSE          {self.rmse:.4f}",
        ]
        for level in sorted(self.game):
            lines.append(f"GAME({level})       {self.game[level]:.4f}")
        if self.iou_cs is not None:
            lines.append(f"IoU (crowd)   {self.iou_cs:.4f}")
        if self.iou_ds is not None:
            lines.append(f"IoU (level)   {self.iou_ds:.4f}")
        return "\n".join(lines)
