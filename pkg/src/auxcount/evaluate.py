"""Evaluation and prediction drivers.

Predictions live at the model's output stride. Inputs whose sides are not
divisible by the trunk stride are zero-padded on the right/bottom, and the
ground truth gets the same padding, so predicted and reference maps always
compare on identical grids.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from .config import DataConfig
from .data import DatasetManifest, load_image, save_prediction
from .groundtruth import downsample_targets, generate_density_map
from .metrics import MetricsReport, game, mae_rmse
from .models.network import CountingNetwork


def pad_to_multiple(array: np.ndarray, multiple: int) -> np.ndarray:
    """Zero-pad the last two axes up to the next multiple."""
    h, w = array.shape[-2:]
    pad_h = (-h) % multiple
    pad_w = (-w) % multiple
    if pad_h == 0 and pad_w == 0:
        return array
    widths = [(0, 0)] * (array.ndim - 2) + [(0, pad_h), (0, pad_w)]
    return np.pad(array, widths, mode="constant")


@torch.no_grad()
def forward_image(
    model: CountingNetwork,
    image: np.ndarray,
    device: torch.device,
    density_scale: float = 1.0,
) -> dict[str, np.ndarray | None]:
    """Run one image through the model; density comes back in true count units."""
    model.eval()
    padded = pad_to_multiple(image, model.trunk.total_stride)
    batch = torch.from_numpy(padded[None]).to(device)
    preds = model(batch)
    density = preds["density"][0, 0].cpu().numpy() / density_scale
    crowd = preds["crowd"][0, 0].cpu().numpy() if preds["crowd"] is not None else None
    level = preds["level"][0].cpu().numpy() if preds["level"] is not None else None
    return {"density": density, "crowd": crowd, "level": level}


class _IouTally:
    """Dataset-level IoU: per-class intersection/union sums across images."""

    def __init__(self, classes: list[int]):
        self.classes = classes
        self.inter = {c: 0 for c in classes}
        self.union = {c: 0 for c in classes}

    def add(self, pred: np.ndarray, gt: np.ndarray) -> None:
        for c in self.classes:
            p = pred == c
            g = gt == c
            self.inter[c] += int(np.logical_and(p, g).sum())
            self.union[c] += int(np.logical_or(p, g).sum())

    def mean(self) -> float | None:
        ious = [self.inter[c] / self.union[c] for c in self.classes if self.union[c] > 0]
        return float(np.mean(ious)) if ious else None


def evaluate_model(
    model: CountingNetwork,
    manifest: DatasetManifest,
    data_cfg: DataConfig,
    device: torch.device,
    game_levels: tuple[int, ...] = (0, 1, 2, 3),
    iou: bool = True,
) -> MetricsReport:
    """Full-image metrics over a manifest split.

    Counts are density-map sums on both sides, so the level-0 tiled error in
    the report equals the MAE identically.
    """
    if len(manifest) == 0:
        raise ValueError(f"split {manifest.split!r} is empty")
    stride = model.output_stride
    pairs = []
    pred_maps: list[np.ndarray] = []
    gt_maps: list[np.ndarray] = []
    crowd_tally = _IouTally([0, 1])
    level_tally = _IouTally(list(range(1, data_cfg.levels + 2)))
    saw_crowd = saw_level = False

    for entry in manifest:
        image = load_image(entry.image_path)
        out = forward_image(model, image, device, data_cfg.density_scale)
        gt_full = generate_density_map(entry.annotation.points, entry.size, data_cfg.sigma)
        gt_full = pad_to_multiple(gt_full, model.trunk.total_stride)
        gt_density, gt_crowd, gt_level = downsample_targets(
            gt_full, stride, levels=data_cfg.levels
        )
        pred_maps.append(out["density"].astype(np.float64))
        gt_maps.append(gt_density.astype(np.float64))
        pairs.append((pred_maps[-1].sum(), gt_maps[-1].sum()))
        if iou and out["crowd"] is not None:
            saw_crowd = True
            crowd_tally.add((out["crowd"] >= 0.5).astype(np.int64), gt_crowd.astype(np.int64))
        if iou and out["level"] is not None:
            saw_level = True
            level_tally.add(np.argmax(out["level"], axis=0) + 1, gt_level.astype(np.int64))

    mae, rmse = mae_rmse(pairs)
    game_scores = {level: game(pred_maps, gt_maps, level) for level in game_levels}
    return MetricsReport(
        mae=mae,
        rmse=rmse,
        game=game_scores,
        iou_cs=crowd_tally.mean() if saw_crowd else None,
        iou_ds=level_tally.mean() if saw_level else None,
        n_images=len(manifest),
    )


def predict(
    model: CountingNetwork,
    image_paths: list[Path],
    out_dir: str | Path,
    device: torch.device,
    data_cfg: DataConfig,
    panel: bool = False,
) -> list[dict]:
    """Write density maps, masks, and counts for a batch of images."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    results = []
    for path in image_paths:
        path = Path(path)
        image = load_image(path)
        out = forward_image(model, image, device, data_cfg.density_scale)
        masks = {}
        if out["crowd"] is not None:
            masks["crowd_mask"] = (out["crowd"] >= 0.5).astype(np.uint8)
        if out["level"] is not None:
            masks["level_mask"] = (np.argmax(out["level"], axis=0) + 1).astype(np.uint8)
        written = save_prediction(path.stem, out["density"], masks, out_dir)
        if panel:
            written["panel"] = _panel_figure(image, out, out_dir / f"{path.stem}_panel.png")
        count = float(out["density"].sum())
        results.append(
            {"image_id": path.stem, "count": count, "paths": {k: str(v) for k, v in written.items()}}
        )
    with open(out_dir / "counts.json", "w") as fh:
        json.dump(
            [{"image_id": r["image_id"], "count": r["count"]} for r in results], fh, indent=2
        )
    return results


def _panel_figure(image: np.ndarray, out: dict, path: Path) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    panels = [("input", image.transpose(1, 2, 0), None)]
    panels.append(("density (count=%.1f)" % out["density"].sum(), out["density"], "jet"))
    if out["crowd"] is not None:
        panels.append(("crowd mask", out["crowd"], "gray"))
    if out["level"] is not None:
        panels.append(("density level", np.argmax(out["level"], axis=0) + 1, "viridis"))
    fig, axes = plt.subplots(1, len(panels), figsize=(3.2 * len(panels), 3.2))
    for ax, (title, array, cmap) in zip(np.atleast_1d(axes), panels):
        ax.imshow(array, cmap=cmap)
        ax.set_title(title, fontsize=9)
        ax.axis("off")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path
