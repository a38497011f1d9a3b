"""Training dataset: manifest entries -> augmented crops with stride-matched targets."""

from __future__ import annotations

import numpy as np
import torch
from torch.utils.data import Dataset

from .config import DataConfig
from .data import DatasetManifest, load_image
from .groundtruth import (
    downsample_targets,
    generate_density_map,
    random_crop_and_flip,
    sum_pool,
)


class CountingDataset(Dataset):
    """Random crops of manifest images plus density/crowd/level supervision.

    Images and full-resolution density maps are cached in memory (desk-scale
    sets are small). Targets are produced at ``output_stride`` so they align
    with the model's prediction maps. Augmentation draws from a generator
    seeded at construction; with num_workers=0 two identically seeded runs
    produce identical batches. For multi-worker loading, give each worker its
    own seed via a worker_init_fn.
    """

    def __init__(
        self,
        manifest: DatasetManifest,
        cfg: DataConfig,
        output_stride: int = 2,
        augment: bool = True,
        seed: int = 0,
    ):
        if len(manifest) == 0:
            raise ValueError(f"manifest for split {manifest.split!r} is empty")
        self.manifest = manifest
        self.cfg = cfg
        self.output_stride = output_stride
        self.augment = augment
        self._rng = np.random.default_rng(seed)
        self._cache: dict[int, tuple[np.ndarray, np.ndarray, tuple[float, float]]] = {}

    def __len__(self) -> int:
        return len(self.manifest)

    def _load(self, index: int):
        if index not in self._cache:
            entry = self.manifest.entries[index]
            image = load_image(entry.image_path)
            density = generate_density_map(
                entry.annotation.points, entry.size, self.cfg.sigma
            )
            # reference bounds for per-image level normalization, taken at the
            # target stride so they live on the same scale as pooled crops
            pooled = sum_pool(density.astype(np.float64), self.output_stride)
            bounds = (float(pooled.min()), float(pooled.max()))
            self._cache[index] = (image, density, bounds)
        return self._cache[index]

    def __getitem__(self, index: int) -> dict:
        image, density, image_bounds = self._load(index)
        if self.augment:
            crop = (self.cfg.crop_size, self.cfg.crop_size)
            image, targets = random_crop_and_flip(
                image, {"density": density}, crop, self.cfg.flip_p, self._rng
            )
            density = targets["density"]
        bounds = image_bounds if self.cfg.level_norm == "per_image" else None
        pooled, crowd, level = downsample_targets(
            density, self.output_stride, levels=self.cfg.levels, bounds=bounds
        )
        return {
            "image": torch.from_numpy(image),
            "density": torch.from_numpy(pooled[None].astype(np.float32)),
            "crowd": torch.from_numpy(crowd[None].astype(np.float32)),
            "level": torch.from_numpy(level.astype(np.int64)),
            "count": torch.tensor(float(self.manifest.entries[index].annotation.count)),
            "image_id": self.manifest.entries[index].image_id,
        }
