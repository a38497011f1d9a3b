"""The full counting network: shared backbone, task branches, reasoning, heads.

Branch order is fixed: the crowd-segmentation branch reads the shared fused
map first, the density-level branch additionally consumes the crowd branch's
features, and the density branch consumes both. Structural ablation switches
(`aux_cs`, `aux_ds`, `adaptive`, `use_gcn`) remove parts without touching the
rest of the wiring; with everything off this degenerates to a single-column
density regressor.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..config import ModelConfig
from .backbone import TRUNKS, FeatureFuseBlock, TaskBranch, build_trunk, kaiming_init
from .gcn import GraphReasoning

CHECKPOINT_FORMAT_VERSION = 1


class CountingNetwork(nn.Module):
    """Density regression with optional auxiliary segmentation branches.

    forward() returns a dict with:
      density     (B, 1, H/s, W/s)  nonnegative regression map
      crowd       (B, 1, H/s, W/s)  foreground probability, or None
      level       (B, Lc, H/s, W/s) per-pixel class probabilities, or None
    where s is ``output_stride`` (the shallowest fused stage's stride).
    """

    def __init__(self, cfg: ModelConfig, levels: int = 4, reason_grid: tuple[int, int] = (16, 16)):
        super().__init__()
        if cfg.use_gcn and not (cfg.aux_cs and cfg.aux_ds):
            raise ValueError("use_gcn requires both auxiliary branches")
        self.cfg = cfg
        self.level_classes = levels + 1
        self.trunk = build_trunk(cfg.trunk)
        if len(cfg.fuse_stages) < 2:
            raise ValueError("fuse_stages needs at least 2 stages")
        stage_ch = [self.trunk.stage_channels[i] for i in cfg.fuse_stages]
        self.fuse_stages = list(cfg.fuse_stages)
        self.output_stride = self.trunk.stage_strides[min(cfg.fuse_stages)]
        self.ffb = FeatureFuseBlock(stage_ch, cfg.branch_channels)

        c = cfg.branch_channels
        self.crowd_branch = TaskBranch(c, 0, c, cfg.adaptive) if cfg.aux_cs else None
        self.level_branch = (
            TaskBranch(c, c if cfg.aux_cs else 0, c, cfg.adaptive) if cfg.aux_ds else None
        )
        extra = (c if cfg.aux_cs else 0) + (c if cfg.aux_ds else 0)
        self.density_branch = TaskBranch(c, extra, c, cfg.adaptive)

        self.crowd_head = nn.Conv2d(c, 1, 1) if cfg.aux_cs else None
        self.level_head = nn.Conv2d(c, self.level_classes, 1) if cfg.aux_ds else None
        self.density_head = nn.Conv2d(c, 1, 1)
        for head in (self.crowd_head, self.level_head, self.density_head):
            if head is not None:
                kaiming_init(head)

        self.reasoning = (
            GraphReasoning(
                channels=c,
                level_classes=self.level_classes,
                num_vertices=cfg.num_vertices,
                grid_size=reason_grid,
                adjacency_init_std=cfg.adjacency_init_std,
            )
            if cfg.use_gcn
            else None
        )
        if cfg.pretrained_path:
            self.trunk.load_pretrained(cfg.pretrained_path)

    def forward(self, image: torch.Tensor, return_features: bool = False) -> dict:
        stages = self.trunk.forward_until(image, max(self.fuse_stages))
        shared = self.ffb([stages[i] for i in self.fuse_stages])

        crowd_feat = crowd = None
        if self.crowd_branch is not None:
            crowd_feat = self.crowd_branch(shared)
            crowd = torch.sigmoid(self.crowd_head(crowd_feat))

        level_feat = level = None
        if self.level_branch is not None:
            extras = (crowd_feat,) if crowd_feat is not None else ()
            level_feat = self.level_branch(shared, extras)
            level = torch.softmax(self.level_head(level_feat), dim=1)

        extras = tuple(f for f in (crowd_feat, level_feat) if f is not None)
        density_feat = self.density_branch(shared, extras)

        refined = density_feat
        if self.reasoning is not None:
            refined = self.reasoning(density_feat, crowd, level)
        density = F.relu(self.density_head(refined))

        out = {"density": density, "crowd": crowd, "level": level}
        if return_features:
            out.update(
                shared=shared,
                crowd_feat=crowd_feat,
                level_feat=level_feat,
                density_feat=density_feat,
                refined_feat=refined,
            )
        return out


def build_model(cfg: ModelConfig, levels: int = 4, crop_size: int = 128) -> CountingNetwork:
    """Construct the network, sizing the reasoning grid from the training crop."""
    if cfg.trunk not in TRUNKS:
        raise ValueError(f"unknown trunk {cfg.trunk!r}; available: {sorted(TRUNKS)}")
    stride = TRUNKS[cfg.trunk].stage_strides[min(cfg.fuse_stages)]
    side = max(1, crop_size // stride // cfg.gcn_pool)
    return CountingNetwork(cfg, levels=levels, reason_grid=(side, side))
