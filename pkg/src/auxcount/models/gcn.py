"""Graph reasoning over density regions.

Pixels of the (mask-gated) density features are projected onto a small set of
graph vertices, weighted by a pairwise density-level dependency matrix; one
first-order spectral graph convolution propagates information across the
vertices; a 1x1 reprojection adds the result back onto the density features
as a residual.

The dependency matrix is HW x HW, so reasoning runs on a fixed, pooled grid
(``grid_size``): inputs are adaptively average-pooled down to it and the
residual is bilinearly upsampled back. With grid_size equal to the input
resolution the pooling is the identity and the math below is exact.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .backbone import kaiming_init


class GraphReasoning(nn.Module):
    """Density-level aware vertex projection + one graph convolution, residual."""

    def __init__(
        self,
        channels: int,
        level_classes: int,
        num_vertices: int = 16,
        grid_size: tuple[int, int] = (16, 16),
        adjacency_init_std: float = 1e-3,
        weight_init_std: float = 1e-3,
    ):
        super().__init__()
        if num_vertices < 1:
            raise ValueError("num_vertices must be >= 1")
        self.grid_size = (int(grid_size[0]), int(grid_size[1]))
        hw = self.grid_size[0] * self.grid_size[1]
        self.num_vertices = num_vertices
        # pairwise affinity heads over the level predictions (keep class width)
        self.affinity_query = nn.Conv2d(level_classes, level_classes, 1)
        self.affinity_key = nn.Conv2d(level_classes, level_classes, 1)
        # pixel -> vertex embedding and vertex -> pixel reprojection
        self.to_vertices = nn.Conv2d(channels, num_vertices, 1)
        self.from_vertices = nn.Conv2d(num_vertices, channels, 1)
        kaiming_init(self)
        # near-zero adjacency and graph weights: (I - A) ~ I and the residual
        # starts negligible, so an already-useful density path is preserved
        self.adjacency = nn.Parameter(torch.randn(hw, hw) * adjacency_init_std)
        self.graph_weight = nn.Parameter(torch.randn(num_vertices, num_vertices) * weight_init_std)

    def compute_dependency(self, level_prob: torch.Tensor) -> torch.Tensor:
        """Row-stochastic (B, HW, HW) affinity between pixels' density levels."""
        q = self.affinity_query(level_prob).flatten(2)  # (B, Lc, HW)
        k = self.affinity_key(level_prob).flatten(2)
        logits = torch.bmm(q.transpose(1, 2), k)  # (B, HW, HW)
        return torch.softmax(logits, dim=-1)

    def project_vertices(
        self, density_feat: torch.Tensor, crowd_prob: torch.Tensor, dependency: torch.Tensor
    ) -> torch.Tensor:
        """(B, K, HW) vertex features from mask-gated, dependency-mixed pixels."""
        masked = density_feat * crowd_prob  # broadcast over channels
        emb = self.to_vertices(masked).flatten(2)  # (B, K, HW)
        # out[k, p] = sum_q dependency[p, q] * emb[k, q]
        return torch.bmm(dependency, emb.transpose(1, 2)).transpose(1, 2)

    def graph_convolve(self, vertices: torch.Tensor) -> torch.Tensor:
        """First-order graph convolution: ReLU((I - A) @ V^T @ W), back to (B, K, HW)."""
        hw = vertices.shape[-1]
        eye = torch.eye(hw, device=vertices.device, dtype=vertices.dtype)
        lap = eye - self.adjacency
        nodes = vertices.transpose(1, 2)  # (B, HW, K): one node per pixel slot
        out = torch.matmul(torch.matmul(lap, nodes), self.graph_weight)
        return F.relu(out).transpose(1, 2)

    def reproject(self, vertices: torch.Tensor, density_feat: torch.Tensor) -> torch.Tensor:
        """Residual add of the reasoned vertex features onto the density features."""
        b, k, hw = vertices.shape
        h, w = self.grid_size
        delta = self.from_vertices(vertices.reshape(b, k, h, w))
        if delta.shape[-2:] != density_feat.shape[-2:]:
            delta = F.interpolate(
                delta, size=density_feat.shape[-2:], mode="bilinear", align_corners=False
            )
        return density_feat + delta

    def forward(
        self, density_feat: torch.Tensor, crowd_prob: torch.Tensor, level_prob: torch.Tensor
    ) -> torch.Tensor:
        feat = self._pool(density_feat)
        crowd = self._pool(crowd_prob)
        level = self._pool(level_prob)
        dependency = self.compute_dependency(level)
        vertices = self.project_vertices(feat, crowd, dependency)
        vertices = self.graph_convolve(vertices)
        return self.reproject(vertices, density_feat)

    def _pool(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-2:] == self.grid_size:
            return x
        return F.adaptive_avg_pool2d(x, self.grid_size)
