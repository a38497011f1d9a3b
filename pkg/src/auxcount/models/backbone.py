"""Adaptively shared backbone: trunk, multi-stage fusion, attention-gated branches."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

# 13 conv layers in 5 blocks; 'M' = 2x2 max pool between blocks.
VGG16_LAYOUT = [64, 64, "M", 128, 128, "M", 256, 256, 256, "M", 512, 512, 512, "M", 512, 512, 512]


def kaiming_init(module: nn.Module) -> None:
    for m in module.modules():
        if isinstance(m, nn.Conv2d):
            nn.init.kaiming_normal_(m.weight, mode="fan_out", nonlinearity="relu")
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.BatchNorm2d):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)


class Vgg16Trunk(nn.Module):
    """The 13 convolutional layers of VGG-16, exposed as 5 stages.

    Stage s is the output of conv block s (after its ReLU, before the next
    pool), so stage strides are [1, 2, 4, 8, 16] with channel widths
    [64, 128, 256, 512, 512]. Inputs must be divisible by the total stride.
    """

    stage_channels = (64, 128, 256, 512, 512)
    stage_strides = (1, 2, 4, 8, 16)
    total_stride = 16

    def __init__(self):
        super().__init__()
        blocks: list[nn.Sequential] = []
        layers: list[nn.Module] = []
        in_ch = 3
        for item in VGG16_LAYOUT:
            if item == "M":
                blocks.append(nn.Sequential(*layers))
                layers = [nn.MaxPool2d(2, 2)]
            else:
                layers += [nn.Conv2d(in_ch, item, 3, padding=1), nn.ReLU(inplace=True)]
                in_ch = item
        blocks.append(nn.Sequential(*layers))
        self.blocks = nn.ModuleList(blocks)
        kaiming_init(self)

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        return self.forward_until(x, len(self.blocks) - 1)

    def forward_until(self, x: torch.Tensor, last_stage: int) -> list[torch.Tensor]:
        """Stages 0..last_stage; lets callers skip blocks past their deepest tap."""
        h, w = x.shape[-2:]
        if h % self.total_stride or w % self.total_stride:
            raise ValueError(
                f"input {h}x{w} not divisible by trunk stride {self.total_stride}"
            )
        stages = []
        for block in self.blocks[: last_stage + 1]:
            x = block(x)
            stages.append(x)
        return stages

    def load_pretrained(self, path: str) -> int:
        """Copy conv weights, in order, from a saved state dict.

        Accepts either this trunk's own state dict or any flat dict whose conv
        parameters appear in VGG-16 order (e.g. a torchvision `features`
        export). Returns the number of conv layers loaded.
        """
        state = torch.load(path, map_location="cpu", weights_only=True)
        if isinstance(state, dict) and "model_state" in state:
            state = state["model_state"]
        weights = [(k, v) for k, v in state.items() if k.endswith("weight") and v.ndim == 4]
        biases = {k[: -len("weight")] + "bias": v for k, v in state.items() if k.endswith("bias")}
        own = [m for block in self.blocks for m in block if isinstance(m, nn.Conv2d)]
        loaded = 0
        for conv, (key, weight) in zip(own, weights):
            if conv.weight.shape != weight.shape:
                raise ValueError(
                    f"pretrained conv {key} has shape {tuple(weight.shape)}, "
                    f"expected {tuple(conv.weight.shape)}"
                )
            with torch.no_grad():
                conv.weight.copy_(weight)
                bias_key = key[: -len("weight")] + "bias"
                if bias_key in biases:
                    conv.bias.copy_(biases[bias_key])
            loaded += 1
        return loaded


TRUNKS = {"vgg16_truncated": Vgg16Trunk}


def build_trunk(name: str) -> nn.Module:
    if name not in TRUNKS:
        raise ValueError(f"unknown trunk {name!r}; available: {sorted(TRUNKS)}")
    return TRUNKS[name]()


class FeatureFuseBlock(nn.Module):
    """Fold deep-stage features back into shallow stages, pairwise from the deepest.

    Each step bilinearly upsamples the running deep features to the next
    shallower stage, channel-matches them with a 1x1 conv, concatenates with
    that stage, and blends with a 3x3 conv. A final 1x1 projection emits the
    configured output width at the shallowest fused resolution.
    """

    def __init__(self, stage_channels: list[int], out_channels: int):
        super().__init__()
        if len(stage_channels) < 2:
            raise ValueError("feature fusion needs at least 2 stages")
        # match[i]/blend[i] handle the step from stage i+1 down onto stage i
        self.match = nn.ModuleList(
            nn.Conv2d(stage_channels[i + 1], stage_channels[i], 1)
            for i in range(len(stage_channels) - 1)
        )
        self.blend = nn.ModuleList(
            nn.Conv2d(2 * stage_channels[i], stage_channels[i], 3, padding=1)
            for i in range(len(stage_channels) - 1)
        )
        self.project = nn.Conv2d(stage_channels[0], out_channels, 1)
        kaiming_init(self)

    def forward(self, stages: list[torch.Tensor]) -> torch.Tensor:
        if len(stages) < 2:
            raise ValueError("feature fusion needs at least 2 stages")
        batch = stages[0].shape[0]
        if any(s.shape[0] != batch for s in stages):
            raise ValueError("stages have mismatched batch sizes")
        x = stages[-1]
        for i in range(len(stages) - 2, -1, -1):
            x = F.interpolate(x, size=stages[i].shape[-2:], mode="bilinear", align_corners=False)
            x = self.match[i](x)
            x = F.relu(self.blend[i](torch.cat([stages[i], x], dim=1)))
        return F.relu(self.project(x))


class AttentionGate(nn.Module):
    """Channel gate from globally pooled context.

    g = sigmoid(conv1x1(relu(bn(conv1x1(GAP(x)))))), g in (0,1)^C, and the
    output is x * g broadcast over space — gating never grows a feature.
    """

    def __init__(self, channels: int):
        super().__init__()
        self.squeeze = nn.Conv2d(channels, channels, 1)
        self.bn = nn.BatchNorm2d(channels)
        self.expand = nn.Conv2d(channels, channels, 1)
        kaiming_init(self)

    def gate(self, x: torch.Tensor) -> torch.Tensor:
        g = self.squeeze(F.adaptive_avg_pool2d(x, 1))
        if self.bn.training and g.shape[0] == 1:
            # pooled vectors have one value per channel; a singleton batch has
            # no batch statistics, so fall back to the running estimates
            g = F.batch_norm(
                g, self.bn.running_mean, self.bn.running_var,
                self.bn.weight, self.bn.bias, training=False, eps=self.bn.eps,
            )
        else:
            g = self.bn(g)
        g = self.expand(F.relu(g))
        return torch.sigmoid(g)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x * self.gate(x)


class TaskBranch(nn.Module):
    """One task branch over the shared fused map.

    Optionally gates the shared features (task-adaptive mode), concatenates
    any upstream branches' features through a 1x1 fusion conv, and emits the
    branch feature map with a 3x3 conv.
    """

    def __init__(self, in_channels: int, extra_channels: int, out_channels: int, adaptive: bool):
        super().__init__()
        self.gate = AttentionGate(in_channels) if adaptive else None
        self.fuse = (
            nn.Conv2d(in_channels + extra_channels, in_channels, 1) if extra_channels else None
        )
        self.conv = nn.Conv2d(in_channels, out_channels, 3, padding=1)
        kaiming_init(self.conv)
        if self.fuse is not None:
            kaiming_init(self.fuse)

    def forward(self, shared: torch.Tensor, extras: tuple[torch.Tensor, ...] = ()) -> torch.Tensor:
        x = self.gate(shared) if self.gate is not None else shared
        if self.fuse is not None:
            x = F.relu(self.fuse(torch.cat([x, *extras], dim=1)))
        return F.relu(self.conv(x))
