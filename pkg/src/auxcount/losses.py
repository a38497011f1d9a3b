"""Training objective: two segmentation cross-entropies plus two density terms.

The contrastive density term compares local density *differences* instead of
raw values: eight fixed 3x3 difference kernels (+1 centre, -1 at one
neighbor), applied with dilation so each response spans a 5x5 neighborhood
at the default rate. Every kernel sums to zero, so the term ignores global
offsets and penalizes only mismatched regional structure.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F

from .config import LossConfig

PROB_EPS = 1e-7

# all eight unit offsets in kernel-grid steps; with dilation d the actual
# pixel offsets are these times d
NEIGHBOR_OFFSETS = (
    (-1, -1), (-1, 0), (-1, 1),
    (0, -1), (0, 1),
    (1, -1), (1, 0), (1, 1),
)


def contrastive_kernel_bank(dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """(8, 1, 3, 3) difference kernels: +1 centre, -1 at one neighbor each."""
    bank = torch.zeros(len(NEIGHBOR_OFFSETS), 1, 3, 3, dtype=dtype)
    for i, (dr, dc) in enumerate(NEIGHBOR_OFFSETS):
        bank[i, 0, 1, 1] = 1.0
        bank[i, 0, 1 + dr, 1 + dc] = -1.0
    return bank


def contrastive_responses(density: torch.Tensor, dilation: int = 2) -> torch.Tensor:
    """Per-kernel difference responses, zero-padded to keep the input size.

    density: (B, 1, H, W) -> (B, 8, H, W).
    """
    bank = contrastive_kernel_bank(dtype=density.dtype).to(density.device)
    return F.conv2d(density, bank, padding=dilation, dilation=dilation)


def contrastive_density_loss(
    pred: torch.Tensor,
    target: torch.Tensor,
    dilation: int = 2,
    reduction: str = "mean",
    interior_only: bool = False,
) -> torch.Tensor:
    """Squared error between predicted and target difference responses.

    Summed over the eight kernels; "mean" divides by the number of counted
    pixels, "sum" leaves the raw total. ``interior_only`` drops the
    ``dilation``-wide border whose responses depend on the zero padding; on
    the interior the zero-sum kernels make the loss exactly invariant to
    adding a global constant to either map.
    """
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    diff = contrastive_responses(pred, dilation) - contrastive_responses(target, dilation)
    if interior_only:
        if diff.shape[-1] <= 2 * dilation or diff.shape[-2] <= 2 * dilation:
            raise ValueError("map too small for an interior crop")
        diff = diff[..., dilation:-dilation, dilation:-dilation]
    per_pixel = diff.pow(2).sum(dim=1)  # sum over the 8 kernels
    if reduction == "mean":
        return per_pixel.mean()
    if reduction == "sum":
        return per_pixel.sum()
    raise ValueError(f"unknown reduction {reduction!r}")


def crowd_seg_loss(pred_prob: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean binary cross-entropy; probabilities clamped away from {0, 1}."""
    if pred_prob.shape != mask.shape:
        raise ValueError(f"shape mismatch: {tuple(pred_prob.shape)} vs {tuple(mask.shape)}")
    p = pred_prob.clamp(PROB_EPS, 1.0 - PROB_EPS)
    mask = mask.to(p.dtype)
    return -(mask * p.log() + (1.0 - mask) * (1.0 - p).log()).mean()


def level_seg_loss(pred_prob: torch.Tensor, classes: torch.Tensor) -> torch.Tensor:
    """Mean categorical cross-entropy against 1-based class labels.

    pred_prob: (B, Lc, H, W) softmax probabilities; classes: (B, H, W) in 1..Lc.
    """
    num_classes = pred_prob.shape[1]
    classes = classes.long()
    if classes.min() < 1 or classes.max() > num_classes:
        raise ValueError(
            f"class index out of range: saw [{int(classes.min())}, {int(classes.max())}], "
            f"expected 1..{num_classes}"
        )
    p = pred_prob.clamp(PROB_EPS, 1.0 - PROB_EPS)
    picked = p.gather(1, (classes - 1).unsqueeze(1)).squeeze(1)
    return -picked.log().mean()


def density_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean squared pixel error."""
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    return (pred - target.to(pred.dtype)).pow(2).mean()


class CountingLoss:
    """Combine the four terms: L_cs + L_ds + gamma * (L_dp + L_dcd).

    Auxiliary weights are fixed at 1; ``gamma`` (default 2) trades off the
    density terms. Ablation flags zero a term out entirely — no value and no
    gradient. Missing predictions (branch ablated away) contribute zero.
    """

    def __init__(self, cfg: LossConfig | None = None):
        self.cfg = cfg or LossConfig()

    def __call__(self, preds: dict, targets: dict) -> dict[str, torch.Tensor]:
        cfg = self.cfg
        device = preds["density"].device
        zero = torch.zeros((), device=device, dtype=preds["density"].dtype)

        l_cs = zero
        if preds.get("crowd") is not None and not cfg.no_lcs:
            l_cs = crowd_seg_loss(preds["crowd"], targets["crowd"])
        l_ds = zero
        if preds.get("level") is not None and not cfg.no_lds:
            l_ds = level_seg_loss(preds["level"], targets["level"])
        l_dp = density_loss(preds["density"], targets["density"])
        l_dcd = zero
        if not cfg.no_dcd:
            l_dcd = contrastive_density_loss(
                preds["density"], targets["density"], cfg.dcd_dilation, cfg.dcd_reduction
            )

        components = {"cs": l_cs, "ds": l_ds, "dp": l_dp, "dcd": l_dcd}
        for name, value in components.items():
            if not math.isfinite(float(value.detach())):
                raise FloatingPointError(f"loss component {name!r} is non-finite: {value}")
        total = l_cs + l_ds + cfg.gamma * (l_dp + l_dcd)
        components["total"] = total
        return components
