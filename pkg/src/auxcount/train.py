"""Training loop: seeded, cosine-scheduled, checkpointed, with loss-curve plots."""

from __future__ import annotations

import json
import math
import os
import random
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch.utils.data import DataLoader

from .config import RunConfig, config_from_dict, save_config
from .data import load_manifest
from .dataset import CountingDataset
from .losses import CountingLoss
from .models.network import CHECKPOINT_FORMAT_VERSION, CountingNetwork, build_model


class TrainingDiverged(RuntimeError):
    """A loss component went non-finite; the last good checkpoint is kept."""

    def __init__(self, message: str, checkpoint: Path | None):
        super().__init__(message)
        self.checkpoint = checkpoint


@dataclass
class TrainResult:
    best_checkpoint: Path
    last_checkpoint: Path
    history: dict


def resolve_device(override: str | None = None) -> torch.device:
    """Compute device: explicit override, else the AUXCOUNT_DEVICE env var, else CPU."""
    name = override or os.environ.get("AUXCOUNT_DEVICE", "cpu")
    return torch.device(name)


def seed_everything(seed: int) -> None:
    random.seed(seed)
    np.random.seed(seed % 2**32)
    torch.manual_seed(seed)


def cosine_lr(epoch: int, total_epochs: int, lr_init: float, lr_min: float = 0.0) -> float:
    """Closed-form cosine decay from lr_init at epoch 0 to lr_min at total_epochs."""
    if total_epochs <= 0:
        return lr_init
    t = min(max(epoch, 0), total_epochs) / total_epochs
    return lr_min + 0.5 * (lr_init - lr_min) * (1.0 + math.cos(math.pi * t))


def save_checkpoint(
    path: str | Path,
    model: CountingNetwork,
    optimizer: torch.optim.Optimizer | None,
    epoch: int,
    cfg: RunConfig,
    history: dict | None = None,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "model_state": model.state_dict(),
            "optimizer_state": optimizer.state_dict() if optimizer is not None else None,
            "epoch": epoch,
            "config": cfg.to_dict(),
            "history": history or {},
        },
        path,
    )
    return path


def load_checkpoint(path: str | Path, device: torch.device | str = "cpu"):
    """Rebuild the model from a checkpoint; returns (model, cfg, payload)."""
    payload = torch.load(path, map_location=device, weights_only=True)
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format version {version!r}")
    cfg = config_from_dict(payload["config"])
    model = build_model(cfg.model, cfg.data.levels, cfg.data.crop_size)
    model.load_state_dict(payload["model_state"])
    model.to(device)
    return model, cfg, payload


def _plot_history(history: dict, out_path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, (ax_loss, ax_val) = plt.subplots(1, 2, figsize=(11, 4))
    epochs = history["epoch"]
    for name in ("total", "cs", "ds", "dp", "dcd"):
        ax_loss.plot(epochs, history["train"][name], label=name)
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("loss")
    ax_loss.set_yscale("log")
    ax_loss.legend(fontsize=8)
    ax_loss.set_title("training loss components")
    if history["val"]["epoch"]:
        ax_val.plot(history["val"]["epoch"], history["val"]["mae"], marker="o")
        ax_val.set_xlabel("epoch")
        ax_val.set_ylabel("val MAE")
        ax_val.set_title("validation MAE")
    else:
        ax_val.axis("off")
    fig.tight_layout()
    fig.savefig(out_path, dpi=110)
    plt.close(fig)


def train(cfg: RunConfig, device: str | None = None, quiet: bool = False) -> TrainResult:
    """Run the full training schedule described by ``cfg``.

    Keeps two checkpoints in cfg.out_dir: ``last.pt`` (refreshed every epoch)
    and ``best.pt`` (lowest validation MAE so far). Loss components are
    recorded per step and per epoch in history.json, and loss curves are
    rendered to loss_curves.png.
    """
    from .evaluate import evaluate_model  # local import: avoids a cycle

    cfg.validate()
    seed_everything(cfg.optim.seed)
    dev = resolve_device(device)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out_dir / "config.yaml")

    train_manifest = load_manifest(cfg.data.train_manifest, "train")
    if len(train_manifest) == 0:
        raise ValueError(f"training manifest {cfg.data.train_manifest} is empty")
    val_manifest = (
        load_manifest(cfg.data.val_manifest, "val") if cfg.data.val_manifest else None
    )

    model = build_model(cfg.model, cfg.data.levels, cfg.data.crop_size).to(dev)
    dataset = CountingDataset(
        train_manifest,
        cfg.data,
        output_stride=model.output_stride,
        augment=True,
        seed=cfg.optim.seed,
    )
    loader = DataLoader(
        dataset,
        batch_size=cfg.optim.batch_size,
        shuffle=True,
        num_workers=cfg.optim.num_workers,
        generator=torch.Generator().manual_seed(cfg.optim.seed),
        drop_last=False,
    )
    optimizer = torch.optim.Adam(
        model.parameters(), lr=cfg.optim.lr, weight_decay=cfg.optim.weight_decay
    )
    def lr_factor(epoch: int) -> float:
        if cfg.optim.schedule != "cosine":
            return 1.0
        return cosine_lr(epoch, cfg.optim.epochs, cfg.optim.lr, cfg.optim.lr_min) / cfg.optim.lr

    scheduler = torch.optim.lr_scheduler.LambdaLR(optimizer, lr_factor)
    loss_fn = CountingLoss(cfg.loss)

    history: dict = {
        "epoch": [],
        "lr": [],
        "train": {name: [] for name in ("total", "cs", "ds", "dp", "dcd")},
        "val": {"epoch": [], "mae": [], "rmse": []},
        "steps": [],
    }
    last_path = save_checkpoint(out_dir / "last.pt", model, optimizer, -1, cfg, history)
    best_path = out_dir / "best.pt"
    best_mae = math.inf
    scale = cfg.data.density_scale

    for epoch in range(cfg.optim.epochs):
        model.train()
        sums: dict[str, float] = defaultdict(float)
        n_steps = 0
        for step, batch in enumerate(loader):
            image = batch["image"].to(dev)
            targets = {
                "density": batch["density"].to(dev) * scale,
                "crowd": batch["crowd"].to(dev),
                "level": batch["level"].to(dev),
            }
            preds = model(image)
            try:
                losses = loss_fn(preds, targets)
            except FloatingPointError as err:
                raise TrainingDiverged(
                    f"epoch {epoch} step {step}: {err}; last good checkpoint at {last_path}",
                    checkpoint=last_path,
                ) from err
            optimizer.zero_grad()
            losses["total"].backward()
            optimizer.step()
            record = {name: float(v.detach()) for name, v in losses.items()}
            record.update(epoch=epoch, step=step)
            history["steps"].append(record)
            for name in ("total", "cs", "ds", "dp", "dcd"):
                sums[name] += record[name]
            n_steps += 1
            if not quiet and step % max(1, cfg.log_every) == 0:
                print(
                    f"[epoch {epoch:3d} step {step:4d}] "
                    + " ".join(f"{k}={record[k]:.5f}" for k in ("total", "cs", "ds", "dp", "dcd"))
                )

        history["epoch"].append(epoch)
        history["lr"].append(optimizer.param_groups[0]["lr"])
        for name in ("total", "cs", "ds", "dp", "dcd"):
            history["train"][name].append(sums[name] / max(1, n_steps))
        scheduler.step()

        if val_manifest is not None and (epoch + 1) % cfg.val_every == 0:
            model.eval()
            report = evaluate_model(
                model, val_manifest, cfg.data, dev, game_levels=(), iou=False
            )
            history["val"]["epoch"].append(epoch)
            history["val"]["mae"].append(report.mae)
            history["val"]["rmse"].append(report.rmse)
            if not quiet:
                print(f"[epoch {epoch:3d}] val MAE {report.mae:.3f} RMSE {report.rmse:.3f}")
            if report.mae < best_mae:
                best_mae = report.mae
                save_checkpoint(best_path, model, optimizer, epoch, cfg, history)

        last_path = save_checkpoint(out_dir / "last.pt", model, optimizer, epoch, cfg, history)

    if not best_path.exists():
        save_checkpoint(best_path, model, optimizer, cfg.optim.epochs - 1, cfg, history)

    with open(out_dir / "history.json", "w") as fh:
        json.dump(history, fh)
    try:
        _plot_history(history, out_dir / "loss_curves.png")
    except Exception as err:  # plotting must never kill a finished run
        if not quiet:
            print(f"plotting failed: {err}")
    return TrainResult(best_checkpoint=best_path, last_checkpoint=last_path, history=history)
