"""Training loop: masked-NMSE objective, best-validation checkpointing.

The objective scores mask-applied predictions, since exported
predictions always have the segmentation mask re-applied; batches are
augmented with random mirror flips and the learning rate follows a
cosine decay.  Training reads only the train and val splits of the
manifest; the test split is never touched here.  The checkpoint keeps the weights with the
lowest validation NMSE and embeds a format version plus an architecture
hash so incompatible checkpoints fail loudly at load time.
"""

from __future__ import annotations

import csv
import logging
import os
import time
from dataclasses import dataclass, asdict

import numpy as np
import torch

from .dataset import SplitDataset
from .model import architecture_hash, build_model, nmse_loss

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 16
    learning_rate: float = 2e-3   # peak rate; decays on a cosine schedule
    base_width: int = 16
    seed: int = 0
    num_workers: int = 0          # 0 = deterministic in-process loading
    val_every: int = 1            # epochs between validation passes
    augment_flips: bool = True    # random mirror flips on training batches
    device: str = "cpu"

    def __post_init__(self):
        if self.epochs < 1:
            raise TrainingError(f"epochs must be >= 1, got {self.epochs}")


class _TorchSplit(torch.utils.data.Dataset):
    def __init__(self, split: SplitDataset):
        self.split = split

    def __len__(self):
        return len(self.split)

    def __getitem__(self, index):
        s = self.split[index]
        return (torch.from_numpy(s.inputs), torch.from_numpy(s.target[None]),
                torch.from_numpy(s.mask[None].astype(np.float32)))


def _augment_flips(x, y, m, generator):
    """Random per-sample mirror flips of a displacement/modulus batch.

    Mirroring is an exact symmetry of isotropic elasticity, so a flipped
    pair is another valid sample: the displacement component along the
    mirrored axis changes sign (channel 0 is lateral, channel 1 is depth).
    """
    draw = torch.rand((x.shape[0], 2), generator=generator)
    lat = draw[:, 0] < 0.5
    if lat.any():
        x[lat] = torch.flip(x[lat], dims=(3,))
        x[lat, 0] = -x[lat, 0]
        y[lat] = torch.flip(y[lat], dims=(3,))
        m[lat] = torch.flip(m[lat], dims=(3,))
    dep = draw[:, 1] < 0.5
    if dep.any():
        x[dep] = torch.flip(x[dep], dims=(2,))
        x[dep, 1] = -x[dep, 1]
        y[dep] = torch.flip(y[dep], dims=(2,))
        m[dep] = torch.flip(m[dep], dims=(2,))
    return x, y, m


def _loader(split, cfg, shuffle, generator=None):
    # drop_last only when shuffling (training): a trailing batch of one
    # sample would break batch statistics at the 1x1 latent
    return torch.utils.data.DataLoader(
        _TorchSplit(split), batch_size=cfg.batch_size, shuffle=shuffle,
        num_workers=cfg.num_workers, generator=generator,
        drop_last=shuffle and len(split) % cfg.batch_size == 1)


@torch.no_grad()
def evaluate(model, loader, device):
    model.eval()
    total, n = 0.0, 0
    for x, y, m in loader:
        x, y, m = x.to(device), y.to(device), m.to(device)
        loss = nmse_loss(model(x) * m, y)
        total += float(loss) * x.shape[0]
        n += x.shape[0]
    return total / max(n, 1)


def save_checkpoint(path, model, extra=None):
    payload = {
        "checkpoint_version": CHECKPOINT_VERSION,
        "architecture_hash": architecture_hash(model),
        "base_width": model.base_width,
        "state_dict": model.state_dict(),
    }
    payload.update(extra or {})
    torch.save(payload, path)


def load_checkpoint(path, device="cpu"):
    payload = torch.load(path, map_location=device, weights_only=False)
    if payload.get("checkpoint_version") != CHECKPOINT_VERSION:
        raise TrainingError(f"{path}: unsupported checkpoint version "
                            f"{payload.get('checkpoint_version')}")
    model = build_model(payload["base_width"]).to(device)
    if architecture_hash(model) != payload["architecture_hash"]:
        raise TrainingError(f"{path}: architecture hash mismatch")
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model, payload


def train(dataset_dir, cfg: TrainConfig, out_dir):
    """Train on the manifest's train split, select on val NMSE.

    Returns (checkpoint path, curve rows).  Also writes curve.csv.
    """
    os.makedirs(out_dir, exist_ok=True)
    torch.manual_seed(cfg.seed)
    np.random.seed(cfg.seed)
    device = torch.device(cfg.device)

    train_split = SplitDataset(dataset_dir, "train")
    val_split = SplitDataset(dataset_dir, "val")
    generator = torch.Generator().manual_seed(cfg.seed)
    aug_generator = torch.Generator().manual_seed(cfg.seed + 1)
    train_loader = _loader(train_split, cfg, shuffle=True, generator=generator)
    val_loader = _loader(val_split, cfg, shuffle=False)

    model = build_model(cfg.base_width).to(device)
    log.info("model: %d parameters, architecture %s",
             model.n_parameters, architecture_hash(model))
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    # Cosine decay to 1% of the peak rate: the large steps that make early
    # progress keep the loss bouncing near the end of a fixed-rate run.
    scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(
        optimizer, T_max=cfg.epochs, eta_min=cfg.learning_rate / 100.0)

    best_val = float("inf")
    ckpt_path = os.path.join(out_dir, "best.ckpt")
    curve = []
    t0 = time.perf_counter()
    for epoch in range(cfg.epochs):
        model.train()
        total, n = 0.0, 0
        for x, y, m in train_loader:
            x, y, m = x.to(device), y.to(device), m.to(device)
            if cfg.augment_flips:
                x, y, m = _augment_flips(x, y, m, aug_generator)
            optimizer.zero_grad()
            # Scored on masked predictions: the exported prediction always
            # has the segmentation mask re-applied, so the masked NMSE is
            # the error of what the pipeline actually produces.
            loss = nmse_loss(model(x) * m, y)
            if not torch.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch} "
                                    f"after {n} samples")
            loss.backward()
            optimizer.step()
            total += float(loss.detach()) * x.shape[0]
            n += x.shape[0]
        train_nmse = total / max(n, 1)
        scheduler.step()

        row = {"epoch": epoch, "train_nmse": train_nmse, "val_nmse": None,
               "elapsed_s": time.perf_counter() - t0}
        if epoch % cfg.val_every == 0 or epoch == cfg.epochs - 1:
            row["val_nmse"] = evaluate(model, val_loader, device)
            if row["val_nmse"] < best_val:
                best_val = row["val_nmse"]
                save_checkpoint(ckpt_path, model,
                                extra={"epoch": epoch, "val_nmse": best_val,
                                       "config": asdict(cfg)})
        curve.append(row)
        log.info("epoch %d: train %.4f val %s", epoch, train_nmse,
                 f"{row['val_nmse']:.4f}" if row["val_nmse"] is not None else "-")

    curve_path = os.path.join(out_dir, "curve.csv")
    with open(curve_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(curve[0]))
        writer.writeheader()
        writer.writerows(curve)
    return ckpt_path, curve
