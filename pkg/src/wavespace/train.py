"""Training loop, learning-rate schedule, and checkpoint persistence.

Defaults mirror the reference recipe: SGD with momentum 0.9, no weight
decay, lr 0.1 decayed by 10x every 30 epochs, 80 epochs, batch size 16.
The desk profile only shrinks epochs; everything is seed-deterministic on
a single device.
"""

from __future__ import annotations

import copy
import csv
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .data import DatasetSplit
from .masks import SpaceMask, make_proxy_label
from .metrics import acc_space
from .model import ModelConfig, build_model, weighted_ce_loss

WEIGHTS_FILE = "weights.pt"
METADATA_FILE = "metadata.json"
METRICS_FILE = "metrics.csv"


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 0.0
    epochs: int = 80
    lr_decay_factor: float = 0.1
    lr_decay_every: int = 30
    batch_size: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError(f"invalid training config: {self}")
        if self.lr_decay_every < 1 or not (0 < self.lr_decay_factor <= 1):
            raise ValueError(f"invalid lr schedule: {self}")

    def lr_at(self, epoch: int) -> float:
        return self.lr * self.lr_decay_factor ** (epoch // self.lr_decay_every)


def desk_train_config(epochs: int = 30, seed: int = 0) -> TrainConfig:
    """Reference schedule shrunk to desk scale (epochs only)."""
    return TrainConfig(epochs=epochs, seed=seed)


@dataclass
class Checkpoint:
    weights: dict
    epoch: int
    model_config: ModelConfig
    train_config: TrainConfig
    metrics_history: list = field(default_factory=list)


def split_to_tensors(split: DatasetSplit, mask_h: SpaceMask, mask_v: SpaceMask):
    """Stack a split into (inputs, labels_h, labels_v) training tensors."""
    xs, hs, vs = [], [], []
    for sample in split:
        proxy = make_proxy_label(sample, mask_h, mask_v)
        xs.append(sample.pixels.astype(np.float32))
        hs.append(proxy.horizontal)
        vs.append(proxy.vertical)
    x = torch.from_numpy(np.stack(xs)).unsqueeze(1)
    labels_h = torch.from_numpy(np.stack(hs)).long()
    labels_v = torch.from_numpy(np.stack(vs)).long()
    return x, labels_h, labels_v


def _batch_acc(logits_h, logits_v, labels_h, labels_v) -> list[float]:
    pred_h = logits_h.argmax(dim=1).cpu().numpy()
    pred_v = logits_v.argmax(dim=1).cpu().numpy()
    lh = labels_h.cpu().numpy()
    lv = labels_v.cpu().numpy()

    class _Pair:
        def __init__(self, h, v):
            self.horizontal, self.vertical = h, v

    return [
        acc_space(pred_h[i], pred_v[i], _Pair(lh[i], lv[i]))
        for i in range(pred_h.shape[0])
    ]


def save_checkpoint(ckpt: Checkpoint, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    torch.save(ckpt.weights, directory / WEIGHTS_FILE)
    meta = {
        "epoch": ckpt.epoch,
        "model_config": asdict(ckpt.model_config),
        "train_config": asdict(ckpt.train_config),
        "metrics_history": ckpt.metrics_history,
    }
    (directory / METADATA_FILE).write_text(json.dumps(meta, indent=2), encoding="utf-8")
    return directory


def load_checkpoint(directory):
    """Rebuild the model and checkpoint saved by `save_checkpoint`."""
    directory = Path(directory)
    meta_path = directory / METADATA_FILE
    if not meta_path.is_file():
        raise FileNotFoundError(f"no checkpoint metadata at {meta_path}")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    mc = meta["model_config"]
    mc["input_size"] = tuple(mc["input_size"])
    model_config = ModelConfig(**mc)
    train_config = TrainConfig(**meta["train_config"])
    weights = torch.load(directory / WEIGHTS_FILE, map_location="cpu", weights_only=True)
    model = build_model(model_config)
    model.load_state_dict(weights)
    model.eval()
    ckpt = Checkpoint(
        weights=weights,
        epoch=meta["epoch"],
        model_config=model_config,
        train_config=train_config,
        metrics_history=[tuple(row) for row in meta["metrics_history"]],
    )
    return model, ckpt


def train(
    model,
    split: DatasetSplit,
    masks: tuple[SpaceMask, SpaceMask],
    tcfg: TrainConfig,
    out_dir=None,
) -> Checkpoint:
    """Run the SGD schedule on one split; deterministic given the seed.

    Writes `metrics.csv` (epoch,loss,acc_space) and a rolling `latest/`
    checkpoint into ``out_dir`` when given; returns the final checkpoint
    either way. Raises with diagnostics if the loss turns non-finite.
    """
    if len(split) == 0:
        raise ValueError("cannot train on an empty split")
    mask_h, mask_v = masks
    torch.manual_seed(tcfg.seed)
    x, labels_h, labels_v = split_to_tensors(split, mask_h, mask_v)
    n = x.shape[0]
    optimizer = torch.optim.SGD(
        model.parameters(),
        lr=tcfg.lr,
        momentum=tcfg.momentum,
        weight_decay=tcfg.weight_decay,
    )
    shuffler = torch.Generator().manual_seed(tcfg.seed)

    writer = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        metrics_path = out_dir / METRICS_FILE
        new_file = not metrics_path.exists()
        writer = metrics_path.open("a", newline="", encoding="utf-8")
        csv_writer = csv.writer(writer)
        if new_file:
            csv_writer.writerow(["epoch", "loss", "acc_space"])

    history: list[tuple[int, float, float]] = []
    try:
        for epoch in range(tcfg.epochs):
            lr = tcfg.lr_at(epoch)
            for group in optimizer.param_groups:
                group["lr"] = lr
            model.train()
            order = torch.randperm(n, generator=shuffler)
            total_loss = 0.0
            accs: list[float] = []
            for batch_idx, start in enumerate(range(0, n, tcfg.batch_size)):
                idx = order[start : start + tcfg.batch_size]
                xb = x[idx]
                lh, lv = labels_h[idx], labels_v[idx]
                optimizer.zero_grad()
                logits_h, logits_v = model(xb)
                loss = weighted_ce_loss(logits_h, logits_v, (lh, lv))
                if not torch.isfinite(loss):
                    raise RuntimeError(
                        f"non-finite loss {loss.item()} at epoch {epoch}, "
                        f"batch {batch_idx}, lr {lr}"
                    )
                loss.backward()
                optimizer.step()
                total_loss += float(loss.item()) * len(idx)
                accs.extend(
                    _batch_acc(logits_h.detach(), logits_v.detach(), lh, lv)
                )
            epoch_loss = total_loss / n
            epoch_acc = float(np.mean(accs))
            history.append((epoch, epoch_loss, epoch_acc))
            if writer is not None:
                csv_writer.writerow([epoch, f"{epoch_loss:.8f}", f"{epoch_acc:.8f}"])
                writer.flush()
                latest = Checkpoint(
                    weights=copy.deepcopy(model.state_dict()),
                    epoch=epoch + 1,
                    model_config=model.cfg,
                    train_config=tcfg,
                    metrics_history=list(history),
                )
                save_checkpoint(latest, out_dir / "latest")
    finally:
        if writer is not None:
            writer.close()

    final = Checkpoint(
        weights=copy.deepcopy(model.state_dict()),
        epoch=tcfg.epochs,
        model_config=model.cfg,
        train_config=tcfg,
        metrics_history=history,
    )
    if out_dir is not None:
        save_checkpoint(final, Path(out_dir) / "final")
    model.eval()
    return final


@torch.no_grad()
def evaluate(
    model,
    split: DatasetSplit,
    masks: tuple[SpaceMask, SpaceMask],
    batch_size: int = 16,
) -> dict:
    """Mean weighted loss and position accuracy of a model on a split."""
    if len(split) == 0:
        raise ValueError("cannot evaluate on an empty split")
    mask_h, mask_v = masks
    x, labels_h, labels_v = split_to_tensors(split, mask_h, mask_v)
    model.eval()
    n = x.shape[0]
    total_loss = 0.0
    accs: list[float] = []
    for start in range(0, n, batch_size):
        sl = slice(start, min(start + batch_size, n))
        logits_h, logits_v = model(x[sl])
        loss = weighted_ce_loss(logits_h, logits_v, (labels_h[sl], labels_v[sl]))
        total_loss += float(loss.item()) * (sl.stop - sl.start)
        accs.extend(_batch_acc(logits_h, logits_v, labels_h[sl], labels_v[sl]))
    return {
        "loss": total_loss / n,
        "acc_space": float(np.mean(accs)),
        "per_sample_acc": accs,
    }
