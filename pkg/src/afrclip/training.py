"""Adapter-only training on an auxiliary dataset.

The backbone stays frozen; the visual/text adapters, the rectification
blocks and the prompt bank are optimised with Adam under the schedule
``lr0 / (epoch + 1)``. The objective is image-level BCE plus focal and dice
losses on the fused heat map.
"""

from __future__ import annotations

import json
import logging
import math
import shutil
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from afrclip.config import RunConfig, TrainConfig
from afrclip.dataio import DatasetManifest, SampleRecord, check_protocol, load_sample

log = logging.getLogger(__name__)

EPS = 1e-7


class NumericError(RuntimeError):
    """Loss or gradients became non-finite."""


def lr_at(epoch: int, lr0: float = 0.001) -> float:
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return lr0 / (epoch + 1)


def bce_loss(p: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    p = p.clamp(EPS, 1 - EPS)
    return -(y * torch.log(p) + (1 - y) * torch.log(1 - p)).mean()


def focal_loss(p: torch.Tensor, y: torch.Tensor, gamma: float = 2.0) -> torch.Tensor:
    p = p.clamp(EPS, 1 - EPS)
    pos = y * (1 - p) ** gamma * torch.log(p)
    neg = (1 - y) * p ** gamma * torch.log(1 - p)
    return -(pos + neg).mean()


def dice_loss(p: torch.Tensor, y: torch.Tensor, smooth: float = 1.0) -> torch.Tensor:
    """Soft dice per sample, averaged; ``p`` and ``y`` are ``[B, H, W]``."""
    inter = (p * y).flatten(1).sum(1)
    denom = p.flatten(1).sum(1) + y.flatten(1).sum(1)
    return (1 - (2 * inter + smooth) / (denom + smooth)).mean()


def compute_loss(image_score: torch.Tensor, heatmap: torch.Tensor, labels: torch.Tensor, masks: torch.Tensor,
                 cfg: TrainConfig | None = None) -> tuple[torch.Tensor, dict[str, float]]:
    cfg = cfg if cfg is not None else TrainConfig()
    if heatmap.shape != masks.shape:
        raise ValueError(f"heat map {tuple(heatmap.shape)} vs mask {tuple(masks.shape)}")
    labels = labels.to(image_score.dtype)
    masks = masks.to(heatmap.dtype)
    parts = {
        "bce": bce_loss(image_score, labels),
        "focal": focal_loss(heatmap, masks, cfg.focal_gamma),
        "dice": dice_loss(heatmap, masks),
    }
    total = parts["bce"] + cfg.lambda_focal * parts["focal"] + cfg.lambda_dice * parts["dice"]
    if not torch.isfinite(total):
        diag = {
            "image_score": [float(image_score.min()), float(image_score.max())],
            "heatmap": [float(heatmap.min()), float(heatmap.max())],
            **{k: float(v) for k, v in parts.items()},
        }
        raise NumericError(f"non-finite loss: {diag}")
    return total, {k: float(v.detach()) for k, v in parts.items()}


def stratified_split(records: list[SampleRecord], fraction: float, seed: int) -> tuple[list, list]:
    """Hold out ``fraction`` of each label group for validation."""
    rng = np.random.default_rng(seed)
    train, val = [], []
    for label in (0, 1):
        group = [r for r in records if r.label == label]
        idx = rng.permutation(len(group))
        n_val = int(round(fraction * len(group))) if len(group) > 1 else 0
        val += [group[i] for i in idx[:n_val]]
        train += [group[i] for i in idx[n_val:]]
    key = {r.sample_id: i for i, r in enumerate(records)}
    return sorted(train, key=lambda r: key[r.sample_id]), sorted(val, key=lambda r: key[r.sample_id])


def collate(manifest: DatasetManifest, records: list[SampleRecord], size: int, dtype: torch.dtype, pool=None):
    """Stack a batch; ``pool`` (an executor) decodes images concurrently, order preserved."""
    mapper = pool.map if pool is not None else map
    samples = list(mapper(lambda r: load_sample(manifest, r, size), records))
    images = torch.from_numpy(np.stack([s.image for s in samples])).to(dtype)
    masks = torch.from_numpy(np.stack([s.mask for s in samples])).to(dtype)
    labels = torch.tensor([s.label for s in samples], dtype=dtype)
    return images, masks, labels, [s.class_name for s in samples]


@dataclass
class TrainResult:
    best_checkpoint: Path | None
    last_checkpoint: Path | None
    history: list[dict] = field(default_factory=list)


def _check_dataset(manifest: DatasetManifest) -> None:
    if len(manifest) == 0:
        raise ValueError("training dataset is empty")
    labels = {r.label for r in manifest.records}
    if labels != {0, 1}:
        raise ValueError("training dataset needs both normal and anomalous samples")
    missing = [r.sample_id for r in manifest.records if r.label == 1 and r.mask is None]
    if missing:
        raise ValueError(f"anomalous samples without masks: {missing[:3]}")


def _evaluate_loss(model, manifest, records, cfg: RunConfig) -> float:
    if not records:
        return float("nan")
    total, n = 0.0, 0
    with torch.no_grad():
        for i in range(0, len(records), cfg.train.batch_size):
            batch = records[i:i + cfg.train.batch_size]
            images, masks, labels, names = collate(manifest, batch, cfg.backbone.image_size, model.backbone.dtype)
            pred = model(images, names)
            loss, _ = compute_loss(pred.image_score, pred.heatmap, labels, masks, cfg.train)
            total += float(loss) * len(batch)
            n += len(batch)
    return total / n


def train(cfg: RunConfig, manifest: DatasetManifest, model, out_dir: str | Path | None = None) -> TrainResult:
    """Optimise ``model``'s trainable parameters in place and write checkpoints.

    Writes ``epoch_XXX/`` every ``train.save_every`` epochs, ``last/``,
    ``best/`` (lowest validation loss, or last epoch when no validation split)
    and ``train_log.jsonl``.
    """
    tc = cfg.train
    _check_dataset(manifest)
    if cfg.data.test_id:
        check_protocol(manifest.dataset_id, cfg.data.test_id)
    out = Path(out_dir if out_dir is not None else tc.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(tc.seed)
    rng = np.random.default_rng(tc.seed)
    train_recs, val_recs = stratified_split(manifest.records, tc.val_fraction, tc.seed)
    params = model.trainable_parameters()
    frozen_before = {k: v.clone() for k, v in model.backbone.state_dict().items()}
    opt = torch.optim.Adam(params.values(), lr=tc.lr0)
    dtype = model.backbone.dtype
    size = cfg.backbone.image_size
    best_loss = math.inf
    result = TrainResult(None, None)
    log_path = out / "train_log.jsonl"
    with open(log_path, "w") as logf:
        step = 0
        for epoch in range(tc.epochs):
            lr = lr_at(epoch, tc.lr0)
            for group in opt.param_groups:
                group["lr"] = lr
            order = rng.permutation(len(train_recs))
            epoch_loss = 0.0
            for i in range(0, len(order), tc.batch_size):
                batch = [train_recs[j] for j in order[i:i + tc.batch_size]]
                images, masks, labels, names = collate(manifest, batch, size, dtype)
                pred = model(images, names)
                loss, parts = compute_loss(pred.image_score, pred.heatmap, labels, masks, tc)
                opt.zero_grad(set_to_none=True)
                loss.backward()
                for name, p in params.items():
                    if p.grad is not None and not torch.isfinite(p.grad).all():
                        raise NumericError(f"non-finite gradient for {name} at epoch {epoch} step {step}")
                opt.step()
                epoch_loss += loss.item() * len(batch)
                rec = {"epoch": epoch, "step": step, "lr": lr, "loss": loss.item(), **parts}
                logf.write(json.dumps(rec, sort_keys=True) + "\n")
                step += 1
            epoch_loss /= len(train_recs)
            val_loss = _evaluate_loss(model, manifest, val_recs, cfg)
            summary = {"epoch": epoch, "train_loss": epoch_loss, "val_loss": val_loss, "lr": lr}
            result.history.append(summary)
            logf.write(json.dumps(summary, sort_keys=True) + "\n")
            log.info("epoch %d: train %.4f val %.4f lr %.2e", epoch, epoch_loss, val_loss, lr)
            if tc.save_every and (epoch + 1) % tc.save_every == 0:
                model.save(out / f"epoch_{epoch:03d}")
            score = val_loss if val_recs else epoch_loss
            if score < best_loss:
                best_loss = score
                model.save(out / "best")
                result.best_checkpoint = out / "best"
    result.last_checkpoint = model.save(out / "last")
    if result.best_checkpoint is None:
        shutil.copytree(out / "last", out / "best", dirs_exist_ok=True)
        result.best_checkpoint = out / "best"
    for k, v in model.backbone.state_dict().items():
        if not torch.equal(v, frozen_before[k]):
            raise RuntimeError(f"frozen backbone tensor {k} changed during training")
    return result
