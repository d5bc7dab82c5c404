"""Batch inference over a dataset manifest and metric rows for reporting."""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from contextlib import nullcontext
from dataclasses import dataclass

import numpy as np
import torch

from afrclip import metrics
from afrclip.dataio import DatasetManifest
from afrclip.training import collate

log = logging.getLogger(__name__)


@dataclass
class DatasetPredictions:
    sample_ids: list[str]
    labels: np.ndarray
    scores: np.ndarray
    heatmaps: list[np.ndarray]
    masks: list[np.ndarray]


def resolve_workers(workers: int) -> int:
    return workers if workers > 0 else (os.cpu_count() or 1)


def predict_dataset(model, manifest: DatasetManifest, batch_size: int = 8, workers: int = 1) -> DatasetPredictions:
    """Run the model over every record. ``workers`` > 1 decodes images in a thread pool."""
    recs = manifest.records
    size = model.cfg.backbone.image_size
    scores, heatmaps, masks = [], [], []
    workers = resolve_workers(workers)
    pool_ctx = ThreadPoolExecutor(workers) if workers > 1 else nullcontext()
    with torch.no_grad(), pool_ctx as pool:
        for i in range(0, len(recs), batch_size):
            batch = recs[i:i + batch_size]
            images, m, _, names = collate(manifest, batch, size, model.backbone.dtype, pool)
            pred = model(images, names)
            scores.append(pred.image_score.double().numpy())
            heatmaps.extend(pred.heatmap.double().numpy())
            masks.extend(m.numpy().astype(np.uint8))
    return DatasetPredictions(
        sample_ids=[r.sample_id for r in recs],
        labels=np.array([r.label for r in recs], dtype=np.uint8),
        scores=np.concatenate(scores) if scores else np.zeros(0),
        heatmaps=heatmaps,
        masks=masks,
    )


def metric_rows(preds: DatasetPredictions, name: str, has_masks: bool = True,
                per_image_pixel: bool = False) -> list[tuple[str, str, float, float]]:
    rows = []
    if 0 < preds.labels.sum() < preds.labels.size:
        rows.append((name, "image", *metrics.auroc_and_max_f1(preds.scores, preds.labels)))
    else:
        log.warning("%s: image-level metrics need both normal and anomalous images", name)
    if has_masks and any(m.any() for m in preds.masks):
        rows.append((name, "pixel", *metrics.pixel_metrics(preds.heatmaps, preds.masks, per_image_pixel)))
    else:
        log.warning("%s: no ground-truth masks, reporting image level only", name)
    return rows


def evaluate(model, manifest: DatasetManifest, name: str | None = None, per_image_pixel: bool = False,
             batch_size: int = 8, workers: int = 1) -> list[tuple[str, str, float, float]]:
    preds = predict_dataset(model, manifest, batch_size, workers)
    return metric_rows(preds, name or manifest.dataset_id, manifest.has_masks, per_image_pixel)
