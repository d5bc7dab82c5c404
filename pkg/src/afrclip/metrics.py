"""AUROC and max-F1 at image and pixel level, plus result tables."""

from __future__ import annotations

import csv
import io
from typing import Mapping, Sequence

import numpy as np

from afrclip import kernels


def _prepare(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise ValueError(f"{s.size} scores vs {y.size} labels")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    y = y.astype(np.uint8)
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == y.size:
        raise ValueError("both classes must be present")
    if not np.isfinite(s).all():
        raise ValueError("scores must be finite")
    order = np.argsort(-s, kind="stable")
    return np.ascontiguousarray(s[order]), np.ascontiguousarray(y[order])


def auroc_and_max_f1(scores, labels) -> tuple[float, float]:
    """Both metrics from one sort and one sweep."""
    s, y = _prepare(scores, labels)
    auc, f1 = kernels.ranked_sweep(s, y)
    return float(auc), float(f1)


def auroc(scores, labels) -> float:
    """Mann-Whitney AUROC; tied positive/negative pairs count one half."""
    return auroc_and_max_f1(scores, labels)[0]


def max_f1(scores, labels) -> float:
    """Best F1 over thresholds at each distinct score (predict positive if s >= t)."""
    return auroc_and_max_f1(scores, labels)[1]


def pixel_metrics(heatmaps: Sequence[np.ndarray], masks: Sequence[np.ndarray],
                  per_image: bool = False) -> tuple[float, float]:
    """Pixel-level AUROC and max-F1.

    By default all pixels of all images are pooled into one vector. With
    ``per_image`` the metrics are averaged over images that contain both
    normal and anomalous pixels.
    """
    if len(heatmaps) != len(masks):
        raise ValueError("need one mask per heat map")
    for h, m in zip(heatmaps, masks):
        if np.shape(h) != np.shape(m):
            raise ValueError(f"heat map {np.shape(h)} vs mask {np.shape(m)}")
    if not any(np.any(np.asarray(m) > 0) for m in masks):
        raise ValueError("no anomalous pixels in the dataset")
    if per_image:
        vals = []
        for h, m in zip(heatmaps, masks):
            m = np.asarray(m)
            if 0 < m.sum() < m.size:
                vals.append(auroc_and_max_f1(h, m))
        if not vals:
            raise ValueError("no image has both normal and anomalous pixels")
        arr = np.asarray(vals)
        return float(arr[:, 0].mean()), float(arr[:, 1].mean())
    scores = np.concatenate([np.asarray(h, dtype=np.float64).ravel() for h in heatmaps])
    labels = np.concatenate([(np.asarray(m) > 0).astype(np.uint8).ravel() for m in masks])
    return auroc_and_max_f1(scores, labels)


def domain_average(per_dataset: Mapping[str, tuple[float, float]]) -> tuple[float, float]:
    if not per_dataset:
        raise ValueError("no datasets to average")
    arr = np.asarray(list(per_dataset.values()), dtype=np.float64)
    return float(arr[:, 0].mean()), float(arr[:, 1].mean())


# reporting ----------------------------------------------------------------

CSV_HEADER = ("dataset", "level", "auroc", "max_f1")


def results_csv(rows: Sequence[tuple[str, str, float, float]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for name, level, auc, f1 in rows:
        writer.writerow([name, level, f"{100 * auc:.4f}", f"{100 * f1:.4f}"])
    return buf.getvalue()


def results_table(rows: Sequence[tuple[str, str, float, float]]) -> str:
    """Plain-text table, one line per dataset with image and pixel columns."""
    by_ds: dict[str, dict[str, tuple[float, float]]] = {}
    for name, level, auc, f1 in rows:
        by_ds.setdefault(name, {})[level] = (auc, f1)

    def cell(v):
        return "      -      " if v is None else f"({100 * v[0]:5.1f}, {100 * v[1]:5.1f})"

    lines = [f"{'Dataset':<16} {'Image (AUROC, max-F1)':<22} {'Pixel (AUROC, max-F1)':<22}"]
    for name, levels in by_ds.items():
        lines.append(f"{name:<16} {cell(levels.get('image')):<22} {cell(levels.get('pixel')):<22}")
    return "\n".join(lines) + "\n"
