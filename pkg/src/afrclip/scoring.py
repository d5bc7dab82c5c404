"""Text-on-text scoring: image probability, per-patch heat maps and stage fusion."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from afrclip.core import bilinear_resize, cosine_similarity, softmax_pair


@dataclass
class AnomalyResult:
    image_score: float
    heatmap: np.ndarray  # [H, W] in (0, 1)
    per_stage_maps: np.ndarray  # [stages, H, W]


def image_score(f_t1_s, f_a, f_n, temperature: float = 1.0):
    """Abnormal probability of a rectified class-token embedding."""
    return softmax_pair(cosine_similarity(f_t1_s, f_a), cosine_similarity(f_t1_s, f_n), temperature)


def patch_probabilities(rect_patches: torch.Tensor, f_a: torch.Tensor, f_n: torch.Tensor,
                        temperature: float = 1.0) -> torch.Tensor:
    """``[..., N_p, D]`` rectified patch embeddings to ``[..., N_p]`` probabilities.

    ``f_a`` / ``f_n`` are ``[D]`` or ``[..., D]`` (one prototype pair per sample).
    """
    f_a = f_a.unsqueeze(-2)
    f_n = f_n.unsqueeze(-2)
    return softmax_pair(cosine_similarity(rect_patches, f_a), cosine_similarity(rect_patches, f_n), temperature)


def pixel_map(rect: torch.Tensor, f_a: torch.Tensor, f_n: torch.Tensor, grid_side: int,
              target: tuple[int, int], temperature: float = 1.0) -> torch.Tensor:
    """Heat map ``[..., H, W]`` from rectified embeddings ``[..., N, D]`` (row 0 = class token)."""
    patches = rect[..., 1:, :]
    if patches.shape[-2] != grid_side * grid_side:
        raise ValueError(f"{patches.shape[-2]} patch rows do not fill a {grid_side}x{grid_side} grid")
    probs = patch_probabilities(patches, f_a, f_n, temperature)
    grid = probs.reshape(*probs.shape[:-1], grid_side, grid_side)
    return bilinear_resize(grid, target)


def fuse_stages(maps):
    """Elementwise mean of per-stage maps (list, or stacked along dim/axis 0 / -3)."""
    if isinstance(maps, (list, tuple)):
        shapes = {tuple(m.shape) for m in maps}
        if len(shapes) != 1:
            raise ValueError(f"stage maps differ in shape: {sorted(shapes)}")
        if isinstance(maps[0], torch.Tensor):
            return torch.stack(list(maps)).mean(0)
        return np.mean(np.stack(maps), axis=0)
    return maps.mean(-3) if isinstance(maps, torch.Tensor) else np.mean(maps, axis=-3)


def infer(image, class_name: str, model) -> AnomalyResult:
    """Score one channels-last image with pixel values in [0, 1]."""
    with torch.no_grad():
        out = model(torch.as_tensor(np.asarray(image))[None], [class_name])
    return AnomalyResult(
        image_score=float(out.image_score[0]),
        heatmap=out.heatmap[0].double().numpy(),
        per_stage_maps=out.stage_maps[0].double().numpy(),
    )
