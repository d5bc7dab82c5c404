"""Multi-patch feature aggregation: stride-1 m x m mean over the patch grid.

Border cells average over their in-bounds neighbours only, so a constant grid
stays constant. The class token has no grid position and is never pooled.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F

from afrclip import kernels
from afrclip.core import grid_side


def _check(n_p: int, m: int) -> int:
    side = grid_side(n_p)
    if m < 1 or m % 2 == 0:
        raise ValueError(f"window size must be odd and positive, got {m}")
    if m > side:
        raise ValueError(f"window size {m} exceeds grid side {side}")
    return side


def aggregate(patch_tokens, m: int = 3):
    """Smooth ``[..., N_p, D]`` patch tokens over m x m grid neighbourhoods.

    Torch tensors go through ``avg_pool2d`` (differentiable); numpy arrays
    through the compiled box-mean kernel.
    """
    side = _check(patch_tokens.shape[-2], m)
    if m == 1:
        return patch_tokens.clone() if isinstance(patch_tokens, torch.Tensor) else np.array(patch_tokens)
    if isinstance(patch_tokens, torch.Tensor):
        lead = patch_tokens.shape[:-2]
        d = patch_tokens.shape[-1]
        x = patch_tokens.reshape(-1, side, side, d).permute(0, 3, 1, 2)
        y = F.avg_pool2d(x, kernel_size=m, stride=1, padding=m // 2, count_include_pad=False)
        return y.permute(0, 2, 3, 1).reshape(*lead, side * side, d)
    arr = np.asarray(patch_tokens, dtype=np.float64)
    lead = arr.shape[:-2]
    d = arr.shape[-1]
    flat = arr.reshape(-1, side, side, d)
    out = np.stack([kernels.box_mean(np.ascontiguousarray(g), m) for g in flat])
    return out.reshape(*lead, side * side, d)


def aggregate_tokens(tokens: torch.Tensor, m: int = 3) -> torch.Tensor:
    """Apply :func:`aggregate` to rows 1.. of ``[..., N, D]`` and keep the class token."""
    return torch.cat([tokens[..., :1, :], aggregate(tokens[..., 1:, :], m)], dim=-2)
