"""Numeric primitives shared by every stage of the pipeline.

Each function accepts torch tensors (differentiable path used by the model)
and, where it makes sense, numpy arrays (evaluation / export path backed by
:mod:`afrclip.kernels`).
"""

from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn.functional as F

from afrclip import kernels


class DegenerateInputError(ValueError):
    """Raised when an input makes an operation undefined (e.g. a zero vector)."""


def cosine_similarity(u, v, dim: int = -1):
    """Cosine of the angle between ``u`` and ``v`` along ``dim``.

    Broadcasts like elementwise multiplication. Zero-norm inputs raise
    :class:`DegenerateInputError` instead of producing NaN.
    """
    if not isinstance(u, torch.Tensor) or not isinstance(v, torch.Tensor):
        u = np.asarray(u, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        if u.shape[dim] != v.shape[dim]:
            raise ValueError(f"length mismatch: {u.shape[dim]} vs {v.shape[dim]}")
        nu = np.linalg.norm(u, axis=dim)
        nv = np.linalg.norm(v, axis=dim)
        if np.any(nu == 0) or np.any(nv == 0):
            raise DegenerateInputError("cosine similarity of a zero-norm vector")
        out = np.sum(u * v, axis=dim) / (nu * nv)
        return np.clip(out, -1.0, 1.0) if out.ndim else float(np.clip(out, -1.0, 1.0))
    if u.shape[dim] != v.shape[dim]:
        raise ValueError(f"length mismatch: {u.shape[dim]} vs {v.shape[dim]}")
    nu = torch.linalg.vector_norm(u, dim=dim)
    nv = torch.linalg.vector_norm(v, dim=dim)
    if bool((nu == 0).any()) or bool((nv == 0).any()):
        raise DegenerateInputError("cosine similarity of a zero-norm vector")
    return (u * v).sum(dim) / (nu * nv)


def softmax_pair(s_a, s_n, temperature: float = 1.0):
    """Probability of the first option under a two-way softmax.

    Computed as ``exp(a - m) / (exp(a - m) + exp(b - m))`` with ``m = max(a, b)``.
    """
    if isinstance(s_a, torch.Tensor) or isinstance(s_n, torch.Tensor):
        a = torch.as_tensor(s_a) / temperature
        b = torch.as_tensor(s_n) / temperature
        m = torch.maximum(a, b).detach()
        ea = torch.exp(a - m)
        return ea / (ea + torch.exp(b - m))
    a = np.asarray(s_a, dtype=np.float64) / temperature
    b = np.asarray(s_n, dtype=np.float64) / temperature
    m = np.maximum(a, b)
    ea = np.exp(a - m)
    out = ea / (ea + np.exp(b - m))
    return float(out) if out.ndim == 0 else out


def bilinear_resize(prob_map, target: tuple[int, int]):
    """Bilinear upsampling with corner-aligned sampling.

    ``prob_map`` is ``[..., h, w]`` (torch) or ``[h, w]`` (numpy). Equal source
    and target sizes return the input values unchanged.
    """
    H, W = int(target[0]), int(target[1])
    if H < 1 or W < 1:
        raise ValueError(f"target size must be positive, got {(H, W)}")
    if isinstance(prob_map, torch.Tensor):
        if prob_map.dim() < 2 or min(prob_map.shape[-2:]) < 1:
            raise ValueError(f"expected [..., h, w] map, got {tuple(prob_map.shape)}")
        if tuple(prob_map.shape[-2:]) == (H, W):
            return prob_map.clone()
        lead = prob_map.shape[:-2]
        flat = prob_map.reshape(-1, 1, *prob_map.shape[-2:])
        out = F.interpolate(flat, size=(H, W), mode="bilinear", align_corners=True)
        return out.reshape(*lead, H, W)
    src = np.ascontiguousarray(prob_map, dtype=np.float64)
    if src.ndim != 2 or min(src.shape) < 1:
        raise ValueError(f"expected [h, w] map, got {src.shape}")
    if src.shape == (H, W):
        return src.copy()
    return kernels.bilinear_align_corners(src, H, W)


def grid_side(n_tokens: int) -> int:
    side = math.isqrt(n_tokens)
    if side * side != n_tokens:
        raise ValueError(f"{n_tokens} patch tokens do not form a square grid")
    return side


def grid_reshape(tokens):
    """``[..., N_p, D]`` patch tokens to a row-major ``[..., s, s, D]`` grid."""
    side = grid_side(tokens.shape[-2])
    return tokens.reshape(*tokens.shape[:-2], side, side, tokens.shape[-1])


def grid_flatten(grid):
    """Inverse of :func:`grid_reshape`."""
    if grid.shape[-3] != grid.shape[-2]:
        raise ValueError(f"grid is not square: {tuple(grid.shape)}")
    return grid.reshape(*grid.shape[:-3], grid.shape[-3] * grid.shape[-2], grid.shape[-1])
