"""Cross-modal feature rectification of the stateless text embedding.

For every token ``i`` the visual feature and the stateless embedding are
concatenated, passed through pointwise conv -> ReLU -> pointwise conv ->
sigmoid -> linear, and split into two weight maps. The first map gates the
visual feature, which is added to the stateless embedding as a residual.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn


@dataclass
class RectifiedTextField:
    f_ts: torch.Tensor  # [..., N, D] rectified stateless embeddings, row 0 = class token
    m_v: torch.Tensor  # [..., N, D]
    m_t: torch.Tensor  # [..., N, D] computed but unused downstream
    gate: torch.Tensor  # [..., N, 2D] sigmoid activations feeding the linear map


class RectificationBlock(nn.Module):
    """Weights of one rectification block (kernel-size-1 convs over the token axis)."""

    def __init__(self, dim: int, hidden: int = 0, bounded_gate: bool = False):
        super().__init__()
        hidden = hidden or max(dim // 2, 1)
        self.dim = dim
        self.bounded_gate = bounded_gate
        self.conv1 = nn.Conv1d(2 * dim, hidden, kernel_size=1)
        self.conv2 = nn.Conv1d(hidden, 2 * dim, kernel_size=1)
        self.linear = nn.Linear(2 * dim, 2 * dim)

    def forward(self, f_v: torch.Tensor, f_ts: torch.Tensor) -> RectifiedTextField:
        return rectify(f_v, f_ts, self)


def _pointwise(conv: nn.Conv1d, x: torch.Tensor) -> torch.Tensor:
    # x: [..., N, C_in] -> [..., N, C_out]
    return x @ conv.weight[:, :, 0].T + conv.bias


def rectify(f_v: torch.Tensor, f_ts: torch.Tensor, w: RectificationBlock) -> RectifiedTextField:
    """Rectify ``f_ts`` with every row of ``f_v``.

    ``f_v`` is ``[N, D]`` or ``[B, N, D]`` with the class token in row 0;
    ``f_ts`` is ``[D]`` or ``[B, D]``.
    """
    d = w.dim
    if f_v.shape[-1] != d or f_ts.shape[-1] != d:
        raise ValueError(f"dimension mismatch: f_v {tuple(f_v.shape)}, f_ts {tuple(f_ts.shape)}, block D={d}")
    ts = f_ts.unsqueeze(-2).expand_as(f_v)
    x = torch.cat([f_v, ts], dim=-1)
    h = torch.relu(_pointwise(w.conv1, x))
    h = _pointwise(w.conv2, h)
    if w.bounded_gate:
        gate = torch.sigmoid(w.linear(h))
        out = gate
    else:
        gate = torch.sigmoid(h)
        out = w.linear(gate)
    m_v, m_t = out[..., :d], out[..., d:]
    return RectifiedTextField(f_ts=ts + f_v * m_v, m_v=m_v, m_t=m_t, gate=gate)


def rectify_class_token(f_v_class: torch.Tensor, f_ts: torch.Tensor, w: RectificationBlock) -> torch.Tensor:
    """Single-row case of :func:`rectify` for the class token ``[D]`` / ``[B, D]``."""
    return rectify(f_v_class.unsqueeze(-2), f_ts, w).f_ts[..., 0, :]
