"""Self-prompting: CNN-derived and learned prompt tokens injected into early ViT layers."""

from __future__ import annotations

from typing import Sequence

import torch
from torch import nn

from afrclip.backbone import TokenInjectionHook


class VisualPromptBank(nn.Module):
    """K affine maps from the CNN feature to prompt tokens, plus K learned tokens."""

    def __init__(self, cnn_dim: int, width: int, k: int = 5, use_pv: bool = True, use_pl: bool = True):
        super().__init__()
        if k < 1:
            raise ValueError("k must be >= 1")
        self.k = k
        self.use_pv = use_pv
        self.use_pl = use_pl
        self.adapters = nn.ModuleList(nn.Linear(cnn_dim, width) for _ in range(k))
        self.p_l = nn.Parameter(torch.zeros(k, width))

    @property
    def active(self) -> bool:
        return self.use_pv or self.use_pl

    def prompts(self, f_cnn: torch.Tensor) -> torch.Tensor:
        """Final prompt tokens ``[..., K, width]`` for the enabled components."""
        p_v = make_visual_prompts(f_cnn, self)
        if not self.use_pv:
            p_v = torch.zeros_like(p_v)
        p_l = self.p_l if self.use_pl else torch.zeros_like(self.p_l)
        return combine_prompts(p_v, p_l.expand_as(p_v))


def make_visual_prompts(f_cnn: torch.Tensor, bank: VisualPromptBank) -> torch.Tensor:
    d_cnn = bank.adapters[0].in_features
    if f_cnn.shape[-1] != d_cnn:
        raise ValueError(f"CNN feature has length {f_cnn.shape[-1]}, adapters expect {d_cnn}")
    return torch.stack([lin(f_cnn) for lin in bank.adapters], dim=-2)


def combine_prompts(p_v: torch.Tensor, p_l: torch.Tensor) -> torch.Tensor:
    if p_v.shape != p_l.shape:
        raise ValueError(f"prompt shapes differ: {tuple(p_v.shape)} vs {tuple(p_l.shape)}")
    return p_v + p_l


def make_injection_hook(prompts: torch.Tensor, stages: Sequence[int] = (1,)) -> TokenInjectionHook:
    """Hook that overwrites the last K tokens with ``prompts`` (``[K, W]`` or ``[B, K, W]``)."""
    k = prompts.shape[-2]

    def inject(layer_index: int, tokens: torch.Tensor) -> torch.Tensor:
        n = tokens.shape[-2]
        if n < k + 1:
            raise ValueError(f"cannot replace {k} tokens of a {n}-token sequence and keep the class token")
        tail = prompts.to(tokens.dtype).expand(*tokens.shape[:-2], k, tokens.shape[-1])
        return torch.cat([tokens[..., : n - k, :], tail], dim=-2)

    return TokenInjectionHook(inject, stages)
