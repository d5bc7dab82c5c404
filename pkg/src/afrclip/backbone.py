"""Frozen CLIP-style encoders with per-stage taps and a token-injection hook.

The image encoder is a pre-LN ViT whose layers are split into equal stages;
the token state after the last layer of every stage is returned. Parameter
names follow the OpenAI CLIP state-dict layout (``visual.*``, ``transformer.*``,
``token_embedding`` ...) so an exported checkpoint can be loaded into the same
modules. The surrogate text side uses hashed whitespace word tokens.

Token index 0 is the class token throughout; patch tokens are 1..N_p in
row-major grid order.
"""

from __future__ import annotations

import hashlib
from collections import OrderedDict
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
from torch import nn

from afrclip import checkpoint
from afrclip.config import BackboneConfig

WORD_BUCKETS = 4094
SOT_TOKEN = WORD_BUCKETS
EOT_TOKEN = WORD_BUCKETS + 1
VOCAB_SIZE = WORD_BUCKETS + 2


def word_id(word: str) -> int:
    """Stable bucket for a lower-cased whitespace token."""
    digest = hashlib.sha256(word.lower().encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") % WORD_BUCKETS


class HookContractError(RuntimeError):
    """A token-injection hook changed the token count or width."""


class TokenInjectionHook:
    """Callable ``(layer_index, tokens) -> tokens`` applied before hooked layers.

    ``stages`` lists the 1-based stages whose layers receive injected inputs.
    Inside stage 1 the first layer is never hooked.
    """

    def __init__(self, fn: Callable[[int, torch.Tensor], torch.Tensor], stages: Sequence[int] = (1,)):
        self.fn = fn
        self.stages = tuple(stages)

    def __call__(self, layer_index: int, tokens: torch.Tensor) -> torch.Tensor:
        return self.fn(layer_index, tokens)


class QuickGELU(nn.Module):
    def forward(self, x):
        return x * torch.sigmoid(1.702 * x)


class ResidualAttentionBlock(nn.Module):
    def __init__(self, width: int, heads: int, attn_mask: torch.Tensor | None = None):
        super().__init__()
        self.attn = nn.MultiheadAttention(width, heads, batch_first=True)
        self.ln_1 = nn.LayerNorm(width)
        self.mlp = nn.Sequential(OrderedDict([
            ("c_fc", nn.Linear(width, width * 4)),
            ("gelu", QuickGELU()),
            ("c_proj", nn.Linear(width * 4, width)),
        ]))
        self.ln_2 = nn.LayerNorm(width)
        self.attn_mask = attn_mask

    def forward(self, x):
        y = self.ln_1(x)
        mask = None if self.attn_mask is None else self.attn_mask.to(x.dtype)
        x = x + self.attn(y, y, y, need_weights=False, attn_mask=mask)[0]
        return x + self.mlp(self.ln_2(x))


class Transformer(nn.Module):
    def __init__(self, width: int, layers: int, heads: int, attn_mask: torch.Tensor | None = None):
        super().__init__()
        self.resblocks = nn.ModuleList(ResidualAttentionBlock(width, heads, attn_mask) for _ in range(layers))


class VisionTransformer(nn.Module):
    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        w = cfg.width
        self.conv1 = nn.Conv2d(3, w, kernel_size=cfg.patch_size, stride=cfg.patch_size, bias=False)
        self.class_embedding = nn.Parameter(torch.zeros(w))
        self.positional_embedding = nn.Parameter(torch.zeros(cfg.n_patches + 1, w))
        self.ln_pre = nn.LayerNorm(w)
        self.transformer = Transformer(w, cfg.layers, cfg.heads)

    def embed(self, x: torch.Tensor) -> torch.Tensor:
        x = self.conv1(x)  # [B, w, g, g]
        x = x.flatten(2).transpose(1, 2)  # row-major patches
        cls = self.class_embedding.expand(x.shape[0], 1, -1)
        x = torch.cat([cls, x], dim=1) + self.positional_embedding
        return self.ln_pre(x)


class TextTransformer(nn.Module):
    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        tw = cfg.text_width
        mask = torch.full((cfg.context_length, cfg.context_length), float("-inf")).triu_(1)
        self.token_embedding = nn.Embedding(VOCAB_SIZE, tw)
        self.positional_embedding = nn.Parameter(torch.zeros(cfg.context_length, tw))
        self.transformer = Transformer(tw, cfg.text_layers, cfg.text_heads, attn_mask=mask)
        self.ln_final = nn.LayerNorm(tw)
        self.text_projection = nn.Parameter(torch.zeros(tw, cfg.embed_dim))


class CnnStem(nn.Module):
    """Three stride-2 convolutions and a global average pool."""

    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        c = cfg.cnn_dim
        self.conv1 = nn.Conv2d(3, max(c // 2, 1), 3, stride=2, padding=1)
        self.conv2 = nn.Conv2d(max(c // 2, 1), c, 3, stride=2, padding=1)
        self.conv3 = nn.Conv2d(c, c, 3, stride=2, padding=1)

    def forward(self, x):
        x = torch.relu(self.conv1(x))
        x = torch.relu(self.conv2(x))
        x = torch.relu(self.conv3(x))
        return x.mean(dim=(2, 3))


class Backbone(nn.Module):
    """Frozen image encoder, text encoder and CNN stem."""

    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.visual = VisionTransformer(cfg)
        self.text = TextTransformer(cfg)
        self.cnn = CnnStem(cfg)
        self.requires_grad_(False)
        self.to(torch.float64 if cfg.dtype == "float64" else torch.float32)

    @property
    def dtype(self) -> torch.dtype:
        return self.visual.class_embedding.dtype

    def train(self, mode: bool = True):
        # weights are frozen and there is no dropout / batch norm; stay in eval
        return super().train(False)

    # image side --------------------------------------------------------

    def _to_nchw(self, image) -> tuple[torch.Tensor, bool]:
        x = torch.as_tensor(image)
        single = x.dim() == 3
        if single:
            x = x.unsqueeze(0)
        s = self.cfg.image_size
        if x.dim() != 4 or tuple(x.shape[1:]) != (s, s, 3):
            raise ValueError(f"expected image [H, W, 3] or [B, H, W, 3] with H = W = {s}, got {tuple(x.shape)}")
        return x.permute(0, 3, 1, 2).to(self.dtype), single

    def normalize(self, image01) -> torch.Tensor:
        """Map channels-last pixels in [0, 1] to the encoder's input statistics."""
        x = torch.as_tensor(image01).to(self.dtype)
        mean = torch.tensor(self.cfg.pixel_mean, dtype=self.dtype)
        std = torch.tensor(self.cfg.pixel_std, dtype=self.dtype)
        return (x - mean) / std

    def hooked_layers(self, stages: Sequence[int]) -> set[int]:
        lps = self.cfg.layers_per_stage
        layers = set()
        for s in stages:
            if not 1 <= s <= self.cfg.stages:
                raise ValueError(f"stage {s} out of range 1..{self.cfg.stages}")
            first = (s - 1) * lps + 1
            layers.update(range(max(first, 2), s * lps + 1))
        return layers

    def encode_image(self, image, hook: TokenInjectionHook | None = None) -> list[torch.Tensor]:
        """Per-stage token matrices ``[B, N, width]`` (``[N, width]`` for one image).

        ``image`` is channels-last and already normalized (see :meth:`normalize`).
        """
        x, single = self._to_nchw(image)
        tokens = self.visual.embed(x)
        hooked = self.hooked_layers(hook.stages) if hook is not None else set()
        taps = set(self.cfg.tap_layers)
        out = []
        for idx, block in enumerate(self.visual.transformer.resblocks, start=1):
            if idx in hooked:
                new = hook(idx, tokens)
                if new.shape != tokens.shape:
                    raise HookContractError(
                        f"hook at layer {idx} returned {tuple(new.shape)}, expected {tuple(tokens.shape)}")
                tokens = new
            tokens = block(tokens)
            if idx in taps:
                out.append(tokens)
        return [t[0] for t in out] if single else out

    def extract_cnn_features(self, image) -> torch.Tensor:
        x, single = self._to_nchw(image)
        f = self.cnn(x)
        return f[0] if single else f

    # text side ---------------------------------------------------------

    def tokenize(self, prompt: str) -> torch.Tensor:
        words = prompt.split()
        if not words:
            raise ValueError("empty prompt")
        ids = [SOT_TOKEN, *(word_id(w) for w in words), EOT_TOKEN]
        if len(ids) > self.cfg.context_length:
            raise ValueError(
                f"prompt needs {len(ids)} tokens, context length is {self.cfg.context_length}")
        return torch.tensor(ids + [0] * (self.cfg.context_length - len(ids)), dtype=torch.long)

    def encode_text(self, prompt: str) -> torch.Tensor:
        ids = self.tokenize(prompt).unsqueeze(0)
        t = self.text
        x = t.token_embedding(ids).to(self.dtype) + t.positional_embedding
        for block in t.transformer.resblocks:
            x = block(x)
        x = t.ln_final(x)
        eot = int((ids[0] == EOT_TOKEN).nonzero()[0, 0])
        return x[0, eot] @ t.text_projection

    # weights -----------------------------------------------------------

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for name, tensor in sorted(self.state_dict().items()):
            h.update(name.encode())
            h.update(tensor.detach().cpu().numpy().astype("<f8").tobytes())
        return h.hexdigest()[:16]

    def named_tensors(self) -> dict[str, torch.Tensor]:
        return {k: v for k, v in self.state_dict().items()}


def _surrogate_init(model: Backbone, seed: int) -> None:
    """Deterministic weight scheme for the surrogate encoders.

    Every tensor is drawn in float64 from one generator seeded with ``seed``,
    visiting parameters in ``named_parameters`` order: matrices and conv
    kernels ~ N(0, 1/fan_in); biases zero; LayerNorm gains one; class,
    positional and token embeddings ~ N(0, width^-1/2); the text projection
    ~ N(0, text_width^-1/2).
    """
    gen = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for name, p in model.named_parameters():
            leaf = name.rsplit(".", 1)[-1]
            if ".ln_" in name or name.startswith("text.ln_final") or "ln_pre" in name:
                val = torch.ones(p.shape, dtype=torch.float64) if leaf == "weight" else torch.zeros(p.shape, dtype=torch.float64)
            elif leaf.endswith("bias"):
                val = torch.zeros(p.shape, dtype=torch.float64)
            elif leaf in ("class_embedding", "positional_embedding") or name.endswith("token_embedding.weight"):
                val = torch.randn(p.shape, generator=gen, dtype=torch.float64) * p.shape[-1] ** -0.5
            elif leaf == "text_projection":
                val = torch.randn(p.shape, generator=gen, dtype=torch.float64) * p.shape[0] ** -0.5
            else:
                fan_in = int(np.prod(p.shape[1:]))
                val = torch.randn(p.shape, generator=gen, dtype=torch.float64) * fan_in ** -0.5
            p.copy_(val)


def surrogate(cfg: BackboneConfig | None = None, seed: int | None = None) -> Backbone:
    cfg = cfg if cfg is not None else BackboneConfig.surrogate()
    model = Backbone(cfg)
    _surrogate_init(model, cfg.seed if seed is None else seed)
    return model


def _resize_positional(pos: np.ndarray, n_tokens: int) -> np.ndarray:
    """Bicubic resize of a ViT positional table to a new square patch grid."""
    import torch.nn.functional as F

    old = int(round((pos.shape[0] - 1) ** 0.5))
    new = int(round((n_tokens - 1) ** 0.5))
    grid = torch.from_numpy(np.array(pos[1:], dtype=np.float64)).reshape(1, old, old, -1).permute(0, 3, 1, 2)
    grid = F.interpolate(grid, size=(new, new), mode="bicubic", align_corners=False)
    grid = grid.permute(0, 2, 3, 1).reshape(new * new, -1).numpy()
    return np.concatenate([pos[:1], grid], axis=0)


def load_weights(source: str | Path, cfg: BackboneConfig | None = None) -> Backbone:
    """Build a backbone from ``"surrogate"``, ``"surrogate:<seed>"`` or a checkpoint directory.

    Checkpoint tensors are named as in :meth:`Backbone.named_tensors`. A
    positional table trained at a different resolution is resized to the
    configured patch grid; every other shape must match exactly.
    """
    cfg = cfg if cfg is not None else BackboneConfig.surrogate()
    src = str(source)
    if src == "surrogate" or src.startswith("surrogate:"):
        seed = int(src.split(":", 1)[1]) if ":" in src else cfg.seed
        return surrogate(cfg, seed)
    if src.startswith("file:"):
        src = src[len("file:"):]
    tensors = checkpoint.load_tensors(src)
    key = "visual.positional_embedding"
    if key in tensors and tensors[key].ndim == 2 and tensors[key].shape[0] != cfg.n_patches + 1 \
            and tensors[key].shape[1] == cfg.width:
        tensors[key] = _resize_positional(tensors[key], cfg.n_patches + 1)
    model = Backbone(cfg)
    checkpoint.assign_state(model, tensors)
    return model
