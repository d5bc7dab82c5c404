"""End-to-end detector: frozen backbone plus the trainable adapter stack."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import torch
from torch import nn

from afrclip import checkpoint
from afrclip.backbone import Backbone, load_weights
from afrclip.cmfr import RectificationBlock, rectify
from afrclip.config import RunConfig, load_config
from afrclip.mpfa import aggregate_tokens
from afrclip.prompts import PromptCache, TextEmbeddings, build_prompt_triplet, embed_prompts
from afrclip.scoring import fuse_stages, image_score, pixel_map
from afrclip.sp import VisualPromptBank, make_injection_hook

CONFIG_FILE = "config.txt"


@dataclass
class Prediction:
    image_score: torch.Tensor  # [B]
    heatmap: torch.Tensor  # [B, H, W]
    stage_maps: torch.Tensor  # [B, stages, H, W]
    stage_scores: torch.Tensor  # [B, stages] class-token probability per stage


class AFRCLIP(nn.Module):
    def __init__(self, cfg: RunConfig, backbone: Backbone | None = None):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        bb = cfg.backbone
        self.backbone = backbone if backbone is not None else load_weights(bb.source, bb)
        dtype = self.backbone.dtype
        d = bb.shared_dim
        # trainable parameters are initialised from the training seed, independent of global RNG state
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(cfg.train.seed)
            self.visual_adapters = nn.ModuleList(nn.Linear(bb.width, d) for _ in range(bb.stages))
            self.text_adapter = nn.Linear(bb.embed_dim, d)
            self.cmfr = nn.ModuleDict({
                f"stage{k + 1}": RectificationBlock(d, cfg.cmfr.hidden, cfg.cmfr.bounded_gate)
                for k in range(bb.stages)
            })
            self.sp = VisualPromptBank(bb.cnn_dim, bb.width, cfg.sp.k, cfg.sp.use_pv, cfg.sp.use_pl)
            nn.init.normal_(self.sp.p_l, std=cfg.sp.pl_init_std)
        for name, module in self.named_children():
            if name != "backbone":
                module.to(dtype)
        self.prompt_cache = PromptCache(self.backbone)

    # parameters ----------------------------------------------------------

    def trainable_parameters(self) -> dict[str, nn.Parameter]:
        return {n: p for n, p in self.named_parameters() if not n.startswith("backbone.")}

    def trainable_state(self) -> dict[str, torch.Tensor]:
        return {n: p.detach() for n, p in self.trainable_parameters().items()}

    def load_trainable(self, tensors) -> None:
        params = self.trainable_parameters()
        problems = [n for n in params if n not in tensors]
        problems += [f"{n}: {tuple(tensors[n].shape)} vs {tuple(p.shape)}"
                     for n, p in params.items() if n in tensors and tuple(tensors[n].shape) != tuple(p.shape)]
        if problems:
            raise checkpoint.CheckpointError("checkpoint does not match model: " + "; ".join(problems))
        with torch.no_grad():
            for n, p in params.items():
                p.copy_(torch.as_tensor(tensors[n]))

    def save(self, directory: str | Path) -> Path:
        directory = Path(directory)
        checkpoint.save_tensors(directory, self.trainable_state(), dtype=self.cfg.backbone.dtype)
        (directory / CONFIG_FILE).write_text(self.cfg.dumps())
        return directory

    @classmethod
    def load(cls, directory: str | Path, cfg: RunConfig | None = None, backbone: Backbone | None = None) -> "AFRCLIP":
        directory = Path(directory)
        if cfg is None:
            cfg = load_config(directory / CONFIG_FILE)
        model = cls(cfg, backbone)
        model.load_trainable(checkpoint.load_tensors(directory))
        return model

    def with_config(self, **overrides) -> "AFRCLIP":
        """Same weights, different toggles (sharing the frozen backbone)."""
        cfg = self.cfg.replace(**overrides)
        other = AFRCLIP(cfg, self.backbone)
        other.load_trainable(self.trainable_state())
        return other

    # pipeline ------------------------------------------------------------

    def text_embeddings(self, class_names: list[str]) -> TextEmbeddings:
        """Adapted prompt embeddings stacked per sample: each field ``[B, D]``."""
        cache = {}
        rows = []
        for name in class_names:
            if name not in cache:
                triplet = build_prompt_triplet(name, self.cfg.prompts)
                cache[name] = embed_prompts(triplet, self.prompt_cache, self.text_adapter)
            rows.append(cache[name])
        return TextEmbeddings(
            f_n=torch.stack([r.f_n for r in rows]),
            f_a=torch.stack([r.f_a for r in rows]),
            f_s=torch.stack([r.f_s for r in rows]),
        )

    def visual_tokens(self, images01: torch.Tensor) -> list[torch.Tensor]:
        """Adapted (and aggregated) per-stage tokens ``[B, N, D]``."""
        cfg = self.cfg
        x = self.backbone.normalize(images01)
        hook = None
        if cfg.sp.enabled and self.sp.active:
            prompts = self.sp.prompts(self.backbone.extract_cnn_features(x))
            hook = make_injection_hook(prompts, cfg.sp.stages)
        raw = self.backbone.encode_image(x, hook)
        feats = []
        for adapter, tokens in zip(self.visual_adapters, raw):
            f = adapter(tokens)
            if cfg.mpfa.enabled:
                f = aggregate_tokens(f, cfg.mpfa.m)
            feats.append(f)
        return feats

    def forward(self, images01: torch.Tensor, class_names: list[str]) -> Prediction:
        cfg = self.cfg
        images01 = torch.as_tensor(images01)
        if images01.dim() != 4 or len(class_names) != images01.shape[0]:
            raise ValueError("expected [B, H, W, 3] images and one class name per image")
        target = tuple(images01.shape[1:3])
        text = self.text_embeddings(class_names)
        t = cfg.score.temperature
        maps, scores = [], []
        for k, f_v in enumerate(self.visual_tokens(images01)):
            if cfg.cmfr.enabled:
                rect = rectify(f_v, text.f_s, self.cmfr[f"stage{k + 1}"]).f_ts
            elif cfg.cmfr.disabled_mode == "image_text":
                rect = f_v
            else:
                rect = text.f_s.unsqueeze(-2).expand_as(f_v)
            maps.append(pixel_map(rect, text.f_a, text.f_n, cfg.backbone.grid, target, t))
            scores.append(image_score(rect[:, 0, :], text.f_a, text.f_n, t))
        stage_maps = torch.stack(maps, dim=1)
        stage_scores = torch.stack(scores, dim=1)
        img = stage_scores.mean(1) if cfg.score.average_image_stages else stage_scores[:, -1]
        return Prediction(image_score=img, heatmap=fuse_stages(stage_maps), stage_maps=stage_maps,
                          stage_scores=stage_scores)


def build_model(cfg: RunConfig | None = None, backbone: Backbone | None = None) -> AFRCLIP:
    return AFRCLIP(cfg if cfg is not None else RunConfig(), backbone)
