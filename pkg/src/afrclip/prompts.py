"""Normal / abnormal / stateless prompts and their adapted embeddings."""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from afrclip.config import PromptConfig

STATE_WORDS = frozenset({
    "normal", "abnormal", "defective", "defect", "damaged", "flawless", "perfect",
    "broken", "anomalous", "anomaly", "good", "bad", "faulty",
})


@dataclass(frozen=True)
class PromptTriplet:
    class_name: str
    normal: str
    abnormal: str
    stateless: str


@dataclass
class TextEmbeddings:
    f_n: torch.Tensor
    f_a: torch.Tensor
    f_s: torch.Tensor


def normalize_class_name(name: str) -> str:
    return " ".join(name.replace("_", " ").lower().split())


def build_prompt_triplet(class_name: str, templates: PromptConfig | None = None) -> PromptTriplet:
    templates = templates if templates is not None else PromptConfig()
    c = normalize_class_name(class_name)
    if not c:
        raise ValueError("class name is empty")
    for label in ("normal", "abnormal", "stateless"):
        tpl = getattr(templates, label)
        if tpl.count("{c}") != 1:
            raise ValueError(f"{label} template {tpl!r} must contain the placeholder {{c}} exactly once")
    words = set(templates.stateless.replace("{c}", " ").lower().split())
    if words & STATE_WORDS:
        raise ValueError(f"stateless template {templates.stateless!r} contains a state word")
    return PromptTriplet(
        class_name=c,
        normal=templates.normal.replace("{c}", c),
        abnormal=templates.abnormal.replace("{c}", c),
        stateless=templates.stateless.replace("{c}", c),
    )


class PromptCache:
    """Raw text-encoder outputs keyed by prompt string.

    The encoder is frozen, so outputs are computed once per prompt. When
    ``cache_dir`` (default: ``$AFR_CACHE``) is set, vectors are also stored
    on disk under the backbone fingerprint.
    """

    def __init__(self, backbone, cache_dir: str | Path | None = None):
        self.backbone = backbone
        cache_dir = cache_dir if cache_dir is not None else os.environ.get("AFR_CACHE")
        self.cache_dir = Path(cache_dir) if cache_dir else None
        self._mem: dict[str, torch.Tensor] = {}
        self._fp: str | None = None

    def _disk_path(self, prompt: str) -> Path:
        if self._fp is None:
            self._fp = self.backbone.fingerprint()
        key = hashlib.sha256(prompt.encode("utf-8")).hexdigest()[:24]
        return self.cache_dir / self._fp / f"{key}.npy"

    def __call__(self, prompt: str) -> torch.Tensor:
        hit = self._mem.get(prompt)
        if hit is not None:
            return hit
        vec = None
        if self.cache_dir is not None:
            path = self._disk_path(prompt)
            if path.is_file():
                vec = torch.from_numpy(np.load(path)).to(self.backbone.dtype)
        if vec is None:
            with torch.no_grad():
                vec = self.backbone.encode_text(prompt).detach()
            if self.cache_dir is not None:
                path.parent.mkdir(parents=True, exist_ok=True)
                np.save(path, vec.cpu().numpy())
        self._mem[prompt] = vec
        return vec


def embed_prompts(triplet: PromptTriplet, encode, adapter: nn.Module) -> TextEmbeddings:
    """Apply the shared text adapter to the three encoded prompts.

    ``encode`` maps a prompt string to its raw text-encoder vector (a
    :class:`PromptCache` or ``backbone.encode_text``).
    """
    raw = torch.stack([encode(triplet.normal), encode(triplet.abnormal), encode(triplet.stateless)])
    f = adapter(raw)
    return TextEmbeddings(f_n=f[0], f_a=f[1], f_s=f[2])
