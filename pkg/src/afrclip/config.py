"""Run configuration: typed dataclasses and a flat ``section.key = value`` file format.

Example file::

    # full-line comments only
    backbone.source = surrogate
    sp.stages = 1, 2
    mpfa.m = 5
    train.epochs = 2

Values are parsed according to the type of the matching dataclass field, so the
file itself carries no type annotations. Unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, get_args, get_origin, get_type_hints


class ConfigError(ValueError):
    pass


@dataclass
class BackboneConfig:
    """Frozen encoder layout.

    The field defaults reproduce the published CLIP ViT-L/14@336 layout at
    518 x 518 input; :meth:`surrogate` gives the desk-scale model used for
    tests and the synthetic benchmark.
    """

    source: str = "surrogate"
    seed: int = 0
    image_size: int = 518
    patch_size: int = 14
    layers: int = 24
    stages: int = 4
    width: int = 1024
    heads: int = 16
    text_width: int = 768
    text_layers: int = 12
    text_heads: int = 12
    context_length: int = 77
    embed_dim: int = 768
    shared_dim: int = 768
    cnn_dim: int = 2048
    pixel_mean: tuple[float, ...] = (0.48145466, 0.4578275, 0.40821073)
    pixel_std: tuple[float, ...] = (0.26862954, 0.26130258, 0.27577711)
    dtype: str = "float32"

    @classmethod
    def surrogate(cls, **overrides) -> "BackboneConfig":
        base = dict(
            image_size=64, patch_size=8, layers=8, width=32, heads=2,
            text_width=32, text_layers=2, text_heads=2, embed_dim=32,
            shared_dim=32, cnn_dim=32,
        )
        base.update(overrides)
        return cls(**base)

    def validate(self) -> None:
        if self.stages < 1 or self.layers % self.stages:
            raise ConfigError(f"{self.layers} layers cannot be split into {self.stages} equal stages")
        if self.image_size % self.patch_size:
            raise ConfigError(f"image_size {self.image_size} not divisible by patch_size {self.patch_size}")
        if self.width % self.heads or self.text_width % self.text_heads:
            raise ConfigError("width must be divisible by the number of heads")
        if len(self.pixel_mean) != 3 or len(self.pixel_std) != 3:
            raise ConfigError("pixel_mean / pixel_std need three channels")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"unsupported dtype {self.dtype!r}")

    @property
    def layers_per_stage(self) -> int:
        return self.layers // self.stages

    @property
    def tap_layers(self) -> list[int]:
        """1-based index of the last layer of every stage."""
        return [self.layers_per_stage * (k + 1) for k in range(self.stages)]

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def n_patches(self) -> int:
        return self.grid * self.grid


@dataclass
class PromptConfig:
    normal: str = "a photo of a normal {c}"
    abnormal: str = "a photo of a defective {c}"
    stateless: str = "a photo of a {c}"


@dataclass
class CmfrConfig:
    enabled: bool = True
    hidden: int = 0  # 0 -> shared_dim // 2
    bounded_gate: bool = False
    use_mt: bool = False
    # what replaces the rectified embedding when CMFR is off:
    # "stateless" scores the bare stateless prompt, "image_text" scores the
    # adapted visual tokens directly against the prototypes
    disabled_mode: str = "stateless"


@dataclass
class SpConfig:
    enabled: bool = True
    k: int = 5
    stages: tuple[int, ...] = (1,)
    use_pv: bool = True
    use_pl: bool = True
    pl_init_std: float = 0.02


@dataclass
class MpfaConfig:
    enabled: bool = True
    m: int = 3


@dataclass
class ScoreConfig:
    average_image_stages: bool = False
    temperature: float = 1.0


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 4
    lr0: float = 0.001
    seed: int = 0
    lambda_focal: float = 1.0
    lambda_dice: float = 1.0
    focal_gamma: float = 2.0
    val_fraction: float = 0.1
    save_every: int = 1
    out_dir: str = "runs/train"


@dataclass
class DataConfig:
    train_root: str = ""
    train_id: str = ""
    test_root: str = ""
    test_id: str = ""


@dataclass
class EvalConfig:
    workers: int = 0  # 0 -> CPU count
    per_image_pixel: bool = False
    out_dir: str = "runs/eval"


@dataclass
class RunConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig.surrogate)
    prompts: PromptConfig = field(default_factory=PromptConfig)
    cmfr: CmfrConfig = field(default_factory=CmfrConfig)
    sp: SpConfig = field(default_factory=SpConfig)
    mpfa: MpfaConfig = field(default_factory=MpfaConfig)
    score: ScoreConfig = field(default_factory=ScoreConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self) -> None:
        self.backbone.validate()
        if self.sp.k < 1 or self.sp.k >= self.backbone.n_patches + 1:
            raise ConfigError(f"sp.k={self.sp.k} must be in [1, N)")
        bad = [s for s in self.sp.stages if not 1 <= s <= self.backbone.stages]
        if bad:
            raise ConfigError(f"sp.stages has out-of-range stage(s) {bad}")
        if self.mpfa.m < 1 or self.mpfa.m % 2 == 0 or self.mpfa.m > self.backbone.grid:
            raise ConfigError(f"mpfa.m={self.mpfa.m} must be odd and <= grid side {self.backbone.grid}")
        if self.cmfr.disabled_mode not in ("stateless", "image_text"):
            raise ConfigError(f"unknown cmfr.disabled_mode {self.cmfr.disabled_mode!r}")
        if self.score.temperature <= 0:
            raise ConfigError("score.temperature must be positive")
        if self.train.epochs < 1 or self.train.batch_size < 1:
            raise ConfigError("train.epochs and train.batch_size must be >= 1")

    # flat key access -------------------------------------------------

    def items(self):
        for sec in dataclasses.fields(self):
            obj = getattr(self, sec.name)
            for f in dataclasses.fields(obj):
                yield f"{sec.name}.{f.name}", getattr(obj, f.name)

    def set(self, key: str, value: Any) -> None:
        section, _, name = key.partition(".")
        obj = getattr(self, section, None)
        if obj is None or not dataclasses.is_dataclass(obj) or name not in {
            f.name for f in dataclasses.fields(obj)
        }:
            raise ConfigError(f"unknown config key {key!r}")
        hint = get_type_hints(type(obj))[name]
        setattr(obj, name, _coerce(value, hint, key))

    def replace(self, **flat) -> "RunConfig":
        """Deep copy with dotted-key overrides (``sp__k=2`` style keywords)."""
        new = copy_config(self)
        for k, v in flat.items():
            new.set(k.replace("__", "."), v)
        return new

    def dumps(self) -> str:
        lines = ["# afrclip run config"]
        current = None
        for key, value in self.items():
            section = key.split(".")[0]
            if section != current:
                lines.append("")
                current = section
            lines.append(f"{key} = {_format(value)}")
        return "\n".join(lines) + "\n"


def copy_config(cfg: RunConfig) -> RunConfig:
    return parse_config(cfg.dumps())


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    cfg = base if base is not None else RunConfig()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        cfg.set(key.strip(), value.strip())
    return cfg


def load_config(path: str | Path) -> RunConfig:
    return parse_config(Path(path).read_text())


def _format(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ", ".join(str(v) for v in value)
    return str(value)


def _coerce(value: Any, hint: Any, key: str) -> Any:
    if not isinstance(value, str):
        if get_origin(hint) is tuple:
            return tuple(value)
        return value
    try:
        if hint is bool:
            low = value.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return low in ("true", "1", "yes")
        if hint is int:
            return int(value)
        if hint is float:
            return float(value)
        if get_origin(hint) is tuple:
            (elem, *_rest) = get_args(hint)
            parts = [p.strip() for p in value.split(",") if p.strip()]
            return tuple(_coerce(p, elem, key) for p in parts)
        return value
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {value!r}") from exc
