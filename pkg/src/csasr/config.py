"""Configuration dataclasses and the flat ``section.key = value`` file format."""
from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class CsaConfig:
    channels: int = 0  # 0: take the model's feat_channels
    reduction: int = 16
    spatial_kernel: int = 7

    @property
    def hidden(self) -> int:
        return max(1, self.channels // self.reduction)

    def validate(self) -> None:
        problems = []
        if self.channels < 1:
            problems.append(f"csa.channels must be >= 1 (got {self.channels})")
        if self.reduction < 1:
            problems.append(f"csa.reduction must be >= 1 (got {self.reduction})")
        if self.spatial_kernel < 1 or self.spatial_kernel % 2 == 0:
            problems.append(f"csa.spatial_kernel must be odd (got {self.spatial_kernel})")
        if problems:
            raise ConfigError("; ".join(problems))


@dataclass
class TransformerConfig:
    patch_h: int = 4
    patch_w: int = 4
    embed_dim: int = 64
    num_heads: int = 4
    num_encoders: int = 2
    num_decoders: int = 2
    sgfn_expand: int = 2
    use_positional_embedding: bool = True
    # learned positional table size in tokens; resampled when the token grid differs
    pos_grid_h: int = 4
    pos_grid_w: int = 4

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.num_heads

    @property
    def sgfn_hidden(self) -> int:
        return self.sgfn_expand * self.embed_dim

    def validate(self) -> None:
        problems = []
        if self.embed_dim < 1 or self.num_heads < 1 or self.embed_dim % self.num_heads:
            problems.append(f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}")
        if self.sgfn_hidden % 2:
            problems.append(f"sgfn hidden width {self.sgfn_hidden} must be even")
        if self.patch_h < 1 or self.patch_w < 1:
            problems.append("patch sizes must be >= 1")
        if self.num_encoders < 0 or self.num_decoders < 0:
            problems.append("layer counts must be >= 0")
        if self.pos_grid_h < 1 or self.pos_grid_w < 1:
            problems.append("positional grid must be >= 1")
        if problems:
            raise ConfigError("; ".join(problems))


@dataclass
class ModelConfig:
    scale: int = 2
    feat_channels: int = 16
    num_stages: int = 3
    in_channels: int = 3
    stage_residual: bool = True
    global_skip: bool = False
    csa: CsaConfig = field(default_factory=CsaConfig)
    transformer: TransformerConfig = field(default_factory=TransformerConfig)

    def resolved(self) -> ModelConfig:
        """Copy with ``csa.channels`` tied to ``feat_channels``."""
        cfg = dataclasses.replace(self, csa=dataclasses.replace(self.csa), transformer=dataclasses.replace(self.transformer))
        if cfg.csa.channels == 0:
            cfg.csa.channels = cfg.feat_channels
        return cfg

    def validate(self) -> None:
        problems = []
        if self.scale not in (2, 3, 4):
            problems.append(f"scale must be one of 2, 3, 4 (got {self.scale})")
        if self.num_stages < 1:
            problems.append(f"num_stages must be >= 1 (got {self.num_stages})")
        if self.feat_channels < 1:
            problems.append(f"feat_channels must be >= 1 (got {self.feat_channels})")
        if self.in_channels < 1:
            problems.append(f"in_channels must be >= 1 (got {self.in_channels})")
        if self.csa.channels not in (0, self.feat_channels):
            problems.append(f"csa.channels {self.csa.channels} != feat_channels {self.feat_channels}")
        for sub in (self.csa if self.csa.channels else dataclasses.replace(self.csa, channels=self.feat_channels), self.transformer):
            try:
                sub.validate()
            except ConfigError as exc:
                problems.append(str(exc))
        if problems:
            raise ConfigError("invalid model config: " + "; ".join(problems))


@dataclass
class TrainConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    epochs: int = 1500
    batch_x2: int = 10
    batch_x3: int = 8
    batch_x4: int = 6
    seed: int = 0
    patch_hr: int = 48
    iters_per_epoch: int = 0  # 0: one pass over the training split
    eval_interval: int = 1
    checkpoint_dir: str = "runs"
    augment: bool = False
    dtype: str = "float32"

    def batch_for(self, scale: int) -> int:
        return {2: self.batch_x2, 3: self.batch_x3, 4: self.batch_x4}[scale]

    def validate(self) -> None:
        problems = []
        if not 0 < self.beta1 < 1 or not 0 < self.beta2 < 1:
            problems.append(f"betas must lie in (0, 1) (got {self.beta1}, {self.beta2})")
        if self.lr < 0:
            problems.append(f"lr must be >= 0 (got {self.lr})")
        if self.dtype not in ("float32", "float64"):
            problems.append(f"dtype must be float32 or float64 (got {self.dtype})")
        if problems:
            raise ConfigError("invalid train config: " + "; ".join(problems))


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)


def toy_model_config(scale: int = 2) -> ModelConfig:
    return ModelConfig(scale=scale)


def full_model_config(scale: int = 3) -> ModelConfig:
    return ModelConfig(
        scale=scale,
        feat_channels=64,
        transformer=TransformerConfig(embed_dim=256, num_heads=8, num_encoders=8, num_decoders=1,
                                      pos_grid_h=12, pos_grid_w=12),
    )


# ---------------------------------------------------------------- flat text format

def _coerce(raw: str, typ, key: str):
    try:
        if typ is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        if typ is str:
            return raw.strip().strip('"')
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {typ.__name__}") from None
    raise ConfigError(f"{key}: unsupported field type {typ}")


def set_key(obj, key: str, raw: str) -> None:
    """Assign ``raw`` to the dotted field path ``key`` under ``obj``; unknown keys raise."""
    parts = key.strip().split(".")
    target = obj
    for i, part in enumerate(parts):
        if not dataclasses.is_dataclass(target):
            raise ConfigError(f"unknown config key {key!r}")
        hints = typing.get_type_hints(type(target))
        if part not in hints or part not in {f.name for f in dataclasses.fields(target)}:
            raise ConfigError(f"unknown config key {key!r}")
        if i == len(parts) - 1:
            typ = hints[part]
            if dataclasses.is_dataclass(typ):
                raise ConfigError(f"{key!r} names a section, not a value")
            setattr(target, part, _coerce(raw, typ, key))
        else:
            target = getattr(target, part)


def parse_config_text(text: str) -> list[tuple[str, str]]:
    pairs = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = line.split("=", 1)
        pairs.append((key.strip(), value.strip()))
    return pairs


def load_run_config(path: str | Path | None = None, overrides: typing.Iterable[str] = ()) -> RunConfig:
    """Defaults, then the file (if any), then ``key=value`` overrides."""
    cfg = RunConfig()
    if path is not None:
        for key, value in parse_config_text(Path(path).read_text()):
            set_key(cfg, key, value)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        set_key(cfg, key, value)
    return cfg


def dump_config(obj, prefix: str = "") -> list[str]:
    lines = []
    for f in dataclasses.fields(obj):
        value = getattr(obj, f.name)
        if dataclasses.is_dataclass(value):
            lines.extend(dump_config(value, f"{prefix}{f.name}."))
        else:
            lines.append(f"{prefix}{f.name} = {value}")
    return lines


def config_from_dict(cls, data: dict):
    """Rebuild a (nested) config dataclass from ``dataclasses.asdict`` output."""
    hints = typing.get_type_hints(cls)
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        typ = hints[f.name]
        kwargs[f.name] = config_from_dict(typ, data[f.name]) if dataclasses.is_dataclass(typ) else data[f.name]
    return cls(**kwargs)
