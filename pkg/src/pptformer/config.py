"""Configuration records: model architecture, training recipe, full run config.

RunConfig merges the model and training sections with dataset paths and the
metric mode; it round-trips through YAML and accepts dotted-key overrides so
a run's effective config can be archived and replayed.
"""

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import InvalidArgumentError

ABLATION_VARIANTS = (
    "full",
    "no_parser",
    "degraded_as_parser",
    "no_intra",
    "no_inter",
    "both_intra",
    "both_inter",
    "sft_fusion",
)


@dataclass
class ModelConfig:
    base_channels: int = 32
    levels: int = 4
    blocks_per_level: tuple = (2, 3, 3, 4)
    heads_per_level: tuple = (1, 2, 4, 8)
    ppfn_expansion: int = 3
    normalize_qk: bool = True
    refinement_blocks: int = 2

    def __post_init__(self):
        self.blocks_per_level = tuple(self.blocks_per_level)
        self.heads_per_level = tuple(self.heads_per_level)
        if len(self.blocks_per_level) != self.levels:
            raise InvalidArgumentError(
                f"blocks_per_level has {len(self.blocks_per_level)} entries for {self.levels} levels"
            )
        if len(self.heads_per_level) != self.levels:
            raise InvalidArgumentError(
                f"heads_per_level has {len(self.heads_per_level)} entries for {self.levels} levels"
            )
        if self.base_channels % self.heads_per_level[0] != 0:
            raise InvalidArgumentError(
                f"base_channels {self.base_channels} not divisible by heads {self.heads_per_level[0]}"
            )
        for l, heads in enumerate(self.heads_per_level):
            if self.level_channels(l) % heads != 0:
                raise InvalidArgumentError(
                    f"level {l} width {self.level_channels(l)} not divisible by heads {heads}"
                )
        if self.refinement_blocks < 0:
            raise InvalidArgumentError("refinement_blocks must be >= 0")

    def level_channels(self, level):
        return self.base_channels * (2 ** level)

    @property
    def spatial_multiple(self):
        """Input spatial dims must be divisible by this (dyadic resampling)."""
        return 2 ** (self.levels - 1)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["blocks_per_level"] = list(d["blocks_per_level"])
        d["heads_per_level"] = list(d["heads_per_level"])
        return d

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(**d)
        except TypeError as e:
            raise InvalidArgumentError(f"bad model config: {e}") from e


@dataclass
class TrainConfig:
    lr_init: float = 5e-4
    lr_final: float = 1e-7
    total_steps: int = 2000
    patch_size: int = 64
    batch_size: int = 2
    seed: int = 0
    loss_fft_weight: float = 0.1
    ablation: str = "full"
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    grad_clip: float = 0.0  # 0 disables clipping
    checkpoint_every: int = 500
    log_every: int = 1

    def __post_init__(self):
        if self.lr_final >= self.lr_init:
            raise InvalidArgumentError("lr_final must be < lr_init")
        if self.loss_fft_weight < 0:
            raise InvalidArgumentError("loss_fft_weight must be >= 0")
        if self.patch_size <= 0 or self.patch_size % 2 != 0:
            raise InvalidArgumentError("patch_size must be even and positive")
        if self.total_steps < 0:
            raise InvalidArgumentError("total_steps must be >= 0")
        if self.batch_size <= 0:
            raise InvalidArgumentError("batch_size must be positive")
        if self.ablation not in ABLATION_VARIANTS:
            raise InvalidArgumentError(
                f"unknown ablation {self.ablation!r}; expected one of {ABLATION_VARIANTS}"
            )

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(**d)
        except TypeError as e:
            raise InvalidArgumentError(f"bad train config: {e}") from e


@dataclass
class DataConfig:
    train_manifest: str = ""
    val_manifest: str = ""
    parser_cache: str = ""
    n_segments: int = 6
    stub_seed: int = 0
    allow_stub: bool = True


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    metric_mode: str = "rgb"  # "rgb" or "luma"
    out_dir: str = "runs/default"

    def __post_init__(self):
        if self.metric_mode not in ("rgb", "luma"):
            raise InvalidArgumentError(f"metric_mode must be rgb or luma, got {self.metric_mode!r}")

    def to_dict(self):
        return {
            "model": dataclasses.asdict(self.model),
            "train": dataclasses.asdict(self.train),
            "data": dataclasses.asdict(self.data),
            "metric_mode": self.metric_mode,
            "out_dir": self.out_dir,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        try:
            return cls(
                model=ModelConfig(**d.pop("model", {})),
                train=TrainConfig(**d.pop("train", {})),
                data=DataConfig(**d.pop("data", {})),
                **d,
            )
        except TypeError as e:
            raise InvalidArgumentError(f"bad config: {e}") from e

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        sections = self.to_dict()
        for key in ("model", "train", "data"):
            for k, v in sections[key].items():
                if isinstance(v, tuple):
                    sections[key][k] = list(v)
        path.write_text(yaml.safe_dump(sections, sort_keys=False))

    @classmethod
    def load(cls, path):
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        data = yaml.safe_load(path.read_text())
        if not isinstance(data, dict):
            raise InvalidArgumentError(f"config file {path} is not a mapping")
        return cls.from_dict(data)

    def apply_overrides(self, overrides):
        """Apply "section.key=value" strings; values parse as YAML scalars."""
        d = self.to_dict()
        for item in overrides:
            if "=" not in item:
                raise InvalidArgumentError(f"override {item!r} is not KEY=VALUE")
            key, raw = item.split("=", 1)
            value = yaml.safe_load(raw)
            parts = key.strip().split(".")
            node = d
            for p in parts[:-1]:
                if p not in node or not isinstance(node[p], dict):
                    raise InvalidArgumentError(f"unknown config section {p!r} in {key!r}")
                node = node[p]
            if parts[-1] not in node:
                raise InvalidArgumentError(f"unknown config key {key!r}")
            node[parts[-1]] = value
        return RunConfig.from_dict(d)
